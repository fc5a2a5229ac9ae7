#pragma once

// Evaluation of checked Hojabr programs.
//
// Evaluation interprets each rule's BindingPlan to enumerate satisfying
// bindings, derives head entries from them, and combines derivations for
// the same head key with the payload semiring's addition (unless the head
// expression is an aggregate, which groups instead). Strata run in order;
// a stratum's `:=` rules iterate to a fixpoint (naive re-derivation or
// semi-naive delta substitution), after which its imperative actions
// (`+=`, `-=`, `<-`) apply in textual order.
//
// The whole pipeline is deterministic: relation iteration is key-sorted,
// strata and rules run in a fixed order, and instrumentation counters are
// exact, so two runs over the same inputs produce identical databases and
// reports.

#include <cstdint>
#include <string>
#include <vector>

#include "hojabr/ast.hpp"
#include "hojabr/check.hpp"
#include "hojabr/diagnostics.hpp"
#include "hojabr/relation.hpp"

namespace hojabr {

struct EvalConfig {
  enum class Mode {
    Naive,     // each round re-derives every rule from the full relations
    SemiNaive  // rounds after the first substitute the previous round's
               // delta for one recursive occurrence per rule variant
  };
  Mode mode = Mode::SemiNaive;
  // Escalates refinement violations to errors and warns when a
  // real-valued disjunction's branches overlap on a head key (the
  // overlapping derivations add, which is usually unintended).
  bool strict = false;
  std::int64_t maxIterations = 10000;  // per recursive stratum
  bool derivationCounting = false;     // extra self-checks + full report
};

// Per-rule instrumentation. `enumerations` counts candidate entries
// considered by generator steps (scans, probes, range values) — the
// work metric used to compare join strategies; `derivations` counts
// satisfying bindings reaching the head.
struct RuleStats {
  std::string head;
  std::int64_t derivations = 0;
  std::int64_t enumerations = 0;
  std::int64_t outputSize = 0;  // head entry count after the rule's stratum
};

struct RunReport {
  std::vector<RuleStats> rules;                // indexed by rule
  std::vector<std::int64_t> strataIterations;  // fixpoint rounds per stratum
  double wallSeconds = 0.0;
  std::string to_json() const;  // stable field order
};

struct RunResult {
  Database db;
  RunReport report;
  std::vector<Diagnostic> warnings;
};

// Scalar and aggregate extension functions. Scalar EEIs (sin, cos, relu)
// take exactly one argument; aggregates (sum, avg, min, max, median)
// receive the grouped multiset. median of an empty group is an error;
// sum of an empty group is 0; the other aggregates have no identity and
// reject empty groups. softmax is per-element and exposed separately.
Result<Scalar> eval_eei(const std::string& name,
                        const std::vector<Scalar>& args);
std::vector<double> eval_softmax(const std::vector<double>& values);

// Evaluates one rule of a checked program against `db`, returning the
// delta it derives for its head (head cap/order directives applied).
// `stats`, when given, accumulates instrumentation.
Result<RelPtr> eval_rule(const CheckedProgram& cp, int ruleIndex,
                         const Database& db, const EvalConfig& cfg = {},
                         RuleStats* stats = nullptr);

// Applies an action's delta to the database: Define/Add merge via the
// semiring, Remove subtracts (boolean removes, natural is saturating),
// Replace discards prior contents. Acting on an absent relation installs
// the delta (Remove is a no-op).
void apply_action(Database& db, const std::string& head,
                  const RelationValue& delta, Action action);

// Executes a checked program: strata in order, declarative rules to
// fixpoint, imperative actions after. The input database is not modified;
// the result holds the final state plus the run report.
Result<RunResult> run_checked(const CheckedProgram& cp, const Database& db,
                              EvalConfig cfg = {});

// Convenience: check_program + run_checked. Check diagnostics propagate.
Result<RunResult> run_program(const Program& p, const Database& db,
                              EvalConfig cfg = {});

}  // namespace hojabr
