#pragma once

// Static verification of Hojabr programs:
//   * type inference over variables, relation columns and payloads,
//   * safety analysis producing an executable binding plan per rule,
//   * stratification of negation / aggregation / imperative actions,
//   * integrity-constraint verification against loaded data.
//
// All analyses work on desugared programs (see desugar.hpp); check_program
// desugars internally so callers can hand it surface syntax.

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "hojabr/ast.hpp"
#include "hojabr/diagnostics.hpp"
#include "hojabr/relation.hpp"

namespace hojabr {

// ----------------------------------------------------------------- types

enum class ScalarType { Int, Float, String, Bool };

const char* to_string(ScalarType t);
ScalarType scalar_type_of(const Scalar& s);
// Recognizes type names in `type(x, T)` constraints: int, float (alias
// real), string, bool.
std::optional<ScalarType> type_from_name(const std::string& name);

// Everything the checker knows about one relation, merged from program
// declarations, rule heads/bodies, and (optionally) loaded data.
struct RelationInfo {
  int totalArity = -1;            // flattened key arity; -1 = unknown
  std::vector<int> levels;        // grouping, when known (head shape or data)
  std::vector<std::optional<ScalarType>> colTypes;  // flattened key columns
  std::optional<ScalarType> payloadType;            // Bool for set relations
  std::optional<std::vector<std::int64_t>> declaredShape;  // card(R, n, m)
  std::optional<std::int64_t> declaredCap;                 // card(R, n)
  bool ordered = false;           // order(...) requested for this relation
  std::vector<std::string> orderCols;
  bool definedByRule = false;
  bool presentInData = false;
  std::optional<std::int64_t> dataSize;  // tuple count when loaded
  std::vector<std::string> attrs;        // column names, when known
};

struct TypeEnv {
  std::map<std::string, RelationInfo> relSchemas;
  // Scalar variable types, one map per rule (variables are rule-scoped).
  std::vector<std::map<std::string, ScalarType>> varTypes;
  // Comparison constraints touching each rule's variables; collected for
  // dynamic enforcement, never solved statically.
  std::vector<std::vector<ConstraintPtr>> refinements;
};

// ----------------------------------------------------------- binding plan

struct BindingPlan;
using PlanPtr = std::shared_ptr<const BindingPlan>;

// One flattened key position of a generating access.
struct AccessSlot {
  enum class Mode {
    Ground,  // evaluate `expr` and require the stored key to equal it
    Bind     // bind `var` to the stored key at this position
  };
  Mode mode = Mode::Bind;
  ExprPtr expr;     // Ground only; may reference vars bound by earlier slots
  std::string var;  // Bind only; wildcards allowed
};

// Enumerate a relation (or bound relation variable): atoms `R(e...)` with
// unbound variables and payload-binding accesses `v = X(e...)`.
struct StepGenAccess {
  std::string relation;
  bool relationIsVar = false;
  std::vector<AccessSlot> slots;  // flattened; a level-boundary prefix for atoms
  std::string payloadVar;         // bind payload to this var ("" = none)
  ExprPtr payloadEq;              // non-null: require payload == expr
  bool prefixOnly = false;        // atom over a proper prefix of the key
};

// v in [lo, hi) over integers; strictness per side.
struct StepGenRange {
  std::string var;
  ExprPtr lo, hi;
  bool loStrict = false;  // true: lo < v, false: lo <= v
  bool hiStrict = true;   // true: v < hi, false: v <= hi
};

// v = ground expression (includes ground-key payload lookups, which read
// the semiring zero when the key is absent).
struct StepGenEquality {
  std::string var;
  ExprPtr expr;
};

// In-rule `card(X, e...)`: bind unbound dimension variables from the stored
// relation's shape, check ground ones, skip wildcards.
struct StepCardBind {
  std::string relation;
  bool relationIsVar = false;
  std::vector<ExprPtr> args;
};

// Any fully-ground constraint used as a pass/fail test.
struct StepFilter {
  ConstraintPtr constraint;
};

// not(...) — passes when the inner plan admits no satisfying extension.
struct StepNegation {
  PlanPtr inner;
};

// (Rv := X(e...)) — bind Rv to the sub-relation at the ground key prefix;
// fails when that sub-relation is absent/empty.
struct StepNestedBind {
  std::string relVar;
  std::string relation;
  bool relationIsVar = false;
  std::vector<ExprPtr> keys;
};

// Branch plans executed from the current binding; emits the union of branch
// results projected onto `visible` (deduplicated).
struct StepDisjunct {
  std::vector<PlanPtr> branches;
  std::vector<std::string> visible;  // bound by every branch, sorted
};

using PlanStep =
    std::variant<StepGenAccess, StepGenRange, StepGenEquality, StepCardBind,
                 StepFilter, StepNegation, StepNestedBind, StepDisjunct>;

struct BindingPlan {
  std::vector<PlanStep> steps;
  // Head directives lifted out of the body: in-rule `card(H, ...)` on the
  // rule's own head declares the output shape (or cap, single argument);
  // in-rule `order(v...)` asks for ordered materialization by those head
  // variables.
  std::vector<ExprPtr> headCardArgs;
  bool headOrdered = false;
  std::vector<std::string> headOrderVars;
};

// Human-readable one-line-per-step rendering (for tests and --explain).
std::string print_plan(const BindingPlan& plan);

// -------------------------------------------------------- stratification

struct DepEdge {
  std::string from, to;  // `to`'s rules read `from`
  bool negative = false; // via negation, aggregation, or imperative action
};

struct Stratification {
  // Rule indexes grouped per stratum, in evaluation order. Each stratum is
  // one strongly connected component of the head-relation dependency graph.
  std::vector<std::vector<int>> strata;
  std::vector<int> ruleStratum;              // rule index -> stratum index
  // Longest-path dependency level per relation; base (EDB) relations sit at
  // level 0, so a five-rule chain occupies levels 0..5.
  std::map<std::string, int> relationLevel;
  std::vector<DepEdge> edges;                // deduplicated, sorted
  std::set<int> recursiveStrata;             // strata containing a cycle
};

// ------------------------------------------------------------- integrity

struct IntegrityViolation {
  std::string code;      // I001..I005
  std::string relation;
  std::string message;   // includes witness tuples
};

// ------------------------------------------------------------- top level

Result<TypeEnv> infer_types(const Program& p, const Database* db = nullptr);

// Plans one rule of the typed program. ruleIndex selects the rule's row in
// env.varTypes.
Result<BindingPlan> plan_bindings(const Rule& rule, const TypeEnv& env,
                                  int ruleIndex);

Result<Stratification> stratify(const Program& p);

// Verifies fdep/pkey/unique/card/order declarations against loaded data.
// Relations absent from the database are skipped (rules may define them).
std::vector<IntegrityViolation> check_integrity(
    const Database& db, const std::vector<ConstraintPtr>& decls);

struct CheckOptions {
  bool strict = false;  // escalate integrity violations to errors
};

struct CheckedProgram {
  Program program;  // desugared
  TypeEnv env;
  std::vector<PlanPtr> plans;  // one per rule
  Stratification strat;
  std::vector<Diagnostic> warnings;
};

// Full pipeline: desugar, infer types, plan every rule, stratify, validate
// declarations, and (with a database) check integrity constraints.
Result<CheckedProgram> check_program(const Program& p,
                                     const Database* db = nullptr,
                                     CheckOptions opts = {});

}  // namespace hojabr
