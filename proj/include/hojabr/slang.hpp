#pragma once

// Slangs: named syntactic fragments of the language, each defined as a set
// of decidable predicates over rules (allowed constraint forms, allowed
// expression forms, whole-rule structural rules). A program is a member of
// a slang when every rule satisfies every predicate. Lowering passes are
// hand-written program-to-program transforms between slangs (join
// strategies, tensor storage formats) plus a reverse lift for the join
// encodings, which are bijective by construction.

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hojabr/ast.hpp"
#include "hojabr/diagnostics.hpp"

namespace hojabr {

// One admissible node shape. A constraint/expression node is admitted when
// any form in the list accepts it; `description` is the printable predicate.
template <typename Node>
struct SlangForm {
  std::string description;
  std::function<bool(const Node&)> accepts;
};

// Whole-rule predicate; returns a violation message or nullopt.
struct SlangStructuralRule {
  std::string description;
  std::function<std::optional<std::string>(const Rule&)> check;
};

struct SlangSpec {
  std::string name;
  std::string summary;
  std::vector<SlangForm<Constraint>> constraintForms;
  std::vector<SlangForm<Expression>> expressionForms;
  std::vector<SlangStructuralRule> structuralRules;
};

// The shipped catalog: logical-declarative, logical-join, physical-join,
// dense-tensor, sparse-tensor, sql-core, einsum-core.
const std::vector<SlangSpec>& slang_catalog();
const SlangSpec* find_slang(std::string_view name);

// Human-readable predicate list (one bullet per form / structural rule).
std::string describe_slang(const SlangSpec& s);

struct SlangViolation {
  std::string rule;     // printable head of the offending rule
  std::string message;  // names the offending construct
};

struct SlangReport {
  bool member = false;
  std::vector<SlangViolation> violations;
};

// Membership test. Desugars internally (idempotent), so raw parses are
// accepted; sugar that fails to desugar reports as a violation.
SlangReport validate(const Program& p, const SlangSpec& s);

// ------------------------------------------------------------- lowerings

enum class JoinStrategy { Nlj, Hash, SortMerge, Generic, Free, Diamond };
std::optional<JoinStrategy> join_strategy_from(std::string_view name);
const char* to_string(JoinStrategy s);

// logical-join -> physical-join. Rules with fewer than two relation atoms
// pass through unchanged. Errors: S001 when the input is outside the
// logical-join slang, S002 when the strategy does not apply to a rule's
// shape (e.g. diamond on a two-relation rule).
Result<Program> lower_join(const Program& p, JoinStrategy strategy);

enum class TensorFormat { Coo, Csr, Dense };
std::optional<TensorFormat> tensor_format_from(std::string_view name);
const char* to_string(TensorFormat f);

// dense-tensor -> sparse-tensor (coo, csr) or identity (dense). Errors:
// S001 when the input is outside the dense-tensor slang, S002 when a rule
// is not in product form or csr meets a tensor of order != 2.
Result<Program> lower_tensor(const Program& p, TensorFormat format);

// physical-join -> logical-join: recognizes the shapes the join lowerings
// emit (hash/sort-merge builds, trie builds with nested-rule bindings,
// primed equality renamings) and reconstitutes the logical rule. Errors:
// S001 when the input is outside the physical-join slang, S003 when a
// build or binding shape is not recognized.
Result<Program> lift_join(const Program& p);

// A registered pass for introspection and the CLI.
struct LoweringPass {
  std::string name;  // "join:hash", "tensor:csr", "lift:join"
  std::string sourceSlang;
  std::string targetSlang;
  std::string freshNamePrefix;  // used only when a natural name collides
  std::function<Result<Program>(const Program&)> transform;
};
const std::vector<LoweringPass>& lowering_passes();

}  // namespace hojabr
