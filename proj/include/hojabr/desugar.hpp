#pragma once

// Sugar elimination: rewrites comparison chains, `in` lists, `match`
// blocks and `x: T` ascriptions into core constraints. Structure-local —
// never merges, reorders or deletes rules — and idempotent.

#include "hojabr/ast.hpp"
#include "hojabr/diagnostics.hpp"

namespace hojabr {

// Errors: a `match` with two cases on structurally identical literals.
Result<Program> desugar(const Program& program);
Result<Rule> desugar(const Rule& rule);
Result<ConstraintPtr> desugar(const ConstraintPtr& constraint);

// True when no sugar nodes remain anywhere in the program.
bool is_desugared(const Program& program);

}  // namespace hojabr
