#include "hojabr/desugar.hpp"

#include "hojabr/syntax.hpp"

namespace hojabr {

namespace {

// Desugaring walks the constraint tree bottom-up. Expressions carry no
// sugar, so they pass through unchanged.

Result<ConstraintPtr> desugar_constraint(const ConstraintPtr& c);

Result<ConstraintPtr> desugar_children(const Constraint& c) {
  return std::visit(
      [&](const auto& node) -> Result<ConstraintPtr> {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Conjunction>) {
          auto l = desugar_constraint(node.lhs);
          if (!l) return l.errors();
          auto r = desugar_constraint(node.rhs);
          if (!r) return r.errors();
          return make_conjunction(l.take(), r.take());
        } else if constexpr (std::is_same_v<T, Disjunction>) {
          auto l = desugar_constraint(node.lhs);
          if (!l) return l.errors();
          auto r = desugar_constraint(node.rhs);
          if (!r) return r.errors();
          return make_disjunction(l.take(), r.take());
        } else if constexpr (std::is_same_v<T, Negation>) {
          auto inner = desugar_constraint(node.inner);
          if (!inner) return inner.errors();
          return make_negation(inner.take());
        } else if constexpr (std::is_same_v<T, NestedRule>) {
          auto sub = desugar(*node.rule);
          if (!sub) return sub.errors();
          return make_nested_rule(sub.take());
        } else {
          // AtomAccess, Comparison, CeiCall, BoolConst: leaf forms.
          return std::make_shared<const Constraint>(c);
        }
      },
      c.node);
}

Result<ConstraintPtr> desugar_constraint(const ConstraintPtr& c) {
  if (!c) return ConstraintPtr{};
  Result<ConstraintPtr> core = std::visit(
      [&](const auto& node) -> Result<ConstraintPtr> {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, ComparisonChain>) {
          // e1 θ1 e2 θ2 e3 ...  ->  e1 θ1 e2, e2 θ2 e3, ...
          std::vector<ConstraintPtr> parts;
          for (size_t i = 0; i < node.ops.size(); ++i)
            parts.push_back(make_comparison(node.operands[i], node.ops[i],
                                            node.operands[i + 1]));
          return make_conjunction(std::move(parts));
        } else if constexpr (std::is_same_v<T, InList>) {
          // x in [t1, ..., tn]  ->  x = t1 or ... or x = tn
          std::vector<ConstraintPtr> parts;
          for (const auto& item : node.items)
            parts.push_back(make_comparison(node.value, CompareOp::Eq, item));
          return make_disjunction(std::move(parts));
        } else if constexpr (std::is_same_v<T, MatchCase>) {
          // match t case t1 -> C1 ...  ->  (t = t1, C1) or ...
          for (size_t i = 0; i < node.cases.size(); ++i)
            for (size_t j = i + 1; j < node.cases.size(); ++j)
              if (equal(node.cases[i].first, node.cases[j].first))
                return error(diag::DuplicateMatchCase,
                             "duplicate match case on literal " +
                                 print(node.cases[i].first),
                             "", c->line, c->col);
          std::vector<ConstraintPtr> parts;
          for (const auto& [lit, body] : node.cases) {
            auto d = desugar_constraint(body);
            if (!d) return d.errors();
            parts.push_back(make_conjunction(
                make_comparison(node.scrutinee, CompareOp::Eq, lit), d.take()));
          }
          return make_disjunction(std::move(parts));
        } else if constexpr (std::is_same_v<T, TypeAscription>) {
          // x : T  ->  type(x, T)
          return make_cei("type", {{make_variable(node.var),
                                    make_variable(node.typeName)}});
        } else {
          return desugar_children(*c);
        }
      },
      c->node);
  if (!core) return core;
  // Keep the source parenthesization and location on the rewritten node.
  auto out = std::make_shared<Constraint>(*core.value());
  out->parenthesized = c->parenthesized || out->parenthesized;
  out->line = c->line;
  out->col = c->col;
  return ConstraintPtr{out};
}

}  // namespace

Result<ConstraintPtr> desugar(const ConstraintPtr& constraint) {
  return desugar_constraint(constraint);
}

Result<Rule> desugar(const Rule& rule) {
  auto c = desugar_constraint(rule.constraint);
  if (!c) {
    Diagnostics errs = c.errors();
    for (auto& e : errs) {
      if (e.rule.empty()) e.rule = rule.head.relation;
      if (e.line == 0) {
        e.line = rule.line;
        e.col = rule.col;
      }
    }
    return errs;
  }
  Rule out = rule;
  out.constraint = c.take();
  return out;
}

Result<Program> desugar(const Program& program) {
  Program out;
  out.declarations = program.declarations;
  for (const auto& r : program.rules) {
    auto d = desugar(r);
    if (!d) return d.errors();
    out.rules.push_back(d.take());
  }
  return out;
}

namespace {

bool constraint_desugared(const ConstraintPtr& c) {
  if (!c) return true;
  return std::visit(
      [&](const auto& node) -> bool {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, ComparisonChain> ||
                      std::is_same_v<T, InList> ||
                      std::is_same_v<T, MatchCase> ||
                      std::is_same_v<T, TypeAscription>) {
          return false;
        } else if constexpr (std::is_same_v<T, Conjunction> ||
                             std::is_same_v<T, Disjunction>) {
          return constraint_desugared(node.lhs) && constraint_desugared(node.rhs);
        } else if constexpr (std::is_same_v<T, Negation>) {
          return constraint_desugared(node.inner);
        } else if constexpr (std::is_same_v<T, NestedRule>) {
          return constraint_desugared(node.rule->constraint);
        } else {
          return true;
        }
      },
      c->node);
}

}  // namespace

bool is_desugared(const Program& program) {
  for (const auto& r : program.rules)
    if (!constraint_desugared(r.constraint)) return false;
  for (const auto& d : program.declarations)
    if (!constraint_desugared(d)) return false;
  return true;
}

}  // namespace hojabr
