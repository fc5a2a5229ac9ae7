#include "hojabr/ast.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace hojabr {

const char* to_string(Action a) {
  switch (a) {
    case Action::Define: return ":=";
    case Action::Add: return "+=";
    case Action::Remove: return "-=";
    case Action::Replace: return "<-";
  }
  return "?";
}

const char* to_string(BinOp op) {
  switch (op) {
    case BinOp::Add: return "+";
    case BinOp::Sub: return "-";
    case BinOp::Mul: return "*";
    case BinOp::Div: return "/";
  }
  return "?";
}

const char* to_string(CompareOp op) {
  switch (op) {
    case CompareOp::Eq: return "=";
    case CompareOp::Ne: return "!=";
    case CompareOp::Lt: return "<";
    case CompareOp::Le: return "<=";
    case CompareOp::Gt: return ">";
    case CompareOp::Ge: return ">=";
  }
  return "?";
}

// ------------------------------------------------------------- factories

ExprPtr make_variable(std::string name) {
  return std::make_shared<Expression>(Expression{Variable{std::move(name)}});
}

ExprPtr make_literal(Scalar value) {
  return std::make_shared<Expression>(Expression{Literal{std::move(value)}});
}

ExprPtr make_binary(BinOp op, ExprPtr lhs, ExprPtr rhs) {
  return std::make_shared<Expression>(
      Expression{BinaryExpr{op, std::move(lhs), std::move(rhs)}});
}

ExprPtr make_negate(ExprPtr operand) {
  return std::make_shared<Expression>(Expression{NegateExpr{std::move(operand)}});
}

ExprPtr make_access_expr(Access a) {
  return std::make_shared<Expression>(Expression{std::move(a)});
}

ExprPtr make_eei(std::string name, std::vector<ExprPtr> args) {
  return std::make_shared<Expression>(
      Expression{EeiCall{std::move(name), std::move(args)}});
}

ConstraintPtr make_conjunction(ConstraintPtr lhs, ConstraintPtr rhs) {
  return std::make_shared<Constraint>(
      Constraint{Conjunction{std::move(lhs), std::move(rhs)}});
}

ConstraintPtr make_conjunction(std::vector<ConstraintPtr> parts) {
  if (parts.empty()) return make_bool(true);
  ConstraintPtr acc = parts.back();
  for (auto it = parts.rbegin() + 1; it != parts.rend(); ++it)
    acc = make_conjunction(*it, acc);
  return acc;
}

ConstraintPtr make_disjunction(ConstraintPtr lhs, ConstraintPtr rhs) {
  return std::make_shared<Constraint>(
      Constraint{Disjunction{std::move(lhs), std::move(rhs)}});
}

ConstraintPtr make_disjunction(std::vector<ConstraintPtr> parts) {
  if (parts.empty()) return make_bool(false);
  ConstraintPtr acc = parts.back();
  for (auto it = parts.rbegin() + 1; it != parts.rend(); ++it)
    acc = make_disjunction(*it, acc);
  return acc;
}

ConstraintPtr make_negation(ConstraintPtr inner) {
  return std::make_shared<Constraint>(Constraint{Negation{std::move(inner)}});
}

ConstraintPtr make_atom(Access a) {
  return std::make_shared<Constraint>(Constraint{AtomAccess{std::move(a)}});
}

ConstraintPtr make_comparison(ExprPtr lhs, CompareOp op, ExprPtr rhs) {
  return std::make_shared<Constraint>(
      Constraint{Comparison{std::move(lhs), op, std::move(rhs)}});
}

ConstraintPtr make_cei(std::string name, std::vector<std::vector<ExprPtr>> argLists) {
  return std::make_shared<Constraint>(
      Constraint{CeiCall{std::move(name), std::move(argLists)}});
}

ConstraintPtr make_nested_rule(Rule r) {
  auto c = std::make_shared<Constraint>(
      Constraint{NestedRule{std::make_shared<Rule>(std::move(r))}});
  // Nested rules are always written parenthesized.
  auto mut = std::make_shared<Constraint>(*c);
  mut->parenthesized = true;
  return mut;
}

ConstraintPtr make_bool(bool value) {
  return std::make_shared<Constraint>(Constraint{BoolConst{value}});
}

ConstraintPtr with_parens(ConstraintPtr c) {
  auto copy = std::make_shared<Constraint>(*c);
  copy->parenthesized = true;
  return copy;
}

std::vector<ConstraintPtr> flatten_conjunction(const ConstraintPtr& c) {
  std::vector<ConstraintPtr> out;
  if (!c) return out;
  if (const auto* conj = std::get_if<Conjunction>(&c->node)) {
    auto l = flatten_conjunction(conj->lhs);
    auto r = flatten_conjunction(conj->rhs);
    out.insert(out.end(), l.begin(), l.end());
    out.insert(out.end(), r.begin(), r.end());
  } else {
    out.push_back(c);
  }
  return out;
}

// ------------------------------------------------------------- equality

namespace {

bool scalar_equal(const Scalar& a, const Scalar& b) {
  if (a.index() != b.index()) return false;
  return a == b;  // exact: 3 (int) != 3.0 (float) by index already
}

bool arglists_equal(const std::vector<std::vector<ExprPtr>>& a,
                    const std::vector<std::vector<ExprPtr>>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    for (size_t j = 0; j < a[i].size(); ++j)
      if (!equal(a[i][j], b[i][j])) return false;
  }
  return true;
}

}  // namespace

bool equal(const Access& a, const Access& b) {
  return a.relation == b.relation && arglists_equal(a.argLists, b.argLists);
}

bool equal(const ExprPtr& a, const ExprPtr& b) {
  if (!a || !b) return !a && !b;
  return equal(*a, *b);
}

bool equal(const Expression& a, const Expression& b) {
  if (a.node.index() != b.node.index()) return false;
  return std::visit(
      [&](const auto& lhs) -> bool {
        using T = std::decay_t<decltype(lhs)>;
        const auto& rhs = std::get<T>(b.node);
        if constexpr (std::is_same_v<T, Access>) {
          return equal(lhs, rhs);
        } else if constexpr (std::is_same_v<T, Variable>) {
          return lhs.name == rhs.name;
        } else if constexpr (std::is_same_v<T, Literal>) {
          return scalar_equal(lhs.value, rhs.value);
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          return lhs.op == rhs.op && equal(lhs.lhs, rhs.lhs) &&
                 equal(lhs.rhs, rhs.rhs);
        } else if constexpr (std::is_same_v<T, NegateExpr>) {
          return equal(lhs.operand, rhs.operand);
        } else {
          static_assert(std::is_same_v<T, EeiCall>);
          if (lhs.name != rhs.name || lhs.args.size() != rhs.args.size())
            return false;
          for (size_t i = 0; i < lhs.args.size(); ++i)
            if (!equal(lhs.args[i], rhs.args[i])) return false;
          return true;
        }
      },
      a.node);
}

bool equal(const ConstraintPtr& a, const ConstraintPtr& b) {
  if (!a || !b) return !a && !b;
  return equal(*a, *b);
}

bool equal(const Constraint& a, const Constraint& b) {
  if (a.node.index() != b.node.index()) return false;
  return std::visit(
      [&](const auto& lhs) -> bool {
        using T = std::decay_t<decltype(lhs)>;
        const auto& rhs = std::get<T>(b.node);
        if constexpr (std::is_same_v<T, Conjunction> ||
                      std::is_same_v<T, Disjunction>) {
          return equal(lhs.lhs, rhs.lhs) && equal(lhs.rhs, rhs.rhs);
        } else if constexpr (std::is_same_v<T, Negation>) {
          return equal(lhs.inner, rhs.inner);
        } else if constexpr (std::is_same_v<T, AtomAccess>) {
          return equal(lhs.access, rhs.access);
        } else if constexpr (std::is_same_v<T, Comparison>) {
          return lhs.op == rhs.op && equal(lhs.lhs, rhs.lhs) &&
                 equal(lhs.rhs, rhs.rhs);
        } else if constexpr (std::is_same_v<T, CeiCall>) {
          return lhs.name == rhs.name && arglists_equal(lhs.argLists, rhs.argLists);
        } else if constexpr (std::is_same_v<T, NestedRule>) {
          return equal(*lhs.rule, *rhs.rule);
        } else if constexpr (std::is_same_v<T, BoolConst>) {
          return lhs.value == rhs.value;
        } else if constexpr (std::is_same_v<T, ComparisonChain>) {
          if (lhs.ops != rhs.ops || lhs.operands.size() != rhs.operands.size())
            return false;
          for (size_t i = 0; i < lhs.operands.size(); ++i)
            if (!equal(lhs.operands[i], rhs.operands[i])) return false;
          return true;
        } else if constexpr (std::is_same_v<T, InList>) {
          if (!equal(lhs.value, rhs.value) || lhs.items.size() != rhs.items.size())
            return false;
          for (size_t i = 0; i < lhs.items.size(); ++i)
            if (!equal(lhs.items[i], rhs.items[i])) return false;
          return true;
        } else if constexpr (std::is_same_v<T, MatchCase>) {
          if (!equal(lhs.scrutinee, rhs.scrutinee) ||
              lhs.cases.size() != rhs.cases.size())
            return false;
          for (size_t i = 0; i < lhs.cases.size(); ++i) {
            if (!equal(lhs.cases[i].first, rhs.cases[i].first)) return false;
            if (!equal(lhs.cases[i].second, rhs.cases[i].second)) return false;
          }
          return true;
        } else {
          static_assert(std::is_same_v<T, TypeAscription>);
          return lhs.var == rhs.var && lhs.typeName == rhs.typeName;
        }
      },
      a.node);
}

bool equal(const Rule& a, const Rule& b) {
  if (a.action != b.action) return false;
  if (!equal(a.head, b.head)) return false;
  if (static_cast<bool>(a.expr) != static_cast<bool>(b.expr)) return false;
  if (a.expr && !equal(a.expr, b.expr)) return false;
  return equal(a.constraint, b.constraint);
}

bool equal(const Program& a, const Program& b) {
  if (a.rules.size() != b.rules.size() ||
      a.declarations.size() != b.declarations.size())
    return false;
  for (size_t i = 0; i < a.rules.size(); ++i)
    if (!equal(a.rules[i], b.rules[i])) return false;
  for (size_t i = 0; i < a.declarations.size(); ++i)
    if (!equal(a.declarations[i], b.declarations[i])) return false;
  return true;
}

// ------------------------------------------------------------- variables

bool is_wildcard(const std::string& name) {
  return name.size() >= 2 && name[0] == '_' && name[1] == '#';
}

namespace {

void collect_expr_vars(const ExprPtr& e, std::set<std::string>& out);

void collect_access_vars(const Access& a, std::set<std::string>& out) {
  for (const auto& list : a.argLists)
    for (const auto& e : list) collect_expr_vars(e, out);
}

void collect_expr_vars(const ExprPtr& e, std::set<std::string>& out) {
  if (!e) return;
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Variable>) {
          if (!is_wildcard(node.name)) out.insert(node.name);
        } else if constexpr (std::is_same_v<T, Access>) {
          collect_access_vars(node, out);
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          collect_expr_vars(node.lhs, out);
          collect_expr_vars(node.rhs, out);
        } else if constexpr (std::is_same_v<T, NegateExpr>) {
          collect_expr_vars(node.operand, out);
        } else if constexpr (std::is_same_v<T, EeiCall>) {
          for (const auto& arg : node.args) collect_expr_vars(arg, out);
        }
      },
      e->node);
}

void collect_constraint_vars(const ConstraintPtr& c, std::set<std::string>& vars,
                             std::set<std::string>& relVars) {
  if (!c) return;
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Conjunction> ||
                      std::is_same_v<T, Disjunction>) {
          collect_constraint_vars(node.lhs, vars, relVars);
          collect_constraint_vars(node.rhs, vars, relVars);
        } else if constexpr (std::is_same_v<T, Negation>) {
          collect_constraint_vars(node.inner, vars, relVars);
        } else if constexpr (std::is_same_v<T, AtomAccess>) {
          collect_access_vars(node.access, vars);
        } else if constexpr (std::is_same_v<T, Comparison>) {
          collect_expr_vars(node.lhs, vars);
          collect_expr_vars(node.rhs, vars);
        } else if constexpr (std::is_same_v<T, CeiCall>) {
          for (const auto& list : node.argLists)
            for (const auto& e : list) collect_expr_vars(e, vars);
        } else if constexpr (std::is_same_v<T, NestedRule>) {
          relVars.insert(node.rule->head.relation);
          collect_access_vars(node.rule->head, vars);
          if (node.rule->expr) collect_expr_vars(node.rule->expr, vars);
          collect_constraint_vars(node.rule->constraint, vars, relVars);
        } else if constexpr (std::is_same_v<T, ComparisonChain>) {
          for (const auto& e : node.operands) collect_expr_vars(e, vars);
        } else if constexpr (std::is_same_v<T, InList>) {
          collect_expr_vars(node.value, vars);
          for (const auto& e : node.items) collect_expr_vars(e, vars);
        } else if constexpr (std::is_same_v<T, MatchCase>) {
          collect_expr_vars(node.scrutinee, vars);
          for (const auto& [lit, body] : node.cases) {
            collect_expr_vars(lit, vars);
            collect_constraint_vars(body, vars, relVars);
          }
        } else if constexpr (std::is_same_v<T, TypeAscription>) {
          vars.insert(node.var);
        }
        // BoolConst: nothing
      },
      c->node);
}

}  // namespace

std::set<std::string> relation_variables(const Rule& rule) {
  std::set<std::string> vars, relVars;
  collect_constraint_vars(rule.constraint, vars, relVars);
  return relVars;
}

std::set<std::string> free_variables(const Rule& rule) {
  std::set<std::string> vars, relVars;
  collect_access_vars(rule.head, vars);
  if (rule.expr) collect_expr_vars(rule.expr, vars);
  collect_constraint_vars(rule.constraint, vars, relVars);
  for (const auto& rv : relVars) vars.erase(rv);
  return vars;
}

// ------------------------------------------------------------ registries

namespace {
constexpr std::array kCeiNames = {"type",  "card", "deg",   "order",
                                  "fdep",  "pkey", "unique"};
constexpr std::array kAggregateEeis = {"avg", "sum", "min", "max", "median",
                                       "softmax"};
constexpr std::array kScalarEeis = {"sin", "cos", "relu"};
}  // namespace

bool is_cei_name(const std::string& name) {
  return std::find(kCeiNames.begin(), kCeiNames.end(), name) != kCeiNames.end();
}

bool is_aggregate_eei(const std::string& name) {
  return std::find(kAggregateEeis.begin(), kAggregateEeis.end(), name) !=
         kAggregateEeis.end();
}

bool is_scalar_eei(const std::string& name) {
  return std::find(kScalarEeis.begin(), kScalarEeis.end(), name) !=
         kScalarEeis.end();
}

bool is_eei_name(const std::string& name) {
  return is_aggregate_eei(name) || is_scalar_eei(name);
}

}  // namespace hojabr
