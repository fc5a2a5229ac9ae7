#pragma once

// Random well-formed AST generator for parser/printer round-trip property
// tests. Generates every node kind (including sugar forms) under the
// structural conventions the parser itself maintains:
//   - expression-position accesses carry at least one argument list
//     (a bare name would re-parse as a variable);
//   - nested rules have the lookup shape `(Rv := X(e...))`;
//   - no wildcards (their fresh numbering is parse-order dependent);
//   - integer literals are non-negative — negative values appear as
//     unary minus, which is how the parser builds them.

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hojabr/ast.hpp"

namespace hojabr::test {

class AstGen {
 public:
  explicit AstGen(std::uint32_t seed) : rng_(seed) {}

  Program program() {
    Program p;
    int decls = pick(3);
    for (int i = 0; i < decls; ++i) p.declarations.push_back(declaration());
    int rules = 1 + pick(4);
    for (int i = 0; i < rules; ++i) p.rules.push_back(rule());
    return p;
  }

  Rule rule() {
    Rule r;
    r.head = head_access();
    r.action = static_cast<Action>(pick(4));
    if (pick(3) == 0) r.expr = expr(3);
    r.constraint = constraint(4);
    return r;
  }

  ExprPtr expr(int depth) {
    if (depth <= 0) return leaf_expr();
    switch (pick(8)) {
      case 0: case 1: return leaf_expr();
      case 2: return make_access_expr(access(depth - 1));
      case 3:
        return make_binary(static_cast<BinOp>(pick(4)), expr(depth - 1),
                           expr(depth - 1));
      case 4: return make_negate(expr(depth - 1));
      case 5: {
        const char* names[] = {"sum", "avg", "min", "max", "median",
                               "softmax", "relu", "sin", "cos"};
        return make_eei(names[pick(9)], {expr(depth - 1)});
      }
      default: return leaf_expr();
    }
  }

  ConstraintPtr constraint(int depth) {
    if (depth <= 0) return leaf_constraint();
    switch (pick(12)) {
      case 0:
        return make_conjunction(constraint(depth - 1), constraint(depth - 1));
      case 1:
        return make_disjunction(constraint(depth - 1), constraint(depth - 1));
      case 2: return make_negation(constraint(depth - 1));
      case 3: return nested_rule();
      case 4: return in_list(depth - 1);
      case 5: return chain(depth - 1);
      case 6: return match_case(depth - 1);
      case 7: return ascription();
      case 8: return cei();
      default: return leaf_constraint();
    }
  }

 private:
  std::mt19937 rng_;

  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }

  std::string var_name() {
    const char* pool[] = {"a", "b", "c", "x", "y", "i", "j", "k",
                          "v", "w", "b'", "n", "m", "p1"};
    return pool[pick(14)];
  }

  std::string rel_name() {
    const char* pool[] = {"R", "S", "T", "Qx", "B2", "Rel", "Zn"};
    return pool[pick(7)];
  }

  Scalar scalar() {
    switch (pick(4)) {
      case 0: return static_cast<std::int64_t>(pick(100));
      case 1: {
        const double pool[] = {0.5, 1.5, 2.0, 3.25, 0.0};
        return pool[pick(5)];
      }
      case 2: {
        const char* pool[] = {"ab", "x y", "", "a\"b", "l1\nl2"};
        return std::string(pool[pick(5)]);
      }
      default: return pick(2) == 0;
    }
  }

  ExprPtr leaf_expr() {
    if (pick(2) == 0) return make_variable(var_name());
    return make_literal(scalar());
  }

  Access access(int depth) {
    Access a;
    a.relation = rel_name();
    int levels = 1 + pick(2);
    for (int l = 0; l < levels; ++l) {
      std::vector<ExprPtr> args;
      int n = pick(3);
      for (int i = 0; i < n; ++i)
        args.push_back(depth > 0 && pick(4) == 0 ? expr(depth - 1)
                                                 : leaf_expr());
      a.argLists.push_back(std::move(args));
    }
    return a;
  }

  Access head_access() {
    Access a;
    a.relation = rel_name();
    int levels = 1 + pick(2);
    for (int l = 0; l < levels; ++l) {
      std::vector<ExprPtr> args;
      int n = pick(4);
      for (int i = 0; i < n; ++i) args.push_back(make_variable(var_name()));
      a.argLists.push_back(std::move(args));
    }
    return a;
  }

  ConstraintPtr leaf_constraint() {
    switch (pick(4)) {
      case 0: return make_atom(access(0));
      case 1: return make_bool(pick(2) == 0);
      default:
        return make_comparison(leaf_expr(), static_cast<CompareOp>(pick(6)),
                               leaf_expr());
    }
  }

  ConstraintPtr nested_rule() {
    Rule r;
    r.head = Access{var_name() + "r", {}};
    r.action = Action::Define;
    r.constraint = make_atom(access(1));
    return make_nested_rule(std::move(r));
  }

  ConstraintPtr wrap(Constraint c) {
    return std::make_shared<const Constraint>(std::move(c));
  }

  ConstraintPtr in_list(int depth) {
    InList n;
    n.value = pick(2) == 0 ? make_variable(var_name()) : expr(depth);
    int items = 1 + pick(3);
    for (int i = 0; i < items; ++i) n.items.push_back(expr(depth));
    Constraint c;
    c.node = std::move(n);
    return wrap(std::move(c));
  }

  ConstraintPtr chain(int depth) {
    ComparisonChain n;
    int ops = 2 + pick(2);
    n.operands.push_back(expr(depth));
    for (int i = 0; i < ops; ++i) {
      n.ops.push_back(static_cast<CompareOp>(pick(6)));
      n.operands.push_back(expr(depth));
    }
    Constraint c;
    c.node = std::move(n);
    return wrap(std::move(c));
  }

  ConstraintPtr match_case(int depth) {
    MatchCase n;
    n.scrutinee = make_variable(var_name());
    int cases = 1 + pick(3);
    for (int i = 0; i < cases; ++i)
      n.cases.emplace_back(make_literal(static_cast<std::int64_t>(i)),
                           constraint(depth));
    Constraint c;
    c.node = std::move(n);
    return wrap(std::move(c));
  }

  ConstraintPtr ascription() {
    TypeAscription n;
    n.var = var_name();
    const char* types[] = {"int", "float", "string", "bool"};
    n.typeName = types[pick(4)];
    Constraint c;
    c.node = std::move(n);
    return wrap(std::move(c));
  }

  ConstraintPtr cei() {
    switch (pick(5)) {
      case 0:
        return make_cei("card", {{make_variable(rel_name()),
                                  make_literal(static_cast<std::int64_t>(
                                      1 + pick(5)))}});
      case 1:
        return make_cei("order", {{make_variable(var_name())}});
      case 2:
        return make_cei("type", {{make_variable(var_name()),
                                  make_variable("int")}});
      case 3:
        return make_cei("deg", {{make_variable(rel_name()),
                                 make_literal(static_cast<std::int64_t>(2))}});
      default:
        return make_cei("card", {{make_variable(rel_name()),
                                  make_variable(var_name()),
                                  make_variable(var_name())}});
    }
  }

  ConstraintPtr declaration() {
    switch (pick(4)) {
      case 0:
        return make_cei("card", {{make_variable(rel_name()),
                                  make_literal(static_cast<std::int64_t>(
                                      1 + pick(9)))}});
      case 1:
        return make_cei("pkey", {{make_variable(rel_name()),
                                  make_variable(var_name())}});
      case 2:
        return make_cei("fdep", {{make_variable(rel_name()),
                                  make_variable(var_name())},
                                 {make_variable(var_name())}});
      default:
        return make_cei("type", {{make_variable(rel_name()),
                                  make_variable("real")}});
    }
  }
};

}  // namespace hojabr::test
