#include <charconv>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "hojabr/syntax.hpp"

// Canonical pretty-printer. Spacing rules: `, ` between arguments and
// conjuncts, spaces around rule actions and `if`/`or`, comparison and
// arithmetic operators tight (`b=b'`, `x*w+b`). Parentheses appear where
// the source recorded them and wherever structure demands them, so
// parse∘print is the structural identity on every well-formed tree.

namespace hojabr {

namespace {

// Expression precedence levels; a child below its context's minimum is
// parenthesized, as is a right operand at the same binary level (all
// binary operators parse left-associated).
constexpr int kAdd = 1, kMul = 2, kUnary = 3;

int expr_level(const Expression& e) {
  return std::visit(
      [](const auto& node) -> int {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, BinaryExpr>) {
          return (node.op == BinOp::Add || node.op == BinOp::Sub) ? kAdd : kMul;
        } else if constexpr (std::is_same_v<T, NegateExpr>) {
          return kUnary;
        } else {
          return 4;  // primary
        }
      },
      e.node);
}

void print_expr(std::ostringstream& os, const ExprPtr& e, int minLevel);

void print_arg_lists(std::ostringstream& os,
                     const std::vector<std::vector<ExprPtr>>& lists) {
  for (const auto& list : lists) {
    os << "(";
    for (size_t i = 0; i < list.size(); ++i) {
      if (i) os << ", ";
      print_expr(os, list[i], 0);
    }
    os << ")";
  }
}

void print_access(std::ostringstream& os, const Access& a) {
  os << a.relation;
  print_arg_lists(os, a.argLists);
}

void print_expr(std::ostringstream& os, const ExprPtr& e, int minLevel) {
  int level = expr_level(*e);
  bool parens = level < minLevel;
  if (parens) os << "(";
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Access>) {
          print_access(os, node);
        } else if constexpr (std::is_same_v<T, Variable>) {
          os << (is_wildcard(node.name) ? "_" : node.name);
        } else if constexpr (std::is_same_v<T, Literal>) {
          os << print_scalar(node.value);
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          print_expr(os, node.lhs, level);
          os << to_string(node.op);
          print_expr(os, node.rhs, level + 1);  // left-associated
        } else if constexpr (std::is_same_v<T, NegateExpr>) {
          os << "-";
          print_expr(os, node.operand, kUnary);
        } else {
          static_assert(std::is_same_v<T, EeiCall>);
          os << node.name << "(";
          for (size_t i = 0; i < node.args.size(); ++i) {
            if (i) os << ", ";
            print_expr(os, node.args[i], 0);
          }
          os << ")";
        }
      },
      e->node);
  if (parens) os << ")";
}

// Constraint levels: disjunction 0, conjunction 1 (match shares it: a
// match swallows a following `,`-conjunct, so it must be wrapped anywhere
// a tighter form is required), primaries 2.
int constraint_level(const Constraint& c) {
  return std::visit(
      [](const auto& node) -> int {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Disjunction>) return 0;
        else if constexpr (std::is_same_v<T, Conjunction>) return 1;
        else if constexpr (std::is_same_v<T, MatchCase>) return 1;
        else return 2;
      },
      c.node);
}

void print_rule(std::ostringstream& os, const Rule& r);

// `caseFollows`: the text printed immediately after this constraint begins
// with a `case` keyword (we are inside a non-final match case body). An
// unparenthesized match in tail position there would swallow that case on
// re-parse, so it gets wrapped. The flag propagates only along positions
// whose following text is inherited: conjunction/disjunction right arms
// and final case bodies.
void print_constraint(std::ostringstream& os, const ConstraintPtr& c,
                      int minLevel, bool caseFollows = false) {
  int level = constraint_level(*c);
  bool parens = c->parenthesized || level < minLevel ||
                (caseFollows && std::holds_alternative<MatchCase>(c->node));
  if (parens) os << "(";
  bool tailFollows = parens ? false : caseFollows;
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Conjunction>) {
          print_constraint(os, node.lhs, 2);
          os << ", ";
          print_constraint(os, node.rhs, 1, tailFollows);
        } else if constexpr (std::is_same_v<T, Disjunction>) {
          print_constraint(os, node.lhs, 1);
          os << " or ";
          print_constraint(os, node.rhs, 0, tailFollows);
        } else if constexpr (std::is_same_v<T, Negation>) {
          os << "not(";
          print_constraint(os, node.inner, 0);
          os << ")";
        } else if constexpr (std::is_same_v<T, AtomAccess>) {
          print_access(os, node.access);
        } else if constexpr (std::is_same_v<T, Comparison>) {
          print_expr(os, node.lhs, 0);
          os << to_string(node.op);
          print_expr(os, node.rhs, 0);
        } else if constexpr (std::is_same_v<T, CeiCall>) {
          os << node.name;
          print_arg_lists(os, node.argLists);
        } else if constexpr (std::is_same_v<T, NestedRule>) {
          print_rule(os, *node.rule);
        } else if constexpr (std::is_same_v<T, BoolConst>) {
          os << (node.value ? "true" : "false");
        } else if constexpr (std::is_same_v<T, ComparisonChain>) {
          print_expr(os, node.operands[0], 0);
          for (size_t i = 0; i < node.ops.size(); ++i) {
            os << to_string(node.ops[i]);
            print_expr(os, node.operands[i + 1], 0);
          }
        } else if constexpr (std::is_same_v<T, InList>) {
          print_expr(os, node.value, 0);
          os << " in [";
          for (size_t i = 0; i < node.items.size(); ++i) {
            if (i) os << ", ";
            print_expr(os, node.items[i], 0);
          }
          os << "]";
        } else if constexpr (std::is_same_v<T, MatchCase>) {
          os << "match ";
          print_expr(os, node.scrutinee, 0);
          for (size_t i = 0; i < node.cases.size(); ++i) {
            os << " case ";
            print_expr(os, node.cases[i].first, 0);
            os << " -> ";
            bool moreCases = i + 1 < node.cases.size();
            print_constraint(os, node.cases[i].second, 1,
                             moreCases ? true : tailFollows);
          }
        } else {
          static_assert(std::is_same_v<T, TypeAscription>);
          os << node.var << ": " << node.typeName;
        }
      },
      c->node);
  if (parens) os << ")";
}

void print_rule(std::ostringstream& os, const Rule& r) {
  print_access(os, r.head);
  os << " " << to_string(r.action) << " ";
  if (r.expr) {
    print_expr(os, r.expr, 0);
    os << " if ";
  }
  print_constraint(os, r.constraint, 0);
}

}  // namespace

std::string print_scalar(const Scalar& value) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, double>) {
          if (std::isnan(v)) return "nan";
          if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
          char buf[64];
          auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
          std::string s(buf, p);
          (void)ec;
          // Keep floats lexically distinct from integers.
          if (s.find('.') == std::string::npos &&
              s.find('e') == std::string::npos &&
              s.find("inf") == std::string::npos &&
              s.find("nan") == std::string::npos)
            s += ".0";
          return s;
        } else if constexpr (std::is_same_v<T, std::string>) {
          std::string out = "\"";
          for (char c : v) {
            switch (c) {
              case '"': out += "\\\""; break;
              case '\\': out += "\\\\"; break;
              case '\n': out += "\\n"; break;
              case '\t': out += "\\t"; break;
              default: out += c;
            }
          }
          out += "\"";
          return out;
        } else {
          return v ? "true" : "false";
        }
      },
      value);
}

std::string print(const ExprPtr& expr) {
  std::ostringstream os;
  print_expr(os, expr, 0);
  return os.str();
}

std::string print(const Access& access) {
  std::ostringstream os;
  print_access(os, access);
  return os.str();
}

std::string print(const ConstraintPtr& constraint) {
  std::ostringstream os;
  print_constraint(os, constraint, 0);
  return os.str();
}

std::string print(const Rule& rule) {
  std::ostringstream os;
  print_rule(os, rule);
  return os.str();
}

std::string print(const Program& program) {
  std::ostringstream os;
  for (const auto& d : program.declarations) {
    print_constraint(os, d, 0);
    os << "\n";
  }
  for (const auto& r : program.rules) {
    print_rule(os, r);
    os << "\n";
  }
  return os.str();
}

// ------------------------------------------------------------- JSON dump

namespace {

using nlohmann::json;

json expr_json(const ExprPtr& e);

json scalar_json(const Scalar& s) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::int64_t>)
          return json{{"type", "int"}, {"value", v}};
        else if constexpr (std::is_same_v<T, double>)
          return json{{"type", "float"}, {"value", v}};
        else if constexpr (std::is_same_v<T, std::string>)
          return json{{"type", "string"}, {"value", v}};
        else
          return json{{"type", "bool"}, {"value", v}};
      },
      s);
}

json access_json(const Access& a) {
  json lists = json::array();
  for (const auto& list : a.argLists) {
    json args = json::array();
    for (const auto& e : list) args.push_back(expr_json(e));
    lists.push_back(std::move(args));
  }
  return json{{"relation", a.relation}, {"argLists", std::move(lists)}};
}

json expr_json(const ExprPtr& e) {
  return std::visit(
      [&](const auto& node) -> json {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Access>) {
          json j = access_json(node);
          j["kind"] = "access";
          return j;
        } else if constexpr (std::is_same_v<T, Variable>) {
          return json{{"kind", "variable"}, {"name", node.name}};
        } else if constexpr (std::is_same_v<T, Literal>) {
          json j = scalar_json(node.value);
          j["kind"] = "literal";
          return j;
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          return json{{"kind", "binary"},
                      {"op", to_string(node.op)},
                      {"lhs", expr_json(node.lhs)},
                      {"rhs", expr_json(node.rhs)}};
        } else if constexpr (std::is_same_v<T, NegateExpr>) {
          return json{{"kind", "negate"}, {"operand", expr_json(node.operand)}};
        } else {
          return json{{"kind", "eei"},
                      {"name", node.name},
                      {"args", [&] {
                         json a = json::array();
                         for (const auto& arg : node.args)
                           a.push_back(expr_json(arg));
                         return a;
                       }()}};
        }
      },
      e->node);
}

json rule_json(const Rule& r);

json constraint_json(const ConstraintPtr& c) {
  return std::visit(
      [&](const auto& node) -> json {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Conjunction>) {
          return json{{"kind", "conjunction"},
                      {"lhs", constraint_json(node.lhs)},
                      {"rhs", constraint_json(node.rhs)}};
        } else if constexpr (std::is_same_v<T, Disjunction>) {
          return json{{"kind", "disjunction"},
                      {"lhs", constraint_json(node.lhs)},
                      {"rhs", constraint_json(node.rhs)}};
        } else if constexpr (std::is_same_v<T, Negation>) {
          return json{{"kind", "negation"}, {"inner", constraint_json(node.inner)}};
        } else if constexpr (std::is_same_v<T, AtomAccess>) {
          json j = access_json(node.access);
          j["kind"] = "atom";
          return j;
        } else if constexpr (std::is_same_v<T, Comparison>) {
          return json{{"kind", "comparison"},
                      {"op", to_string(node.op)},
                      {"lhs", expr_json(node.lhs)},
                      {"rhs", expr_json(node.rhs)}};
        } else if constexpr (std::is_same_v<T, CeiCall>) {
          json lists = json::array();
          for (const auto& list : node.argLists) {
            json args = json::array();
            for (const auto& e : list) args.push_back(expr_json(e));
            lists.push_back(std::move(args));
          }
          return json{{"kind", "cei"}, {"name", node.name}, {"argLists", lists}};
        } else if constexpr (std::is_same_v<T, NestedRule>) {
          return json{{"kind", "nestedRule"}, {"rule", rule_json(*node.rule)}};
        } else if constexpr (std::is_same_v<T, BoolConst>) {
          return json{{"kind", "bool"}, {"value", node.value}};
        } else if constexpr (std::is_same_v<T, ComparisonChain>) {
          json ops = json::array(), operands = json::array();
          for (auto op : node.ops) ops.push_back(to_string(op));
          for (const auto& e : node.operands) operands.push_back(expr_json(e));
          return json{{"kind", "chain"}, {"ops", ops}, {"operands", operands}};
        } else if constexpr (std::is_same_v<T, InList>) {
          json items = json::array();
          for (const auto& e : node.items) items.push_back(expr_json(e));
          return json{{"kind", "inList"},
                      {"value", expr_json(node.value)},
                      {"items", items}};
        } else if constexpr (std::is_same_v<T, MatchCase>) {
          json cases = json::array();
          for (const auto& [pat, body] : node.cases)
            cases.push_back(json{{"case", expr_json(pat)},
                                 {"body", constraint_json(body)}});
          return json{{"kind", "match"},
                      {"scrutinee", expr_json(node.scrutinee)},
                      {"cases", cases}};
        } else {
          static_assert(std::is_same_v<T, TypeAscription>);
          return json{{"kind", "typeAscription"},
                      {"var", node.var},
                      {"typeName", node.typeName}};
        }
      },
      c->node);
}

json rule_json(const Rule& r) {
  json j{{"head", access_json(r.head)},
         {"action", to_string(r.action)},
         {"constraint", constraint_json(r.constraint)}};
  if (r.expr) j["expr"] = expr_json(r.expr);
  return j;
}

}  // namespace

std::string program_to_json(const Program& program) {
  json rules = json::array();
  for (const auto& r : program.rules) rules.push_back(rule_json(r));
  json decls = json::array();
  for (const auto& d : program.declarations) decls.push_back(constraint_json(d));
  json j{{"rules", std::move(rules)}, {"declarations", std::move(decls)}};
  return j.dump();
}

}  // namespace hojabr
