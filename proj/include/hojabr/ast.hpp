#pragma once

// Core abstract syntax for Hojabr programs.
//
// A program is a list of rules `A ◁ E if C` / `A ◁ C` plus standalone
// declarations (constraint-interface facts such as `card(R, 2)`).
// Accesses carry one argument list per nesting level, so `Rh(b)(a)`
// addresses a two-level (trie-shaped) relation.
//
// The tree keeps the surface sugar (comparison chains, `in` lists,
// `match`, `x: T`) as explicit nodes; `desugar` in desugar.hpp rewrites
// them into the core forms. Nodes are immutable after construction and
// shared freely via shared_ptr<const ...>.

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace hojabr {

struct Expression;
struct Constraint;
struct Rule;

using ExprPtr = std::shared_ptr<const Expression>;
using ConstraintPtr = std::shared_ptr<const Constraint>;
using RulePtr = std::shared_ptr<const Rule>;

// ---------------------------------------------------------------- scalars

// Scalar runtime/literal values. Integers and floats are distinct types:
// `3` and `3.0` are different literals and print differently.
using Scalar = std::variant<std::int64_t, double, std::string, bool>;

enum class Action { Define, Add, Remove, Replace };  // :=  +=  -=  <-

enum class BinOp { Add, Sub, Mul, Div };  // ◇

enum class CompareOp { Eq, Ne, Lt, Le, Gt, Ge };  // θ

const char* to_string(Action a);
const char* to_string(BinOp op);
const char* to_string(CompareOp op);

// ---------------------------------------------------------------- access

// X(E,...)...(E,...) — a relation access with one argument list per level.
// Zero argument lists is legal only as a nested-rule head (`(Rv := X(e))`).
struct Access {
  std::string relation;
  std::vector<std::vector<ExprPtr>> argLists;
};

// ------------------------------------------------------------- expression

struct Variable {
  std::string name;
};

struct Literal {
  Scalar value;
};

struct BinaryExpr {
  BinOp op;
  ExprPtr lhs, rhs;
};

struct NegateExpr {
  ExprPtr operand;
};

// Call to a registered evaluation-extension function (sum, avg, relu, ...).
struct EeiCall {
  std::string name;
  std::vector<ExprPtr> args;
};

struct Expression {
  std::variant<Access, Variable, Literal, BinaryExpr, NegateExpr, EeiCall> node;
  int line = 0, col = 0;  // ignored by equality
};

// ------------------------------------------------------------- constraint

struct Conjunction {
  ConstraintPtr lhs, rhs;
};

struct Disjunction {
  ConstraintPtr lhs, rhs;
};

struct Negation {
  ConstraintPtr inner;
};

// A relation access used as an atom: satisfied when the addressed entry
// (or sub-relation) is non-zero/non-empty; unbound argument variables
// range over stored entries.
struct AtomAccess {
  Access access;
};

struct Comparison {
  ExprPtr lhs;
  CompareOp op;
  ExprPtr rhs;
};

// Call to a registered constraint-extension (type, card, deg, order,
// fdep, pkey, unique). `fdep(a)(b)` carries two argument lists.
struct CeiCall {
  std::string name;
  std::vector<std::vector<ExprPtr>> argLists;
};

// A rule used as a constraint, e.g. `(Rx := Rh(x))`: binds Rx to the
// sub-relation at Rh(x) and is satisfied when that is non-empty.
struct NestedRule {
  RulePtr rule;
};

struct BoolConst {
  bool value;
};

// --- sugar forms (removed by desugar) ---

// e1 θ1 e2 θ2 e3 ...   ≡   e1 θ1 e2, e2 θ2 e3, ...
struct ComparisonChain {
  std::vector<ExprPtr> operands;        // n >= 3
  std::vector<CompareOp> ops;           // size == operands.size() - 1
};

// x in [t1, ..., tn]   ≡   x = t1 or ... or x = tn
struct InList {
  ExprPtr value;
  std::vector<ExprPtr> items;
};

// match t case t1 -> C1 ... case tn -> Cn  ≡  (t = t1, C1) or ...
struct MatchCase {
  ExprPtr scrutinee;
  std::vector<std::pair<ExprPtr, ConstraintPtr>> cases;
};

// x : T   ≡   type(x, T)
struct TypeAscription {
  std::string var;
  std::string typeName;
};

struct Constraint {
  std::variant<Conjunction, Disjunction, Negation, AtomAccess, Comparison,
               CeiCall, NestedRule, BoolConst, ComparisonChain, InList,
               MatchCase, TypeAscription>
      node;
  // True when the source text wrapped this constraint in parentheses; the
  // printer reproduces them. Ignored by equality.
  bool parenthesized = false;
  int line = 0, col = 0;  // ignored by equality
};

// ------------------------------------------------------------------ rule

struct Rule {
  Access head;
  Action action = Action::Define;
  ExprPtr expr;              // null for `A ◁ C` rules (set semantics)
  ConstraintPtr constraint;  // never null (facts use `true`)
  int line = 0, col = 0;     // ignored by equality
};

struct Program {
  std::vector<Rule> rules;
  std::vector<ConstraintPtr> declarations;  // standalone CEI facts
};

// ------------------------------------------------------------- factories

ExprPtr make_variable(std::string name);
ExprPtr make_literal(Scalar value);
ExprPtr make_binary(BinOp op, ExprPtr lhs, ExprPtr rhs);
ExprPtr make_negate(ExprPtr operand);
ExprPtr make_access_expr(Access a);
ExprPtr make_eei(std::string name, std::vector<ExprPtr> args);

ConstraintPtr make_conjunction(ConstraintPtr lhs, ConstraintPtr rhs);
// Right-associated conjunction of all parts (empty -> `true`).
ConstraintPtr make_conjunction(std::vector<ConstraintPtr> parts);
ConstraintPtr make_disjunction(ConstraintPtr lhs, ConstraintPtr rhs);
ConstraintPtr make_disjunction(std::vector<ConstraintPtr> parts);
ConstraintPtr make_negation(ConstraintPtr inner);
ConstraintPtr make_atom(Access a);
ConstraintPtr make_comparison(ExprPtr lhs, CompareOp op, ExprPtr rhs);
ConstraintPtr make_cei(std::string name, std::vector<std::vector<ExprPtr>> argLists);
ConstraintPtr make_nested_rule(Rule r);
ConstraintPtr make_bool(bool value);
ConstraintPtr with_parens(ConstraintPtr c);

// Splits nested conjunctions into a flat conjunct list (left-to-right).
std::vector<ConstraintPtr> flatten_conjunction(const ConstraintPtr& c);

// ----------------------------------------------------- structural equality

// Structural comparison of abstract syntax; ignores source locations and
// parenthesization flags.
bool equal(const Expression& a, const Expression& b);
bool equal(const Constraint& a, const Constraint& b);
bool equal(const Access& a, const Access& b);
bool equal(const Rule& a, const Rule& b);
bool equal(const Program& a, const Program& b);
bool equal(const ExprPtr& a, const ExprPtr& b);
bool equal(const ConstraintPtr& a, const ConstraintPtr& b);

// -------------------------------------------------------------- variables

// Scalar variables free in the rule: everything in head, expression and
// constraint except relation variables bound by nested rules and the
// anonymous wildcard. `Q(a,b,c) := R(a,b), S(b',c), (b=b')` yields
// {a, b, b', c}.
std::set<std::string> free_variables(const Rule& rule);

// Names bound as relation variables by nested rules inside the rule.
std::set<std::string> relation_variables(const Rule& rule);

// True for parser-generated wildcard variables (`_`).
bool is_wildcard(const std::string& name);

// ------------------------------------------------------------- registries

// Registered constraint-extension names (type, card, deg, order, fdep,
// pkey, unique).
bool is_cei_name(const std::string& name);
// Registered evaluation-extension names.
bool is_eei_name(const std::string& name);
// Aggregate EEIs group bindings by head key (avg/sum/min/max/median and
// the per-element softmax).
bool is_aggregate_eei(const std::string& name);
// Scalar math EEIs usable in any expression position (sin/cos/relu).
bool is_scalar_eei(const std::string& name);

}  // namespace hojabr
