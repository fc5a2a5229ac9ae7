#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hojabr/ast.hpp"
#include "hojabr/desugar.hpp"
#include "hojabr/syntax.hpp"

using namespace hojabr;

namespace {

Rule parse_rule(const std::string& text) {
  auto r = parse(text);
  REQUIRE(r.ok());
  REQUIRE(r.value().rules.size() == 1);
  return r.value().rules[0];
}

ConstraintPtr parse_constraint_of(const std::string& text) {
  return parse_rule(text).constraint;
}

}  // namespace

TEST_CASE("scalar equality distinguishes int and float") {
  CHECK(equal(make_literal(Scalar{std::int64_t{3}}),
              make_literal(Scalar{std::int64_t{3}})));
  CHECK_FALSE(equal(make_literal(Scalar{std::int64_t{3}}),
                    make_literal(Scalar{3.0})));
  CHECK_FALSE(equal(make_literal(Scalar{true}),
                    make_literal(Scalar{std::int64_t{1}})));
}

TEST_CASE("equality ignores parenthesization and locations") {
  auto a = parse_constraint_of("Q(a) := (b=1)");
  auto b = parse_constraint_of("Q(a) := b=1");
  CHECK(equal(a, b));
}

TEST_CASE("conjunction factories") {
  auto t = make_conjunction(std::vector<ConstraintPtr>{});
  CHECK(std::holds_alternative<BoolConst>(t->node));
  CHECK(std::get<BoolConst>(t->node).value);

  auto f = make_disjunction(std::vector<ConstraintPtr>{});
  CHECK(std::holds_alternative<BoolConst>(f->node));
  CHECK_FALSE(std::get<BoolConst>(f->node).value);

  auto c = parse_constraint_of("Q(a) := R(a), S(a), T(a)");
  auto parts = flatten_conjunction(c);
  CHECK(parts.size() == 3);
  CHECK(equal(make_conjunction(parts), c));
}

TEST_CASE("free_variables on the simple-join rule") {
  auto r = parse_rule("Q(a,b,c) := R(a,b),S(b',c),(b=b')");
  auto fv = free_variables(r);
  CHECK(fv == std::set<std::string>{"a", "b", "b'", "c"});
  CHECK(relation_variables(r).empty());
}

TEST_CASE("free_variables excludes nested-rule relation variables") {
  auto r = parse_rule("Q(x, a) := Rh(x), (Rx := Rh(x)), Rx(a)");
  CHECK(free_variables(r) == std::set<std::string>{"a", "x"});
  CHECK(relation_variables(r) == std::set<std::string>{"Rx"});
}

TEST_CASE("free_variables: empty access lists and wildcards contribute nothing") {
  auto r = parse_rule("Q(a) := B2(), R(_, a)");
  CHECK(free_variables(r) == std::set<std::string>{"a"});
}

TEST_CASE("free_variables sees head, expr and constraint") {
  auto r = parse_rule("Y(i) := x*w if x=X(i), w=W(i)");
  CHECK(free_variables(r) == std::set<std::string>{"i", "w", "x"});
}

TEST_CASE("wildcards are fresh per occurrence") {
  auto r = parse_rule("Q(a) := R(_, _), S(a)");
  const auto& atom =
      std::get<AtomAccess>(flatten_conjunction(r.constraint)[0]->node);
  const auto& args = atom.access.argLists[0];
  const auto& v0 = std::get<Variable>(args[0]->node);
  const auto& v1 = std::get<Variable>(args[1]->node);
  CHECK(is_wildcard(v0.name));
  CHECK(is_wildcard(v1.name));
  CHECK(v0.name != v1.name);
}

TEST_CASE("builtin registries") {
  for (const char* n : {"type", "card", "deg", "order", "fdep", "pkey",
                        "unique"})
    CHECK(is_cei_name(n));
  CHECK_FALSE(is_cei_name("sum"));
  for (const char* n : {"avg", "sum", "min", "max", "median", "softmax"}) {
    CHECK(is_eei_name(n));
    CHECK(is_aggregate_eei(n));
  }
  for (const char* n : {"sin", "cos", "relu"}) {
    CHECK(is_eei_name(n));
    CHECK(is_scalar_eei(n));
    CHECK_FALSE(is_aggregate_eei(n));
  }
  CHECK_FALSE(is_eei_name("card"));
}

// ------------------------------------------------------------- desugaring

namespace {

ConstraintPtr desugared_constraint(const std::string& text) {
  auto r = desugar(parse_constraint_of(text));
  REQUIRE(r.ok());
  return r.value();
}

}  // namespace

TEST_CASE("desugar in-list to disjunction of equalities") {
  CHECK(equal(desugared_constraint("Q(x) := x in [1, 2]"),
              parse_constraint_of("Q(x) := x=1 or x=2")));
  CHECK(equal(desugared_constraint("Q(x) := x in [5]"),
              parse_constraint_of("Q(x) := x=5")));
}

TEST_CASE("desugar comparison chain to conjunction") {
  CHECK(equal(desugared_constraint("Q(j) := 0<=j<m"),
              parse_constraint_of("Q(j) := 0<=j, j<m")));
  CHECK(equal(desugared_constraint("Q(j) := 0<=j<m<=k"),
              parse_constraint_of("Q(j) := 0<=j, j<m, m<=k")));
}

TEST_CASE("desugar match to disjunction of guarded bodies") {
  CHECK(equal(
      desugared_constraint("Q(v, j) := match j case 0 -> v=7 case 1 -> v=9"),
      parse_constraint_of("Q(v, j) := (j=0, v=7) or (j=1, v=9)")));
}

TEST_CASE("desugar type ascription to CEI call") {
  CHECK(equal(desugared_constraint("Q(x) := R(x), x: int"),
              parse_constraint_of("Q(x) := R(x), type(x, int)")));
}

TEST_CASE("desugar recurses through nesting and preserves structure") {
  auto d = desugared_constraint("Q(x) := not(x in [1, 2]), R(x)");
  CHECK(equal(d, parse_constraint_of("Q(x) := not(x=1 or x=2), R(x)")));
}

TEST_CASE("desugar rejects duplicate match cases") {
  auto p = parse("Q(v, j) := match j case 0 -> v=1 case 0 -> v=2");
  REQUIRE(p.ok());
  auto d = desugar(p.value());
  REQUIRE_FALSE(d.ok());
  CHECK(d.errors()[0].code == "D001");
  CHECK(d.errors()[0].rule == "Q");
}

TEST_CASE("desugar is idempotent and detectable") {
  auto p = parse("dup(v, j) := match j case 0 -> v in [1, 2] case 1 -> 0<=v<9\n"
                 "T2(x) := R(x), x: float");
  REQUIRE(p.ok());
  CHECK_FALSE(is_desugared(p.value()));
  auto once = desugar(p.value());
  REQUIRE(once.ok());
  CHECK(is_desugared(once.value()));
  auto twice = desugar(once.value());
  REQUIRE(twice.ok());
  CHECK(equal(once.value(), twice.value()));
  CHECK(once.value().rules.size() == p.value().rules.size());
}

TEST_CASE("free_variables invariant under desugaring") {
  auto r = parse_rule("Q(v, j) := S(j), match j case 0 -> v=7 case 1 -> v=9");
  auto d = desugar(r);
  REQUIRE(d.ok());
  CHECK(free_variables(r) == free_variables(d.value()));
}
