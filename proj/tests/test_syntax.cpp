#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "hojabr/desugar.hpp"
#include "hojabr/syntax.hpp"

#include "ast_gen.hpp"

using namespace hojabr;

namespace {

Program parse_ok(const std::string& text) {
  auto r = parse(text);
  if (!r.ok()) {
    for (const auto& d : r.errors()) MESSAGE(format_diagnostic(d));
  }
  REQUIRE(r.ok());
  return r.take();
}

std::string first_error_code(const std::string& text) {
  auto r = parse(text);
  REQUIRE_FALSE(r.ok());
  return r.errors()[0].code;
}

void check_round_trip(const Program& p) {
  std::string text = print(p);
  auto back = parse(text);
  if (!back.ok()) {
    MESSAGE("printed text: ", text);
    for (const auto& d : back.errors()) MESSAGE(format_diagnostic(d));
  }
  REQUIRE(back.ok());
  if (!equal(p, back.value())) {
    MESSAGE("printed text: ", text);
    MESSAGE("reprint:      ", print(back.value()));
    CHECK(false);
  }
}

void check_round_trip(const std::string& source) {
  check_round_trip(parse_ok(source));
}

// Strips comments and whitespace so corpus texts can be compared with
// their printed forms ("differs only in whitespace and comments").
std::string strip_ws(const std::string& s) {
  std::string out;
  size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '/' && i + 1 < s.size() && s[i + 1] == '/') {
      while (i < s.size() && s[i] != '\n') ++i;
    } else if (s[i] == '{') {
      while (i < s.size() && s[i] != '}') ++i;
      if (i < s.size()) ++i;
    } else if (std::isspace(static_cast<unsigned char>(s[i]))) {
      ++i;
    } else {
      out += s[i++];
    }
  }
  return out;
}

}  // namespace

TEST_CASE("empty and comment-only sources parse to the empty program") {
  CHECK(parse_ok("").rules.empty());
  auto p = parse_ok("// nothing here\n{ block\ncomment }\n");
  CHECK(p.rules.empty());
  CHECK(p.declarations.empty());
  CHECK(print(Program{}).empty());
}

TEST_CASE("simple join rule parses to the expected shape") {
  auto p = parse_ok("Q(a,b,c) := R(a,b),S(b',c),(b=b')");
  REQUIRE(p.rules.size() == 1);
  const Rule& r = p.rules[0];
  CHECK(r.head.relation == "Q");
  REQUIRE(r.head.argLists.size() == 1);
  CHECK(r.head.argLists[0].size() == 3);
  CHECK(r.action == Action::Define);
  CHECK(r.expr == nullptr);
  auto parts = flatten_conjunction(r.constraint);
  REQUIRE(parts.size() == 3);
  CHECK(std::holds_alternative<AtomAccess>(parts[0]->node));
  CHECK(std::holds_alternative<AtomAccess>(parts[1]->node));
  const auto* cmp = std::get_if<Comparison>(&parts[2]->node);
  REQUIRE(cmp);
  CHECK(parts[2]->parenthesized);
  CHECK(cmp->op == CompareOp::Eq);
}

TEST_CASE("valued rule with EEI call") {
  auto p = parse_ok("H1(i, k) := relu(v) if v=Z1(i, k)");
  const Rule& r = p.rules[0];
  REQUIRE(r.expr);
  const auto* call = std::get_if<EeiCall>(&r.expr->node);
  REQUIRE(call);
  CHECK(call->name == "relu");
  REQUIRE(call->args.size() == 1);
  CHECK(std::holds_alternative<Variable>(call->args[0]->node));
}

TEST_CASE("multi-level accesses and head levels") {
  auto p = parse_ok("Y(i)(j) := v if v=B(i)(j), B2()");
  const Rule& r = p.rules[0];
  CHECK(r.head.argLists.size() == 2);
  auto parts = flatten_conjunction(r.constraint);
  const auto& cmp = std::get<Comparison>(parts[0]->node);
  const auto& acc = std::get<Access>(cmp.rhs->node);
  CHECK(acc.argLists.size() == 2);
  const auto& b2 = std::get<AtomAccess>(parts[1]->node);
  REQUIRE(b2.access.argLists.size() == 1);
  CHECK(b2.access.argLists[0].empty());
}

TEST_CASE("actions parse and print") {
  CHECK(parse_ok("Q(a) += R(a)").rules[0].action == Action::Add);
  CHECK(parse_ok("Q(a) -= R(a)").rules[0].action == Action::Remove);
  CHECK(parse_ok("Q(a) <- R(a)").rules[0].action == Action::Replace);
  CHECK(print(parse_ok("Q(a) <- R(a)").rules[0]) == "Q(a) <- R(a)");
}

TEST_CASE("or binds loosest") {
  // a=1, b=2 or c=3  ==  (a=1, b=2) or c=3
  auto c = parse_ok("Q(a, b, c) := a=1, b=2 or c=3").rules[0].constraint;
  const auto* d = std::get_if<Disjunction>(&c->node);
  REQUIRE(d);
  CHECK(std::holds_alternative<Conjunction>(d->lhs->node));
  CHECK(std::holds_alternative<Comparison>(d->rhs->node));
}

TEST_CASE("declarations are collected separately in order") {
  auto p = parse_ok("card(R, 2)\npkey(R, a)\nQ(a) := R(a, _)\n"
                    "fdep(S, a)(b)\ntype(S, real)");
  CHECK(p.rules.size() == 1);
  REQUIRE(p.declarations.size() == 4);
  CHECK(std::get<CeiCall>(p.declarations[0]->node).name == "card");
  CHECK(std::get<CeiCall>(p.declarations[1]->node).name == "pkey");
  const auto& fdep = std::get<CeiCall>(p.declarations[2]->node);
  CHECK(fdep.argLists.size() == 2);
  CHECK(print(p.declarations[2]) == "fdep(S, a)(b)");
}

TEST_CASE("canonical print of the two-relation join") {
  auto p = parse_ok("J(i,a,b):=R(i,a),S(i,b)");
  CHECK(print(p.rules[0]) == "J(i, a, b) := R(i, a), S(i, b)");
}

TEST_CASE("canonical print keeps comparisons and arithmetic tight") {
  auto p = parse_ok("Y(i) := x*w+b if x=X(i), w=W(i), b=B(i)");
  CHECK(print(p.rules[0]) == "Y(i) := x*w+b if x=X(i), w=W(i), b=B(i)");
}

TEST_CASE("print reproduces recorded parentheses") {
  CHECK(print(parse_ok("Q(a,b) := R(a,b), (b=1)").rules[0]) ==
        "Q(a, b) := R(a, b), (b=1)");
  CHECK(print(parse_ok("Q(x, a) := Rh(x), (Rx := Rh(x)), Rx(a)").rules[0]) ==
        "Q(x, a) := Rh(x), (Rx := Rh(x)), Rx(a)");
}

TEST_CASE("print adds structurally required parentheses") {
  // Disjunction under a conjunction must be wrapped to survive re-parsing.
  auto inner = make_disjunction(
      make_comparison(make_variable("a"), CompareOp::Eq,
                      make_literal(Scalar{std::int64_t{1}})),
      make_comparison(make_variable("a"), CompareOp::Eq,
                      make_literal(Scalar{std::int64_t{2}})));
  Rule r;
  r.head = Access{"Q", {{make_variable("a")}}};
  r.constraint = make_conjunction(make_atom(Access{"R", {{make_variable("a")}}}),
                                  inner);
  CHECK(print(r) == "Q(a) := R(a), (a=1 or a=2)");
  Program p;
  p.rules.push_back(r);
  check_round_trip(p);

  // Left-nested conjunctions/disjunctions keep their shape.
  Program q;
  Rule r2;
  r2.head = Access{"Q", {{}}};
  r2.constraint = make_conjunction(
      make_conjunction(make_bool(true), make_bool(false)), make_bool(true));
  q.rules.push_back(r2);
  check_round_trip(q);
}

TEST_CASE("expression printing uses minimal parentheses") {
  auto p = parse_ok("Q(a) := v if v=a*(b+c), w=(a+b)*c, u=a-(b-c), t=a-b-c");
  std::string s = print(p.rules[0]);
  CHECK(s == "Q(a) := v if v=a*(b+c), w=(a+b)*c, u=a-(b-c), t=a-b-c");
  check_round_trip(p);
}

TEST_CASE("unary minus round-trips") {
  check_round_trip("Q(a) := v if v=-1, w=-(a+1), u=-a*b, R(a)");
  // `a<-1` lexes as `<` `-` in comparison position, not as the `<-` action.
  auto p = parse_ok("Q(a) := R(a), a<-1");
  auto parts = flatten_conjunction(p.rules[0].constraint);
  const auto& cmp = std::get<Comparison>(parts[1]->node);
  CHECK(cmp.op == CompareOp::Lt);
  CHECK(std::holds_alternative<NegateExpr>(cmp.rhs->node));
  CHECK(print(p.rules[0]) == "Q(a) := R(a), a<-1");
  check_round_trip(p);
}

TEST_CASE("sugar forms print in surface syntax") {
  CHECK(print(parse_ok("Q(j) := 0<=j<m").rules[0]) == "Q(j) := 0<=j<m");
  CHECK(print(parse_ok("Q(x) := x in [1, 2]").rules[0]) ==
        "Q(x) := x in [1, 2]");
  CHECK(print(parse_ok("Q(x) := R(x), x: int").rules[0]) ==
        "Q(x) := R(x), x: int");
  CHECK(print(parse_ok(
            "Q(v, j) := match j case 0 -> v=7 case 1 -> v=9").rules[0]) ==
        "Q(v, j) := match j case 0 -> v=7 case 1 -> v=9");
}

TEST_CASE("match as a non-final conjunct is parenthesized") {
  auto body = make_comparison(make_variable("v"), CompareOp::Eq,
                              make_literal(Scalar{std::int64_t{1}}));
  MatchCase m;
  m.scrutinee = make_variable("j");
  m.cases.emplace_back(make_literal(Scalar{std::int64_t{0}}), body);
  Constraint mc;
  mc.node = std::move(m);
  auto match = std::make_shared<const Constraint>(std::move(mc));
  Rule r;
  r.head = Access{"Q", {{make_variable("v"), make_variable("j")}}};
  r.constraint =
      make_conjunction(match, make_atom(Access{"S", {{make_variable("j")}}}));
  CHECK(print(r) == "Q(v, j) := (match j case 0 -> v=1), S(j)");
  Program p;
  p.rules.push_back(r);
  check_round_trip(p);
}

TEST_CASE("match with optional semicolons and trailing conjunct") {
  auto a = parse_ok("Q(v, j) := match j case 0 -> v=1; case 1 -> v=2");
  auto b = parse_ok("Q(v, j) := match j case 0 -> v=1 case 1 -> v=2");
  CHECK(equal(a, b));
  // After the match ends, `or` continues the surrounding disjunction.
  auto c = parse_ok("Q(v, j) := match j case 0 -> v=1 or S(j)");
  CHECK(std::holds_alternative<Disjunction>(c.rules[0].constraint->node));
}

TEST_CASE("facts and literals") {
  check_round_trip("R(1, 2) := true\nS(\"a b\", 1.5) := true\nB() := false");
  auto p = parse_ok("V(1) := 2.0 if true");
  REQUIRE(p.rules[0].expr);
  const auto& lit = std::get<Literal>(p.rules[0].expr->node);
  CHECK(std::holds_alternative<double>(lit.value));
  CHECK(print(p.rules[0]) == "V(1) := 2.0 if true");
}

TEST_CASE("string escapes round-trip") {
  check_round_trip("Q(a) := R(a), a=\"x\\ny\", b=\"q\\\"t\\\\u\"");
}

TEST_CASE("float printing keeps floats lexically float") {
  CHECK(print_scalar(Scalar{2.0}) == "2.0");
  CHECK(print_scalar(Scalar{0.5}) == "0.5");
  CHECK(print_scalar(Scalar{1e30}) == "1e+30");
  CHECK(print_scalar(Scalar{std::int64_t{2}}) == "2");
  CHECK(print_scalar(Scalar{true}) == "true");
  CHECK(print_scalar(Scalar{std::string{"a\"b"}}) == "\"a\\\"b\"");
}

TEST_CASE("wildcards print back as underscores") {
  auto p = parse_ok("card(B_O, n, _)\nQ(a) := R(_, a)");
  CHECK(print(p) == "card(B_O, n, _)\nQ(a) := R(_, a)\n");
  check_round_trip(p);
}

TEST_CASE("identifiers may contain primes and underscores") {
  check_round_trip("Q(b, b') := R_1(b), R_1(b'), b=b'");
}

TEST_CASE("syntax errors carry location and code") {
  auto r = parse("Q(a) :=");
  REQUIRE_FALSE(r.ok());
  CHECK(r.errors()[0].code == "P001");
  CHECK(r.errors()[0].line == 1);

  CHECK(first_error_code("Q(a) := R(a,)") == "P001");
  CHECK(first_error_code("Q(a) := R(a") == "P001");
  CHECK(first_error_code("Q(a) = R(a)") == "P001");
  CHECK(first_error_code("Q(a) := R(a) extra") == "P001");
  CHECK(first_error_code("Q(a) := \"unterminated") == "P001");
  CHECK(first_error_code("{ never closed") == "P001");
  CHECK(first_error_code("Q(a) := R(a), a=\"\\q\"") == "P004");
  CHECK(first_error_code("Q(a) := R(a), a=99999999999999999999") == "P004");
  CHECK(first_error_code("_1(a) := R(a)") == "P001");
}

TEST_CASE("reserved keywords are rejected with a dedicated code") {
  for (const char* kw : {"while", "limit", "top", "UID", "round", "and"}) {
    auto r = parse(std::string("Q(a) := R(a), ") + kw + "(a)");
    REQUIRE_FALSE(r.ok());
    CHECK(r.errors()[0].code == "P002");
  }
  // Builtin names cannot be used as plain identifiers.
  CHECK(first_error_code("Q(a) := R(a), b=sum") == "P002");
  CHECK(first_error_code("card(a) := R(a)") == "P001");
}

TEST_CASE("deep nesting fails gracefully") {
  std::string deep = "Q(a) := ";
  for (int i = 0; i < 600; ++i) deep += "not(";
  deep += "R(a)";
  for (int i = 0; i < 600; ++i) deep += ")";
  auto r = parse(deep);
  REQUIRE_FALSE(r.ok());
  CHECK(r.errors()[0].code == "P003");
}

TEST_CASE("parser is total on hostile inputs") {
  std::mt19937 rng(7);
  const std::string alphabet =
      "abQR(),:=<->+*/[]{}\"'._;# \n\t0123456789\\ificasematchortrue";
  for (int iter = 0; iter < 600; ++iter) {
    std::string s;
    int len = rng() % 80;
    for (int i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
    auto r = parse(s);  // must not crash or loop
    if (r.ok()) check_round_trip(r.value());
  }
  // Mutations of a valid program.
  std::string base = "Y(i) := x*w+b if x=X(i), w=W(i), b=B(i), 0<=i<4";
  for (int iter = 0; iter < 300; ++iter) {
    std::string s = base;
    int edits = 1 + rng() % 3;
    for (int e = 0; e < edits; ++e) {
      size_t pos = rng() % s.size();
      switch (rng() % 3) {
        case 0: s.erase(pos, 1); break;
        case 1: s.insert(pos, 1, alphabet[rng() % alphabet.size()]); break;
        default: s[pos] = alphabet[rng() % alphabet.size()];
      }
    }
    auto r = parse(s);
    if (r.ok()) check_round_trip(r.value());
  }
}

TEST_CASE("random ASTs round-trip through print and parse") {
  for (std::uint32_t seed = 0; seed < 200; ++seed) {
    hojabr::test::AstGen gen(seed);
    check_round_trip(gen.program());
  }
}

TEST_CASE("program JSON dump is well-formed and typed") {
  auto p = parse_ok("card(R, 2)\nQ(a) := sum(v) if v=R(a, _)");
  std::string j = program_to_json(p);
  CHECK(j.find("\"kind\":\"eei\"") != std::string::npos);
  CHECK(j.find("\"declarations\"") != std::string::npos);
  CHECK(j.find("\"cei\"") != std::string::npos);
}

TEST_CASE("corpus files parse, quasi-round-trip, and desugar") {
  namespace fs = std::filesystem;
  fs::path dir = HOJABR_CORPUS_DIR;
  REQUIRE(fs::exists(dir));
  int count = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".hjb") continue;
    ++count;
    std::ifstream in(entry.path());
    std::stringstream ss;
    ss << in.rdbuf();
    std::string source = ss.str();
    INFO("corpus file: ", entry.path().string());
    auto p = parse(source);
    if (!p.ok()) {
      for (const auto& d : p.errors()) MESSAGE(format_diagnostic(d));
    }
    REQUIRE(p.ok());
    std::string printed = print(p.value());
    CHECK(strip_ws(printed) == strip_ws(source));
    check_round_trip(p.value());
    CHECK(desugar(p.value()).ok());
  }
  CHECK(count >= 9);
}
