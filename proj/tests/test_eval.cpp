// Evaluator tests: plan interpretation, semiring derivation combining,
// extension functions, actions, and the naive/semi-naive fixpoint engine.
//
// Pinned values document the evaluation semantics (zero-elision reads,
// type-exact key matching, bag/tensor addition); property sections compare
// the engine against brute-force semantic oracles.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hojabr/check.hpp"
#include "hojabr/eval.hpp"
#include "hojabr/io.hpp"
#include "hojabr/syntax.hpp"

using namespace hojabr;

namespace {

Scalar iv(std::int64_t v) { return Scalar{v}; }
Scalar dv(double v) { return Scalar{v}; }

Key ik(std::initializer_list<std::int64_t> comps) {
  Key k;
  for (auto c : comps) k.push_back(Scalar{c});
  return k;
}

RelPtr mk(std::vector<int> levels, SemiringKind kind,
          std::vector<std::pair<Key, Scalar>> entries) {
  auto rel = std::make_shared<RelationValue>(levels, kind);
  for (auto& [k, v] : entries) rel->merge(k, v);
  return rel;
}

Program parsed(const std::string& src) {
  auto r = parse(src);
  if (!r.ok()) {
    for (const auto& d : r.errors()) MESSAGE(format_diagnostic(d));
  }
  REQUIRE(r.ok());
  return r.take();
}

std::string diag_text(const Diagnostics& ds) {
  std::string out;
  for (const auto& d : ds) out += format_diagnostic(d) + "\n";
  return out;
}

RunResult must_run(const std::string& src, const Database& db,
                   EvalConfig cfg = {}) {
  auto r = run_program(parsed(src), db, cfg);
  if (!r.ok()) MESSAGE(diag_text(r.errors()));
  REQUIRE(r.ok());
  return r.take();
}

std::string run_error_code(const std::string& src, const Database& db,
                           EvalConfig cfg = {}) {
  auto r = run_program(parsed(src), db, cfg);
  REQUIRE(!r.ok());
  return r.errors()[0].code;
}

std::string dumped(const RunResult& rr, const std::string& name) {
  auto rel = rr.db.relation(name);
  REQUIRE(rel);
  return dump_relation(*rel);
}

std::optional<Scalar> find_entry(const RelationValue& rel, const Key& flat) {
  for (const auto& [k, v] : rel.entries_flat())
    if (k.size() == flat.size() &&
        std::equal(k.begin(), k.end(), flat.begin(),
                   [](const Scalar& a, const Scalar& b) {
                     return a.index() == b.index() && a == b;
                   }))
      return v;
  return std::nullopt;
}

double payload_num(const RunResult& rr, const std::string& name,
                   const Key& flat) {
  auto rel = rr.db.relation(name);
  REQUIRE(rel);
  auto v = find_entry(*rel, flat);
  REQUIRE(v);
  if (const auto* i = std::get_if<std::int64_t>(&*v))
    return static_cast<double>(*i);
  return std::get<double>(*v);
}

std::string corpus_file(const std::string& name) {
  auto r = read_file(std::string(HOJABR_CORPUS_DIR) + "/" + name);
  REQUIRE(r.ok());
  return r.take();
}

}  // namespace

// ===================================================================
// Extension functions
// ===================================================================

TEST_CASE("scalar extension functions") {
  auto r = eval_eei("relu", {iv(-3)});
  REQUIRE(r.ok());
  CHECK(std::get<std::int64_t>(r.value()) == 0);
  r = eval_eei("relu", {iv(2)});
  CHECK(std::get<std::int64_t>(r.value()) == 2);
  r = eval_eei("relu", {dv(-0.5)});
  CHECK(std::get<double>(r.value()) == 0.0);
  r = eval_eei("sin", {dv(0.0)});
  CHECK(std::get<double>(r.value()) == doctest::Approx(0.0));
  r = eval_eei("cos", {iv(0)});
  CHECK(std::get<double>(r.value()) == doctest::Approx(1.0));
  CHECK(!eval_eei("sin", {dv(1.0), dv(2.0)}).ok());     // arity
  CHECK(!eval_eei("mystery", {dv(1.0)}).ok());          // unknown
  CHECK(!eval_eei("sum", {Scalar{true}}).ok());         // non-numeric
}

TEST_CASE("aggregates over explicit groups") {
  auto r = eval_eei("sum", {iv(1), iv(2), iv(3)});
  CHECK(std::get<std::int64_t>(r.value()) == 6);
  r = eval_eei("sum", {});
  CHECK(std::get<std::int64_t>(r.value()) == 0);  // additive identity
  r = eval_eei("sum", {iv(1), dv(2.5)});
  CHECK(std::get<double>(r.value()) == doctest::Approx(3.5));
  r = eval_eei("avg", {iv(1), iv(2)});
  CHECK(std::get<double>(r.value()) == doctest::Approx(1.5));
  r = eval_eei("min", {iv(4), dv(1.5), iv(3)});
  CHECK(std::get<double>(r.value()) == doctest::Approx(1.5));
  r = eval_eei("max", {iv(4), dv(1.5), iv(3)});
  CHECK(std::get<std::int64_t>(r.value()) == 4);  // original scalar kept

  r = eval_eei("median", {iv(1), iv(3), iv(2)});
  CHECK(std::get<std::int64_t>(r.value()) == 2);
  r = eval_eei("median", {iv(1), iv(2), iv(3), iv(4)});
  CHECK(std::get<std::int64_t>(r.value()) == 2);  // integer midpoint
  r = eval_eei("median", {dv(1.0), dv(2.0)});
  CHECK(std::get<double>(r.value()) == doctest::Approx(1.5));

  auto bad = eval_eei("median", {});
  REQUIRE(!bad.ok());
  CHECK(bad.errors()[0].code == diag::EmptyMedian);
  CHECK(!eval_eei("avg", {}).ok());
}

TEST_CASE("softmax is numerically stable") {
  auto s = eval_softmax({0.0, 0.0});
  REQUIRE(s.size() == 2);
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));
  s = eval_softmax({1000.0, 1000.0});  // naive exp overflows here
  CHECK(s[0] == doctest::Approx(0.5));
  s = eval_softmax({});
  CHECK(s.empty());
  s = eval_softmax({1.0, 3.0});
  double e1 = std::exp(1.0 - 3.0), e3 = 1.0;
  CHECK(s[0] == doctest::Approx(e1 / (e1 + e3)));
  CHECK(s[1] == doctest::Approx(e3 / (e1 + e3)));
}

// ===================================================================
// Joins, filters, negation, disjunction
// ===================================================================

TEST_CASE("nested-loop join with an equality filter") {
  Database db;
  db.install("R", mk({2}, SemiringKind::Boolean,
                     {{ik({1, 10}), Scalar{true}}, {ik({2, 10}), Scalar{true}}}));
  db.install("S", mk({2}, SemiringKind::Boolean, {{ik({10, 7}), Scalar{true}}}));
  auto rr = must_run("Q(a, b, c) := R(a, b), S(b', c), (b = b')", db);
  CHECK(dumped(rr, "Q") == "(1, 10, 7) -> true\n(2, 10, 7) -> true\n");

  // Instrumentation: the planner scans the smaller S (1 entry) in the outer
  // loop, then scans R (2 entries) once for the single S tuple: 1 + 2 = 3.
  REQUIRE(rr.report.rules.size() == 1);
  CHECK(rr.report.rules[0].head == "Q");
  CHECK(rr.report.rules[0].derivations == 2);
  CHECK(rr.report.rules[0].enumerations == 3);
  CHECK(rr.report.rules[0].outputSize == 2);
}

TEST_CASE("negation passes when no inner extension exists") {
  Database db;
  db.install("V", mk({1}, SemiringKind::Boolean,
                     {{ik({1}), Scalar{true}},
                      {ik({2}), Scalar{true}},
                      {ik({3}), Scalar{true}}}));
  db.install("Bad", mk({1}, SemiringKind::Boolean, {{ik({2}), Scalar{true}}}));
  auto rr = must_run("Q(x) := V(x), not(Bad(x))", db);
  CHECK(dumped(rr, "Q") == "(1) -> true\n(3) -> true\n");

  // Ground negation over an absent key.
  auto rr2 = must_run("P() := not(Bad(5))", db);
  CHECK(rr2.db.relation("P")->entry_count() == 1);
  auto rr3 = must_run("P() := not(Bad(2))", db);
  CHECK(rr3.db.relation("P")->entry_count() == 0);
}

TEST_CASE("disjunction deduplicates over its visible variables") {
  Database db;
  auto rr = must_run("D(x) := (x = 1) or (x = 1)", db);
  CHECK(dumped(rr, "D") == "(1) -> true\n");
  CHECK(rr.report.rules[0].derivations == 1);
}

TEST_CASE("trie join over two-level relations") {
  Database db;
  db.install("Rh", mk({1, 1}, SemiringKind::Boolean,
                      {{ik({1, 1}), Scalar{true}}, {ik({1, 2}), Scalar{true}}}));
  db.install("Sh", mk({1, 1}, SemiringKind::Boolean, {{ik({1, 9}), Scalar{true}}}));
  db.install("T", mk({1}, SemiringKind::Boolean,
                     {{ik({1}), Scalar{true}}, {ik({2}), Scalar{true}}}));
  auto rr = must_run("Q(a, b, c) := Rh(a)(b), Sh(a)(c), T(b)", db);
  CHECK(dumped(rr, "Q") == "(1, 1, 9) -> true\n(1, 2, 9) -> true\n");
}

// ===================================================================
// Arithmetic and payload reads
// ===================================================================

TEST_CASE("integer arithmetic stays integral; division truncates") {
  Database db;
  auto rr = must_run("A() := 7 / 2 if true", db);
  auto v = find_entry(*rr.db.relation("A"), {});
  REQUIRE(v);
  CHECK(std::get<std::int64_t>(*v) == 3);

  auto rr2 = must_run("B() := 1 + 0.5 if true", db);
  CHECK(payload_num(rr2, "B", {}) == doctest::Approx(1.5));

  auto rr3 = must_run("C() := 0 - v if v = M()",
                      [] {
                        Database d;
                        d.install("M", mk({0}, SemiringKind::Natural,
                                          {{{}, iv(4)}}));
                        return d;
                      }());
  auto c = find_entry(*rr3.db.relation("C"), {});
  REQUIRE(c);
  CHECK(std::get<std::int64_t>(*c) == -4);
}

TEST_CASE("division by zero is a runtime error naming the rule") {
  Database db;
  db.install("Z", mk({0}, SemiringKind::Natural, {}));  // empty: Z() reads 0
  auto r = run_program(parsed("B() := 1 / z if z = Z()"), db, {});
  REQUIRE(!r.ok());
  CHECK(r.errors()[0].code == diag::DivisionByZero);
  CHECK(r.errors()[0].rule == "B");

  Database db2;
  db2.install("W", mk({1}, SemiringKind::Real, {}));
  CHECK(run_error_code("B() := 1.0 / v if v = W(0)", db2) ==
        diag::DivisionByZero);
}

TEST_CASE("absent keys read the semiring zero; zero payloads are elided") {
  Database db;
  db.install("V", mk({1}, SemiringKind::Boolean, {{ik({0}), Scalar{true}}}));
  db.install("X", mk({1}, SemiringKind::Real, {}));  // declared, empty
  auto rr = must_run("G(i) := v + 10.0 if V(i), v = X(i)", db);
  CHECK(payload_num(rr, "G", ik({0})) == doctest::Approx(10.0));

  // A derived zero contributes nothing, so the entry never materializes.
  auto rr2 = must_run("H(i) := 0.0 if V(i)", db);
  CHECK(rr2.db.relation("H")->entry_count() == 0);
}

TEST_CASE("key identity is type-exact end to end") {
  Database db;
  // Key 1 (int) and key 1.0 (float) are distinct entries; scanning must
  // carry both through without collapsing them.
  auto rel = std::make_shared<RelationValue>(std::vector<int>{1},
                                             SemiringKind::Real);
  rel->merge({iv(1)}, dv(10.0));
  rel->merge({dv(1.0)}, dv(20.0));
  db.install("K", rel);
  auto rr = must_run("Q(x) := v if v = K(x)", db);
  auto q = rr.db.relation("Q");
  REQUIRE(q);
  CHECK(q->entry_count() == 2);
  auto intKey = find_entry(*q, {iv(1)});
  auto floatKey = find_entry(*q, {dv(1.0)});
  REQUIRE(intKey);
  REQUIRE(floatKey);
  CHECK(std::get<double>(*intKey) == doctest::Approx(10.0));
  CHECK(std::get<double>(*floatKey) == doctest::Approx(20.0));

  // A ground integer probe reaches only the integer-keyed entry.
  auto rr2 = must_run("P() := v if v = K(1)", db);
  CHECK(payload_num(rr2, "P", {}) == doctest::Approx(10.0));
}

// ===================================================================
// Head card / order directives
// ===================================================================

TEST_CASE("elementwise product over dense data with a head shape") {
  Database db;
  auto b = load_dense_json("B", R"({"shape": [2, 2], "data": [1, 2, 3, 4]})",
                           {1, 1});
  REQUIRE(b.ok());
  db.install(b.value().name, b.value().rel, b.value().schema);
  auto c = load_dense_json("C", R"({"shape": [2], "data": [5, 6]})", {1});
  REQUIRE(c.ok());
  db.install(c.value().name, c.value().rel, c.value().schema);

  auto rr = must_run(
      "A(i)(j) := B(i)(j) * C(j) if card(B, n, m), card(C, m), "
      "card(A, n, m), 0 <= i < n, 0 <= j < m",
      db);
  CHECK(dumped(rr, "A") ==
        "(0, 0) -> 5.0\n(0, 1) -> 12.0\n(1, 0) -> 15.0\n(1, 1) -> 24.0\n");
  const RelationSchema* schema = rr.db.schema("A");
  REQUIRE(schema);
  CHECK(schema->shape == std::vector<std::size_t>{2, 2});

  // A ground card dimension that disagrees with the data fails the rule.
  auto rr2 = must_run(
      "A2(i)(j) := B(i)(j) if card(B, n, 3), 0 <= i < n, 0 <= j < 3", db);
  CHECK(rr2.db.relation("A2")->entry_count() == 0);
}

TEST_CASE("single-argument head card caps the output in key order") {
  Database db;
  db.install("V", mk({1}, SemiringKind::Boolean,
                     {{ik({3}), Scalar{true}},
                      {ik({1}), Scalar{true}},
                      {ik({2}), Scalar{true}}}));
  auto rr = must_run("Top(x) := V(x), card(Top, 2)", db);
  CHECK(dumped(rr, "Top") == "(1) -> true\n(2) -> true\n");

  auto rr2 = must_run("Ord(x) := V(x), order(x)", db);
  const RelationSchema* schema = rr2.db.schema("Ord");
  REQUIRE(schema);
  CHECK(schema->layout == LayoutKind::Ordered);
  CHECK(rr2.db.relation("Ord")->entry_count() == 3);
}

// ===================================================================
// Aggregates and softmax in rule heads
// ===================================================================

TEST_CASE("aggregate heads group by the head key") {
  Database db;
  db.install("G", mk({2}, SemiringKind::Real,
                     {{ik({0, 0}), dv(1.0)},
                      {ik({0, 1}), dv(2.0)},
                      {ik({1, 0}), dv(5.0)}}));
  auto rr = must_run("T(g) := sum(v) if v = G(g, i)", db);
  CHECK(payload_num(rr, "T", ik({0})) == doctest::Approx(3.0));
  CHECK(payload_num(rr, "T", ik({1})) == doctest::Approx(5.0));

  Database db2;
  db2.install("G", mk({2}, SemiringKind::Natural,
                      {{ik({0, 0}), iv(4)},
                       {ik({0, 1}), iv(1)},
                       {ik({0, 2}), iv(3)}}));
  auto mn = must_run("M(g) := min(v) if v = G(g, i)", db2);
  CHECK(payload_num(mn, "M", ik({0})) == 1);
  auto mx = must_run("M(g) := max(v) if v = G(g, i)", db2);
  CHECK(payload_num(mx, "M", ik({0})) == 4);
  auto av = must_run("M(g) := avg(v) if v = G(g, i)", db2);
  CHECK(payload_num(av, "M", ik({0})) == doctest::Approx(8.0 / 3.0));
  auto md = must_run("M(g) := median(v) if v = G(g, i)", db2);
  CHECK(payload_num(md, "M", ik({0})) == 3);
}

TEST_CASE("bag semantics: integer payloads count derivations") {
  Database db;
  db.install("G", mk({2}, SemiringKind::Natural,
                     {{ik({0, 0}), iv(4)},
                      {ik({0, 1}), iv(1)},
                      {ik({0, 2}), iv(3)}}));
  auto rr = must_run("C(g) := 1 if G(g, i)", db);
  auto v = find_entry(*rr.db.relation("C"), ik({0}));
  REQUIRE(v);
  CHECK(std::get<std::int64_t>(*v) == 3);  // one per enumerated row
}

TEST_CASE("softmax head normalizes within the last key position") {
  Database db;
  db.install("X", mk({1}, SemiringKind::Real,
                     {{ik({0}), dv(1.0)}, {ik({1}), dv(1.0)}}));
  auto rr = must_run("S(i) := softmax(v) if v = X(i)", db);
  CHECK(payload_num(rr, "S", ik({0})) == doctest::Approx(0.5));
  CHECK(payload_num(rr, "S", ik({1})) == doctest::Approx(0.5));

  Database db2;
  db2.install("X", mk({2}, SemiringKind::Real,
                      {{ik({0, 0}), dv(1.0)},
                       {ik({0, 1}), dv(3.0)},
                       {ik({1, 0}), dv(2.0)}}));
  auto rr2 = must_run("S(g, i) := softmax(v) if v = X(g, i)", db2);
  double e1 = std::exp(1.0 - 3.0), e3 = 1.0;
  CHECK(payload_num(rr2, "S", ik({0, 0})) == doctest::Approx(e1 / (e1 + e3)));
  CHECK(payload_num(rr2, "S", ik({0, 1})) == doctest::Approx(e3 / (e1 + e3)));
  CHECK(payload_num(rr2, "S", ik({1, 0})) == doctest::Approx(1.0));

  // Zero-ary head: the single combined value normalizes to one.
  Database db3;
  db3.install("X", mk({0}, SemiringKind::Real, {{{}, dv(5.0)}}));
  auto rr3 = must_run("S() := softmax(v) if v = X()", db3);
  CHECK(payload_num(rr3, "S", {}) == doctest::Approx(1.0));

  // Derivations for the same key combine before normalization.
  Database db4;
  db4.install("X", mk({2}, SemiringKind::Real,
                      {{ik({0, 0}), dv(1.0)},
                       {ik({0, 1}), dv(2.0)},
                       {ik({1, 0}), dv(3.0)}}));
  auto rr4 = must_run("S(i) := softmax(v) if v = X(i, j)", db4);
  CHECK(payload_num(rr4, "S", ik({0})) == doctest::Approx(0.5));
  CHECK(payload_num(rr4, "S", ik({1})) == doctest::Approx(0.5));
}

// ===================================================================
// Match sugar and valued disjunctions
// ===================================================================

TEST_CASE("match desugars to a disjunction over the scrutinee") {
  Database db;
  db.install("J", mk({3}, SemiringKind::Boolean, {{ik({0, 7, 9}), Scalar{true}}}));
  auto rr = must_run(
      "X(i, j) := v if J(i, a, b), match j case 0 -> v = a case 1 -> v = b",
      db);
  CHECK(dumped(rr, "X") == "(0, 0) -> 7\n(0, 1) -> 9\n");
}

TEST_CASE("strict mode warns when valued disjunct keys overlap") {
  Database db;
  db.install("X", mk({1}, SemiringKind::Real, {{ik({0}), dv(1.0)}}));
  db.install("Y", mk({1}, SemiringKind::Real, {{ik({0}), dv(2.0)}}));
  EvalConfig strict;
  strict.strict = true;
  auto rr = must_run("B(i) := b if b = X(i) or b = Y(i)", db, strict);
  CHECK(payload_num(rr, "B", ik({0})) == doctest::Approx(3.0));  // adds
  bool warned = false;
  for (const auto& w : rr.warnings)
    if (w.code == diag::ValuedDisjunctOverlap) warned = true;
  CHECK(warned);

  // Without strict mode the overlap still adds, silently.
  auto rr2 = must_run("B(i) := b if b = X(i) or b = Y(i)", db);
  CHECK(payload_num(rr2, "B", ik({0})) == doctest::Approx(3.0));
  for (const auto& w : rr2.warnings)
    CHECK(w.code != diag::ValuedDisjunctOverlap);

  // Key-disjoint branches do not warn.
  Database db2;
  db2.install("X", mk({1}, SemiringKind::Real, {{ik({0}), dv(1.0)}}));
  db2.install("Y", mk({1}, SemiringKind::Real, {{ik({1}), dv(2.0)}}));
  auto rr3 = must_run("B(i) := b if b = X(i) or b = Y(i)", db2, strict);
  for (const auto& w : rr3.warnings)
    CHECK(w.code != diag::ValuedDisjunctOverlap);
  CHECK(payload_num(rr3, "B", ik({0})) == doctest::Approx(1.0));
  CHECK(payload_num(rr3, "B", ik({1})) == doctest::Approx(2.0));
}

// ===================================================================
// Actions
// ===================================================================

TEST_CASE("imperative actions apply in textual order after definitions") {
  Database db;
  db.install("V", mk({1}, SemiringKind::Boolean,
                     {{ik({1}), Scalar{true}}, {ik({2}), Scalar{true}}}));
  db.install("One", mk({1}, SemiringKind::Boolean, {{ik({1}), Scalar{true}}}));
  db.install("Three", mk({1}, SemiringKind::Boolean, {{ik({3}), Scalar{true}}}));

  auto rr = must_run(
      "Acc(x) := V(x)\n"
      "Acc(x) -= One(x)\n"
      "Acc(x) += Three(x)",
      db);
  CHECK(dumped(rr, "Acc") == "(2) -> true\n(3) -> true\n");

  auto rr2 = must_run(
      "R(x) := V(x)\n"
      "R(x) <- One(x)",
      db);
  CHECK(dumped(rr2, "R") == "(1) -> true\n");
}

TEST_CASE("add action combines payloads through the semiring") {
  Database db;
  db.install("V", mk({1}, SemiringKind::Boolean,
                     {{ik({1}), Scalar{true}}, {ik({2}), Scalar{true}}}));
  db.install("W", mk({1}, SemiringKind::Boolean, {{ik({2}), Scalar{true}}}));
  auto rr = must_run(
      "N(x) := 1 if V(x)\n"
      "N(x) += 2 if W(x)",
      db);
  CHECK(dumped(rr, "N") == "(1) -> 1\n(2) -> 3\n");

  Database db2;
  db2.install("X", mk({1}, SemiringKind::Real, {{ik({0}), dv(2.0)}}));
  db2.install("T", mk({1}, SemiringKind::Boolean, {{ik({0}), Scalar{true}}}));
  auto rr2 = must_run("X(i) += 3.0 if T(i)", db2);
  CHECK(payload_num(rr2, "X", ik({0})) == doctest::Approx(5.0));
}

TEST_CASE("apply_action removes via monus and replaces wholesale") {
  Database db;
  db.install("N", mk({1}, SemiringKind::Natural, {{ik({5}), iv(3)}}));
  auto delta = mk({1}, SemiringKind::Natural, {{ik({5}), iv(10)}});
  apply_action(db, "N", *delta, Action::Remove);
  CHECK(db.relation("N")->entry_count() == 0);  // monus floors at zero

  apply_action(db, "N", *delta, Action::Add);
  CHECK(std::get<std::int64_t>(*find_entry(*db.relation("N"), ik({5}))) == 10);

  auto other = mk({1}, SemiringKind::Natural, {{ik({7}), iv(1)}});
  apply_action(db, "N", *other, Action::Replace);
  CHECK(dump_relation(*db.relation("N")) == "(7) -> 1\n");

  // Removing from an absent relation is a no-op.
  apply_action(db, "Ghost", *delta, Action::Remove);
  CHECK(!db.has("Ghost"));
}

// ===================================================================
// Fixpoints
// ===================================================================

namespace {

const char* kTcProgram =
    "T(x, y) := E(x, y)\n"
    "T(x, z) := T(x, y), E(y, z)";

Database edge_db(const std::vector<std::pair<int, int>>& edges) {
  Database db;
  auto rel = std::make_shared<RelationValue>(std::vector<int>{2},
                                             SemiringKind::Boolean);
  for (auto [a, b] : edges) rel->merge(ik({a, b}), Scalar{true});
  Database out;
  out.install("E", rel);
  return out;
}

std::set<std::pair<int, int>> warshall(
    int n, const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
  for (auto [a, b] : edges) reach[a][b] = true;
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (reach[i][k] && reach[k][j]) reach[i][j] = true;
  std::set<std::pair<int, int>> out;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (reach[i][j]) out.emplace(i, j);
  return out;
}

std::set<std::pair<int, int>> pairs_of(const RelationValue& rel) {
  std::set<std::pair<int, int>> out;
  for (const auto& [k, v] : rel.entries_flat()) {
    (void)v;
    out.emplace(static_cast<int>(std::get<std::int64_t>(k[0])),
                static_cast<int>(std::get<std::int64_t>(k[1])));
  }
  return out;
}

}  // namespace

TEST_CASE("transitive closure reaches a fixpoint in both modes") {
  std::vector<std::pair<int, int>> edges{{1, 2}, {2, 3}};
  for (auto mode : {EvalConfig::Mode::Naive, EvalConfig::Mode::SemiNaive}) {
    EvalConfig cfg;
    cfg.mode = mode;
    auto rr = must_run(kTcProgram, edge_db(edges), cfg);
    CHECK(dumped(rr, "T") == "(1, 2) -> true\n(1, 3) -> true\n(2, 3) -> true\n");
    REQUIRE(rr.report.strataIterations.size() == 1);
    CHECK(rr.report.strataIterations[0] == 3);
  }
}

TEST_CASE("empty input converges in one round") {
  auto rr = must_run(kTcProgram, edge_db({}));
  CHECK(rr.db.relation("T")->entry_count() == 0);
  CHECK(rr.report.strataIterations[0] == 1);
}

TEST_CASE("cycles close onto themselves") {
  auto rr = must_run(kTcProgram, edge_db({{0, 1}, {1, 0}}));
  CHECK(pairs_of(*rr.db.relation("T")) ==
        std::set<std::pair<int, int>>{{0, 0}, {0, 1}, {1, 0}, {1, 1}});
}

TEST_CASE("iteration cap raises a non-termination error") {
  EvalConfig cfg;
  cfg.maxIterations = 2;
  auto r = run_program(parsed(kTcProgram), edge_db({{1, 2}, {2, 3}}), cfg);
  REQUIRE(!r.ok());
  CHECK(r.errors()[0].code == diag::NonTermination);
}

TEST_CASE("semi-naive matches naive against a reachability oracle") {
  std::mt19937 rng(4242);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 2 + static_cast<int>(rng() % 11);  // up to 12 nodes
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (rng() % 4 == 0) edges.emplace_back(i, j);
    auto oracle = warshall(n, edges);
    Database db = edge_db(edges);
    EvalConfig naive;
    naive.mode = EvalConfig::Mode::Naive;
    EvalConfig semi;
    semi.mode = EvalConfig::Mode::SemiNaive;
    semi.derivationCounting = true;  // enable the monotonicity self-check
    auto rn = must_run(kTcProgram, db, naive);
    auto rs = must_run(kTcProgram, db, semi);
    CHECK(pairs_of(*rn.db.relation("T")) == oracle);
    CHECK(pairs_of(*rs.db.relation("T")) == oracle);
    CHECK(rs.report.strataIterations[0] == rn.report.strataIterations[0]);
  }
}

TEST_CASE("semi-naive enumerates strictly less on a chain") {
  std::vector<std::pair<int, int>> chain;
  for (int i = 0; i < 5; ++i) chain.emplace_back(i, i + 1);
  Database db = edge_db(chain);
  EvalConfig naive;
  naive.mode = EvalConfig::Mode::Naive;
  EvalConfig semi;
  semi.mode = EvalConfig::Mode::SemiNaive;
  auto rn = must_run(kTcProgram, db, naive);
  auto rs = must_run(kTcProgram, db, semi);
  CHECK(pairs_of(*rn.db.relation("T")) == pairs_of(*rs.db.relation("T")));
  std::int64_t naiveWork =
      rn.report.rules[0].enumerations + rn.report.rules[1].enumerations;
  std::int64_t semiWork =
      rs.report.rules[0].enumerations + rs.report.rules[1].enumerations;
  CHECK(semiWork < naiveWork);
}

TEST_CASE("recursion inside a disjunction falls back to full rounds") {
  auto src = "T(x, y) := E(x, y) or (T(x, z), E(z, y))";
  std::vector<std::pair<int, int>> edges{{0, 1}, {1, 2}, {2, 3}, {3, 1}};
  auto oracle = warshall(4, edges);
  for (auto mode : {EvalConfig::Mode::Naive, EvalConfig::Mode::SemiNaive}) {
    EvalConfig cfg;
    cfg.mode = mode;
    auto rr = must_run(src, edge_db(edges), cfg);
    CHECK(pairs_of(*rr.db.relation("T")) == oracle);
  }
}

TEST_CASE("later strata read earlier fixpoints; empty program is a no-op") {
  Database db = edge_db({{1, 2}, {2, 3}});
  auto rr = must_run(
      "T(x, y) := E(x, y)\n"
      "T(x, z) := T(x, y), E(y, z)\n"
      "Reach1(y) := T(1, y)",
      db);
  CHECK(dumped(rr, "Reach1") == "(2) -> true\n(3) -> true\n");

  auto rr2 = must_run("", db);
  CHECK(rr2.db.names() == db.names());
  CHECK(rr2.report.rules.empty());
}

// ===================================================================
// Runtime diagnostics
// ===================================================================

TEST_CASE("reading an undefined, unloaded relation is a runtime error") {
  Database db;
  db.install("V", mk({1}, SemiringKind::Boolean, {{ik({1}), Scalar{true}}}));
  CHECK(run_error_code("Q(x) := V(x), Mystery(x)", db) ==
        diag::MissingRelation);
}

TEST_CASE("derived integrity violations warn, and error under strict") {
  Database db;
  db.install("V", mk({2}, SemiringKind::Boolean,
                     {{ik({1, 10}), Scalar{true}}, {ik({1, 20}), Scalar{true}}}));
  std::string src =
      "D(x, y) := V(x, y)\n"
      "pkey(D, 1)";
  auto rr = must_run(src, db);
  bool warned = false;
  for (const auto& w : rr.warnings)
    if (w.code == diag::IntegrityPkey) warned = true;
  CHECK(warned);

  EvalConfig strict;
  strict.strict = true;
  CHECK(run_error_code(src, db, strict) == diag::IntegrityPkey);
}

// ===================================================================
// Single-rule API
// ===================================================================

TEST_CASE("eval_rule materializes one rule without touching the database") {
  Database db;
  db.install("V", mk({1}, SemiringKind::Boolean,
                     {{ik({1}), Scalar{true}}, {ik({2}), Scalar{true}}}));
  auto cp = check_program(parsed("Q(x) := V(x)"), &db);
  REQUIRE(cp.ok());
  RuleStats stats;
  auto rel = eval_rule(cp.value(), 0, db, {}, &stats);
  REQUIRE(rel.ok());
  CHECK(dump_relation(*rel.value()) == "(1) -> true\n(2) -> true\n");
  CHECK(stats.derivations == 2);
  CHECK(!db.has("Q"));
  CHECK(!eval_rule(cp.value(), 5, db, {}).ok());
}

// ===================================================================
// Corpus programs against independent oracles
// ===================================================================

TEST_CASE("two-layer network forward pass") {
  Database db;
  auto add = [&](Result<LoadedRelation> lr) {
    REQUIRE(lr.ok());
    db.install(lr.value().name, lr.value().rel, lr.value().schema);
  };
  add(load_csv("R", "i,a\n0,1.0\n"));
  add(load_csv("S", "i,b\n0,2.0\n"));
  add(load_dense_json("W1",
                      R"({"shape": [2, 2], "data": [1.0, 0.0, 0.0, 1.0]})",
                      {1, 1}));
  add(load_dense_json("B1", R"({"shape": [2], "data": [0.0, 0.0]})", {1}));
  add(load_dense_json("W2", R"({"shape": [2], "data": [1.0, 1.0]})", {1}));
  db.install("B2", mk({0}, SemiringKind::Real, {}));  // zero bias

  auto rr = must_run(corpus_file("sec2_nn.hjb"), db);
  auto x = rr.db.relation("X");
  REQUIRE(x);
  CHECK(x->entry_count() == 2);
  CHECK(payload_num(rr, "X", ik({0, 0})) == doctest::Approx(1.0));
  CHECK(payload_num(rr, "X", ik({0, 1})) == doctest::Approx(2.0));
  CHECK(payload_num(rr, "Z1", ik({0, 0})) == doctest::Approx(1.0));
  CHECK(payload_num(rr, "Z1", ik({0, 1})) == doctest::Approx(2.0));
  CHECK(payload_num(rr, "H1", ik({0, 0})) == doctest::Approx(1.0));
  CHECK(payload_num(rr, "Y", ik({0})) == doctest::Approx(3.0));
}

TEST_CASE("compressed sparse row decode against the dense oracle") {
  CsrArrays csr;
  csr.n = 3;
  csr.P = {0, 2, 2, 3};
  csr.I = {0, 2, 1};
  csr.V = {5.0, 6.0, 7.0};
  Database db;
  for (auto& lr : csr_relations(csr)) db.install(lr.name, lr.rel, lr.schema);
  auto c = load_dense_json("C", R"({"shape": [3], "data": [10, 100, 1000]})",
                           {1});
  REQUIRE(c.ok());
  db.install(c.value().name, c.value().rel, c.value().schema);

  auto rr = must_run(corpus_file("fig6_csr.hjb"), db);
  // Row pointers place (0,0)=5, (0,2)=6, (2,1)=7; I(0)=0 is stored
  // implicitly as the bag zero and must decode correctly.
  CHECK(dumped(rr, "B_CSR") ==
        "(0, 0) -> 5.0\n(0, 2) -> 6.0\n(2, 1) -> 7.0\n");
  CHECK(dumped(rr, "A") ==
        "(0, 0) -> 50.0\n(0, 2) -> 6000.0\n(2, 1) -> 700.0\n");
}

TEST_CASE("structured matrix expansion against explicit materialization") {
  Database db;
  db.install("B_O", mk({1, 1}, SemiringKind::Real,
                       {{ik({0, 0}), dv(1.0)},
                        {ik({1, 0}), dv(2.0)},
                        {ik({2, 0}), dv(3.0)}}));
  db.install("C", mk({1}, SemiringKind::Real,
                     {{ik({0}), dv(10.0)},
                      {ik({1}), dv(100.0)},
                      {ik({2}), dv(1000.0)}}));
  auto rr = must_run(corpus_file("fig6_structured.hjb"), db);

  CHECK(rr.db.relation("B_R")->entry_count() == 6);
  // The replication rule tiles the stored column down the diagonals.
  std::map<std::pair<int, int>, double> expectB{
      {{0, 0}, 1}, {{1, 0}, 2}, {{2, 0}, 3},
      {{1, 1}, 1}, {{2, 1}, 2}, {{3, 1}, 3},
      {{2, 2}, 1}, {{3, 2}, 2}, {{4, 2}, 3}};
  auto b = rr.db.relation("B");
  REQUIRE(b);
  CHECK(b->entry_count() == expectB.size());
  for (const auto& [k, v] : b->entries_flat()) {
    auto it = expectB.find({static_cast<int>(std::get<std::int64_t>(k[0])),
                            static_cast<int>(std::get<std::int64_t>(k[1]))});
    REQUIRE(it != expectB.end());
    CHECK(std::get<double>(v) == doctest::Approx(it->second));
  }
  auto a = rr.db.relation("A");
  REQUIRE(a);
  CHECK(a->entry_count() == expectB.size());
  std::map<int, double> colScale{{0, 10.0}, {1, 100.0}, {2, 1000.0}};
  for (const auto& [k, v] : a->entries_flat()) {
    int i = static_cast<int>(std::get<std::int64_t>(k[0]));
    int j = static_cast<int>(std::get<std::int64_t>(k[1]));
    CHECK(std::get<double>(v) ==
          doctest::Approx(expectB.at({i, j}) * colScale.at(j)));
  }
}

// ===================================================================
// Reports and determinism
// ===================================================================

TEST_CASE("run report serializes to JSON") {
  Database db = edge_db({{1, 2}, {2, 3}});
  auto rr = must_run(kTcProgram, db);
  auto j = nlohmann::json::parse(rr.report.to_json());
  CHECK(j["rules"].size() == 2);
  CHECK(j["rules"][0]["head"] == "T");
  CHECK(j["rules"][0]["derivations"].get<std::int64_t>() > 0);
  CHECK(j["strataIterations"][0] == 3);
  CHECK(j["wallSeconds"].get<double>() >= 0.0);
}

TEST_CASE("evaluation is deterministic") {
  Database db = edge_db({{2, 1}, {1, 3}, {3, 2}, {0, 2}});
  auto a = must_run(kTcProgram, db);
  auto b = must_run(kTcProgram, db);
  CHECK(dumped(a, "T") == dumped(b, "T"));
  CHECK(a.report.strataIterations == b.report.strataIterations);
  for (std::size_t i = 0; i < a.report.rules.size(); ++i) {
    CHECK(a.report.rules[i].derivations == b.report.rules[i].derivations);
    CHECK(a.report.rules[i].enumerations == b.report.rules[i].enumerations);
  }
}

// ===================================================================
// Brute-force semantic oracle (boolean programs)
// ===================================================================

namespace {

// Random conjunctive rules over two stored boolean relations, evaluated by
// enumerating every assignment of the rule variables over the active
// domain. Boolean union makes oracle and engine agree exactly.
struct OracleCase {
  std::set<std::pair<int, int>> R;  // binary
  std::set<int> S;                  // unary
  std::vector<std::string> bodyVarsR;  // two names
  std::string bodyVarS;
  std::vector<std::string> headVars;
  bool useFilter = false;     // (first < second) over R's variables
  bool useNegation = false;   // not(S(<R second var>))
};

std::string oracle_source(const OracleCase& c) {
  std::string head = "Q(";
  for (std::size_t i = 0; i < c.headVars.size(); ++i) {
    if (i) head += ", ";
    head += c.headVars[i];
  }
  head += ")";
  std::string body = "R(" + c.bodyVarsR[0] + ", " + c.bodyVarsR[1] + "), S(" +
                     c.bodyVarS + ")";
  if (c.useFilter)
    body += ", (" + c.bodyVarsR[0] + " < " + c.bodyVarsR[1] + ")";
  if (c.useNegation) body += ", not(S(" + c.bodyVarsR[1] + "))";
  return head + " := " + body;
}

std::set<std::vector<int>> oracle_eval(const OracleCase& c,
                                       const std::vector<int>& domain) {
  std::set<std::string> varSet{c.bodyVarsR[0], c.bodyVarsR[1], c.bodyVarS};
  std::vector<std::string> vars(varSet.begin(), varSet.end());
  std::set<std::vector<int>> out;
  std::vector<int> assign(vars.size(), 0);
  std::function<void(std::size_t)> go = [&](std::size_t d) {
    if (d == vars.size()) {
      std::map<std::string, int> env;
      for (std::size_t i = 0; i < vars.size(); ++i) env[vars[i]] = assign[i];
      int a = env[c.bodyVarsR[0]], b = env[c.bodyVarsR[1]];
      if (!c.R.count({a, b})) return;
      if (!c.S.count(env[c.bodyVarS])) return;
      if (c.useFilter && !(a < b)) return;
      if (c.useNegation && c.S.count(b)) return;
      std::vector<int> tuple;
      for (const auto& h : c.headVars) tuple.push_back(env[h]);
      out.insert(tuple);
      return;
    }
    for (int v : domain) {
      assign[d] = v;
      go(d + 1);
    }
  };
  go(0);
  return out;
}

}  // namespace

TEST_CASE("random conjunctive rules match full-enumeration semantics") {
  std::mt19937 rng(991);
  std::vector<int> domain{0, 1, 2, 3};
  const std::vector<std::string> names{"a", "b", "c"};
  for (int trial = 0; trial < 80; ++trial) {
    OracleCase c;
    for (int v : domain)
      for (int w : domain)
        if (rng() % 3 == 0) c.R.emplace(v, w);
    for (int v : domain)
      if (rng() % 2 == 0) c.S.insert(v);
    c.bodyVarsR = {names[rng() % 3], names[rng() % 3]};
    c.bodyVarS = names[rng() % 3];
    std::set<std::string> positive{c.bodyVarsR[0], c.bodyVarsR[1], c.bodyVarS};
    std::vector<std::string> pool(positive.begin(), positive.end());
    std::size_t nHead = 1 + rng() % pool.size();
    for (std::size_t i = 0; i < nHead; ++i) c.headVars.push_back(pool[i]);
    c.useFilter = rng() % 2 == 0;
    c.useNegation = rng() % 3 == 0;

    Database db;
    auto relR = std::make_shared<RelationValue>(std::vector<int>{2},
                                                SemiringKind::Boolean);
    for (auto [a, b] : c.R) relR->merge(ik({a, b}), Scalar{true});
    auto relS = std::make_shared<RelationValue>(std::vector<int>{1},
                                                SemiringKind::Boolean);
    for (int v : c.S) relS->merge(ik({v}), Scalar{true});
    db.install("R", relR);
    db.install("S", relS);

    auto expected = oracle_eval(c, domain);
    auto rr = must_run(oracle_source(c), db);
    std::set<std::vector<int>> got;
    for (const auto& [k, v] : rr.db.relation("Q")->entries_flat()) {
      (void)v;
      std::vector<int> tuple;
      for (const auto& comp : k)
        tuple.push_back(static_cast<int>(std::get<std::int64_t>(comp)));
      got.insert(tuple);
    }
    if (got != expected) MESSAGE("case: " << oracle_source(c));
    CHECK(got == expected);
  }
}
