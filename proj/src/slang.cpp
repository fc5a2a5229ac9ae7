#include "hojabr/slang.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <utility>

#include "hojabr/desugar.hpp"
#include "hojabr/syntax.hpp"

namespace hojabr {

namespace {

// ----------------------------------------------------------- small helpers

std::optional<std::string> bare_var(const ExprPtr& e) {
  if (!e) return std::nullopt;
  if (const auto* v = std::get_if<Variable>(&e->node)) return v->name;
  return std::nullopt;
}

bool is_literal(const ExprPtr& e) {
  return e && std::holds_alternative<Literal>(e->node);
}

bool all_bare_vars(const std::vector<std::vector<ExprPtr>>& lists) {
  for (const auto& list : lists)
    for (const auto& e : list)
      if (!bare_var(e)) return false;
  return true;
}

// Relation named by the first argument of a card/order/deg call: a bare
// zero-list access or variable-looking identifier.
std::optional<std::string> cei_relation(const CeiCall& c) {
  if (c.argLists.empty() || c.argLists[0].empty()) return std::nullopt;
  const ExprPtr& e = c.argLists[0][0];
  if (const auto* a = std::get_if<Access>(&e->node))
    if (a->argLists.empty()) return a->relation;
  if (auto v = bare_var(e)) return *v;
  return std::nullopt;
}

int total_arity(const Access& a) {
  int n = 0;
  for (const auto& list : a.argLists) n += static_cast<int>(list.size());
  return n;
}

// Conjunction of parts; empty list yields `true`.
ConstraintPtr conjoin(std::vector<ConstraintPtr> parts) {
  if (parts.empty()) return make_bool(true);
  return make_conjunction(std::move(parts));
}

// Every relation name mentioned anywhere in the program (heads, atoms,
// accesses, CEI subjects, nested-rule binders). Used to keep generated
// names from capturing existing ones; overapproximation is safe.
void collect_relation_names(const ExprPtr& e, std::set<std::string>& out);

void collect_relation_names(const ConstraintPtr& c,
                            std::set<std::string>& out) {
  if (!c) return;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Conjunction> ||
                      std::is_same_v<T, Disjunction>) {
          collect_relation_names(n.lhs, out);
          collect_relation_names(n.rhs, out);
        } else if constexpr (std::is_same_v<T, Negation>) {
          collect_relation_names(n.inner, out);
        } else if constexpr (std::is_same_v<T, AtomAccess>) {
          out.insert(n.access.relation);
          for (const auto& list : n.access.argLists)
            for (const auto& e : list) collect_relation_names(e, out);
        } else if constexpr (std::is_same_v<T, Comparison>) {
          collect_relation_names(n.lhs, out);
          collect_relation_names(n.rhs, out);
        } else if constexpr (std::is_same_v<T, CeiCall>) {
          if (auto r = cei_relation(n)) out.insert(*r);
          for (const auto& list : n.argLists)
            for (const auto& e : list) collect_relation_names(e, out);
        } else if constexpr (std::is_same_v<T, NestedRule>) {
          if (n.rule) {
            out.insert(n.rule->head.relation);
            collect_relation_names(n.rule->constraint, out);
            collect_relation_names(n.rule->expr, out);
          }
        } else if constexpr (std::is_same_v<T, ComparisonChain>) {
          for (const auto& e : n.operands) collect_relation_names(e, out);
        } else if constexpr (std::is_same_v<T, InList>) {
          collect_relation_names(n.value, out);
          for (const auto& e : n.items) collect_relation_names(e, out);
        } else if constexpr (std::is_same_v<T, MatchCase>) {
          collect_relation_names(n.scrutinee, out);
          for (const auto& [pat, body] : n.cases) {
            collect_relation_names(pat, out);
            collect_relation_names(body, out);
          }
        }
      },
      c->node);
}

void collect_relation_names(const ExprPtr& e, std::set<std::string>& out) {
  if (!e) return;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Access>) {
          out.insert(n.relation);
          for (const auto& list : n.argLists)
            for (const auto& q : list) collect_relation_names(q, out);
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          collect_relation_names(n.lhs, out);
          collect_relation_names(n.rhs, out);
        } else if constexpr (std::is_same_v<T, NegateExpr>) {
          collect_relation_names(n.operand, out);
        } else if constexpr (std::is_same_v<T, EeiCall>) {
          for (const auto& q : n.args) collect_relation_names(q, out);
        }
      },
      e->node);
}

std::set<std::string> collect_relation_names(const Program& p) {
  std::set<std::string> out;
  for (const auto& r : p.rules) {
    out.insert(r.head.relation);
    for (const auto& list : r.head.argLists)
      for (const auto& e : list) collect_relation_names(e, out);
    collect_relation_names(r.expr, out);
    collect_relation_names(r.constraint, out);
  }
  for (const auto& d : p.declarations) collect_relation_names(d, out);
  return out;
}

// Fresh-name allocator. Prefers the natural base name; on collision tries
// prefix+base, then prefix+base+counter.
struct NamePool {
  std::set<std::string> used;
  std::string prefix;

  std::string fresh(const std::string& base) {
    std::string c = base;
    if (used.insert(c).second) return c;
    c = prefix + base;
    if (!prefix.empty() && used.insert(c).second) return c;
    for (int k = 2;; ++k) {
      c = prefix + base + std::to_string(k);
      if (used.insert(c).second) return c;
    }
  }
  // Variable flavor: append primes until free.
  std::string prime(const std::string& base) {
    std::string c = base + "'";
    while (!used.insert(c).second) c += "'";
    return c;
  }
  std::string fresh_var(const std::string& base) {
    if (used.insert(base).second) return base;
    return prime(base);
  }
};

// ------------------------------------------------------------ substitution

using VarSubst = std::map<std::string, ExprPtr>;

ExprPtr subst(const ExprPtr& e, const VarSubst& m);

std::vector<std::vector<ExprPtr>> subst(
    const std::vector<std::vector<ExprPtr>>& lists, const VarSubst& m) {
  std::vector<std::vector<ExprPtr>> out;
  out.reserve(lists.size());
  for (const auto& list : lists) {
    std::vector<ExprPtr> l2;
    l2.reserve(list.size());
    for (const auto& e : list) l2.push_back(subst(e, m));
    out.push_back(std::move(l2));
  }
  return out;
}

ExprPtr subst(const ExprPtr& e, const VarSubst& m) {
  if (!e) return e;
  return std::visit(
      [&](const auto& n) -> ExprPtr {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Variable>) {
          auto it = m.find(n.name);
          return it == m.end() ? e : it->second;
        } else if constexpr (std::is_same_v<T, Access>) {
          return make_access_expr(Access{n.relation, subst(n.argLists, m)});
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          return make_binary(n.op, subst(n.lhs, m), subst(n.rhs, m));
        } else if constexpr (std::is_same_v<T, NegateExpr>) {
          return make_negate(subst(n.operand, m));
        } else if constexpr (std::is_same_v<T, EeiCall>) {
          std::vector<ExprPtr> args;
          for (const auto& q : n.args) args.push_back(subst(q, m));
          return make_eei(n.name, std::move(args));
        } else {
          return e;  // Literal
        }
      },
      e->node);
}

ConstraintPtr subst(const ConstraintPtr& c, const VarSubst& m) {
  if (!c) return c;
  return std::visit(
      [&](const auto& n) -> ConstraintPtr {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Conjunction>) {
          return make_conjunction(subst(n.lhs, m), subst(n.rhs, m));
        } else if constexpr (std::is_same_v<T, Disjunction>) {
          return make_disjunction(subst(n.lhs, m), subst(n.rhs, m));
        } else if constexpr (std::is_same_v<T, Negation>) {
          return make_negation(subst(n.inner, m));
        } else if constexpr (std::is_same_v<T, AtomAccess>) {
          return make_atom(
              Access{n.access.relation, subst(n.access.argLists, m)});
        } else if constexpr (std::is_same_v<T, Comparison>) {
          return make_comparison(subst(n.lhs, m), n.op, subst(n.rhs, m));
        } else if constexpr (std::is_same_v<T, CeiCall>) {
          return make_cei(n.name, subst(n.argLists, m));
        } else if constexpr (std::is_same_v<T, NestedRule>) {
          Rule r = *n.rule;
          r.head.argLists = subst(r.head.argLists, m);
          r.expr = subst(r.expr, m);
          r.constraint = subst(r.constraint, m);
          return make_nested_rule(std::move(r));
        } else {
          return c;  // BoolConst (sugar forms are gone post-desugar)
        }
      },
      c->node);
}

Rule subst(const Rule& r, const VarSubst& m) {
  Rule out = r;
  out.head.argLists = subst(r.head.argLists, m);
  out.expr = subst(r.expr, m);
  out.constraint = subst(r.constraint, m);
  return out;
}

// ------------------------------------------------- variable canonicalization

// First-occurrence order of scalar variable names across head, expression
// and constraint (textual walking order).
void occurrence_order(const ExprPtr& e, std::vector<std::string>& order,
                      std::set<std::string>& seen);

void occurrence_order(const ConstraintPtr& c, std::vector<std::string>& order,
                      std::set<std::string>& seen) {
  if (!c) return;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Conjunction> ||
                      std::is_same_v<T, Disjunction>) {
          occurrence_order(n.lhs, order, seen);
          occurrence_order(n.rhs, order, seen);
        } else if constexpr (std::is_same_v<T, Negation>) {
          occurrence_order(n.inner, order, seen);
        } else if constexpr (std::is_same_v<T, AtomAccess>) {
          for (const auto& list : n.access.argLists)
            for (const auto& e : list) occurrence_order(e, order, seen);
        } else if constexpr (std::is_same_v<T, Comparison>) {
          occurrence_order(n.lhs, order, seen);
          occurrence_order(n.rhs, order, seen);
        } else if constexpr (std::is_same_v<T, CeiCall>) {
          for (const auto& list : n.argLists)
            for (const auto& e : list) occurrence_order(e, order, seen);
        } else if constexpr (std::is_same_v<T, NestedRule>) {
          if (n.rule) {
            for (const auto& list : n.rule->head.argLists)
              for (const auto& e : list) occurrence_order(e, order, seen);
            occurrence_order(n.rule->expr, order, seen);
            occurrence_order(n.rule->constraint, order, seen);
          }
        }
      },
      c->node);
}

void occurrence_order(const ExprPtr& e, std::vector<std::string>& order,
                      std::set<std::string>& seen) {
  if (!e) return;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Variable>) {
          if (seen.insert(n.name).second) order.push_back(n.name);
        } else if constexpr (std::is_same_v<T, Access>) {
          for (const auto& list : n.argLists)
            for (const auto& q : list) occurrence_order(q, order, seen);
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          occurrence_order(n.lhs, order, seen);
          occurrence_order(n.rhs, order, seen);
        } else if constexpr (std::is_same_v<T, NegateExpr>) {
          occurrence_order(n.operand, order, seen);
        } else if constexpr (std::is_same_v<T, EeiCall>) {
          for (const auto& q : n.args) occurrence_order(q, order, seen);
        }
      },
      e->node);
}

// Merges variables related by top-level `x = y` equalities into the
// textually-first name of each class and drops the spent equalities.
// `Q(a,b,c) := R(a,b),S(b',c),(b=b')` becomes `Q(a,b,c) := R(a,b),S(b,c)`.
Rule canonicalize_rule(const Rule& r) {
  std::vector<std::string> order;
  std::set<std::string> seen;
  for (const auto& list : r.head.argLists)
    for (const auto& e : list) occurrence_order(e, order, seen);
  occurrence_order(r.expr, order, seen);
  occurrence_order(r.constraint, order, seen);
  std::map<std::string, int> rank;
  for (size_t i = 0; i < order.size(); ++i)
    rank[order[i]] = static_cast<int>(i);

  std::map<std::string, std::string> parent;
  std::function<std::string(std::string)> find = [&](std::string v) {
    auto it = parent.find(v);
    if (it == parent.end() || it->second == v) return v;
    auto root = find(it->second);
    parent[v] = root;
    return root;
  };
  auto unite = [&](const std::string& a, const std::string& b) {
    auto ra = find(a), rb = find(b);
    if (ra == rb) return;
    if (rank[ra] > rank[rb]) std::swap(ra, rb);
    parent[rb] = ra;
  };

  auto conjuncts = flatten_conjunction(r.constraint);
  bool any = false;
  for (const auto& c : conjuncts) {
    const auto* cmp = std::get_if<Comparison>(&c->node);
    if (!cmp || cmp->op != CompareOp::Eq) continue;
    auto l = bare_var(cmp->lhs), rr = bare_var(cmp->rhs);
    if (l && rr && *l != *rr) {
      unite(*l, *rr);
      any = true;
    }
  }
  if (!any) return r;

  VarSubst m;
  for (const auto& [v, _] : parent) {
    auto root = find(v);
    if (root != v) m[v] = make_variable(root);
  }
  std::vector<ConstraintPtr> kept;
  for (const auto& c : conjuncts) {
    const auto* cmp = std::get_if<Comparison>(&c->node);
    if (cmp && cmp->op == CompareOp::Eq) {
      auto l = bare_var(cmp->lhs), rr = bare_var(cmp->rhs);
      if (l && rr && find(*l) == find(*rr)) continue;  // spent
    }
    if (std::holds_alternative<BoolConst>(c->node) &&
        std::get<BoolConst>(c->node).value && conjuncts.size() > 1)
      continue;
    kept.push_back(subst(c, m));
  }
  Rule out = r;
  out.head.argLists = subst(r.head.argLists, m);
  out.expr = subst(r.expr, m);
  out.constraint = conjoin(std::move(kept));
  return out;
}

// --------------------------------------------------------------- catalog

using CForm = SlangForm<Constraint>;
using EForm = SlangForm<Expression>;

template <typename V, typename Node>
bool holds(const Node& n) {
  return std::holds_alternative<V>(n.node);
}

CForm conjunction_form() {
  return {"conjunction of allowed constraints",
          [](const Constraint& c) { return holds<Conjunction>(c); }};
}
CForm true_form() {
  return {"the trivial constraint `true`",
          [](const Constraint& c) { return holds<BoolConst>(c); }};
}
EForm variable_form() {
  return {"variables", [](const Expression& e) { return holds<Variable>(e); }};
}
EForm literal_form() {
  return {"literals", [](const Expression& e) { return holds<Literal>(e); }};
}

bool flat_atom_over_vars(const Constraint& c) {
  const auto* a = std::get_if<AtomAccess>(&c.node);
  if (!a || a->access.argLists.size() != 1) return false;
  return all_bare_vars(a->access.argLists);
}

bool var_var_equality(const Constraint& c) {
  const auto* cmp = std::get_if<Comparison>(&c.node);
  return cmp && cmp->op == CompareOp::Eq && bare_var(cmp->lhs) &&
         bare_var(cmp->rhs);
}

std::optional<std::string> require_define(const Rule& r) {
  if (r.action != Action::Define)
    return "imperative action '" + std::string(to_string(r.action)) +
           "' not allowed";
  return std::nullopt;
}

std::optional<std::string> require_set_semantics(const Rule& r) {
  if (r.expr) return "valued rules (payload expressions) not allowed";
  return std::nullopt;
}

std::optional<std::string> require_valued(const Rule& r) {
  if (!r.expr) return "rules must compute a payload expression";
  return std::nullopt;
}

std::optional<std::string> require_flat_var_head(const Rule& r) {
  if (r.head.argLists.size() != 1)
    return "head must be flat (one argument list)";
  for (const auto& e : r.head.argLists[0])
    if (!bare_var(e) && !is_literal(e))
      return "head arguments must be bare variables or literals";
  return std::nullopt;
}

std::optional<std::string> require_var_head(const Rule& r) {
  for (const auto& list : r.head.argLists)
    for (const auto& e : list)
      if (!bare_var(e) && !is_literal(e))
        return "head arguments must be bare variables or literals";
  return std::nullopt;
}

// Relations read by accesses anywhere in the rule (expression positions and
// comparison operands), excluding CEI subjects.
void accessed_relations(const ExprPtr& e, std::vector<std::string>& out) {
  if (!e) return;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Access>) {
          if (!n.argLists.empty()) out.push_back(n.relation);
          for (const auto& list : n.argLists)
            for (const auto& q : list) accessed_relations(q, out);
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          accessed_relations(n.lhs, out);
          accessed_relations(n.rhs, out);
        } else if constexpr (std::is_same_v<T, NegateExpr>) {
          accessed_relations(n.operand, out);
        } else if constexpr (std::is_same_v<T, EeiCall>) {
          for (const auto& q : n.args) accessed_relations(q, out);
        }
      },
      e->node);
}

std::vector<std::string> rule_accessed_relations(const Rule& r) {
  std::vector<std::string> out;
  accessed_relations(r.expr, out);
  for (const auto& c : flatten_conjunction(r.constraint)) {
    if (const auto* cmp = std::get_if<Comparison>(&c->node)) {
      accessed_relations(cmp->lhs, out);
      accessed_relations(cmp->rhs, out);
    }
  }
  return out;
}

// Shape discipline for dense tensor rules: the head and every accessed
// tensor must be shaped by an in-rule card constraint.
std::optional<std::string> require_card_shapes(const Rule& r) {
  std::set<std::string> shaped;
  for (const auto& c : flatten_conjunction(r.constraint)) {
    const auto* cei = std::get_if<CeiCall>(&c->node);
    if (cei && cei->name == "card")
      if (auto rel = cei_relation(*cei)) shaped.insert(*rel);
  }
  for (const auto& rel : rule_accessed_relations(r))
    if (!shaped.count(rel))
      return "accessed relation " + rel + " has no card-declared shape";
  if (!r.head.argLists.empty() && !r.head.argLists[0].empty() &&
      !shaped.count(r.head.relation))
    return "head relation " + r.head.relation + " has no card-declared shape";
  return std::nullopt;
}

bool product_form_expr(const ExprPtr& e) {
  if (!e) return false;
  return std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, BinaryExpr>) {
          return n.op == BinOp::Mul && product_form_expr(n.lhs) &&
                 product_form_expr(n.rhs);
        } else {
          return std::is_same_v<T, Access> || std::is_same_v<T, Variable> ||
                 std::is_same_v<T, Literal>;
        }
      },
      e->node);
}

std::optional<std::string> require_product_expr(const Rule& r) {
  if (r.expr && !product_form_expr(r.expr))
    return "payload expression must be a product of tensor accesses";
  return std::nullopt;
}

std::vector<SlangSpec> build_catalog() {
  std::vector<SlangSpec> cat;

  {  // logical-declarative: the full declarative fragment.
    SlangSpec s;
    s.name = "logical-declarative";
    s.summary = "all declarative constructs; only `:=` rules";
    s.constraintForms = {
        conjunction_form(),
        true_form(),
        {"disjunction", [](const Constraint& c) { return holds<Disjunction>(c); }},
        {"negation", [](const Constraint& c) { return holds<Negation>(c); }},
        {"relation atoms", [](const Constraint& c) { return holds<AtomAccess>(c); }},
        {"comparisons", [](const Constraint& c) { return holds<Comparison>(c); }},
        {"constraint extensions (type/card/deg/order/fdep/pkey/unique)",
         [](const Constraint& c) { return holds<CeiCall>(c); }},
        {"nested-rule bindings", [](const Constraint& c) { return holds<NestedRule>(c); }},
    };
    s.expressionForms = {
        variable_form(),
        literal_form(),
        {"relation accesses", [](const Expression& e) { return holds<Access>(e); }},
        {"arithmetic", [](const Expression& e) { return holds<BinaryExpr>(e) || holds<NegateExpr>(e); }},
        {"evaluation extensions (aggregates and scalar math)",
         [](const Expression& e) { return holds<EeiCall>(e); }},
    };
    s.structuralRules = {{"rules use the `:=` action", require_define}};
    cat.push_back(std::move(s));
  }

  {  // logical-join: flat conjunctive queries over set relations.
    SlangSpec s;
    s.name = "logical-join";
    s.summary = "flat conjunctive rules over set relations";
    s.constraintForms = {
        conjunction_form(),
        true_form(),
        {"flat relation atoms over bare variables",
         [](const Constraint& c) { return flat_atom_over_vars(c); }},
        {"variable-variable equalities",
         [](const Constraint& c) { return var_var_equality(c); }},
    };
    s.expressionForms = {variable_form(), literal_form()};
    s.structuralRules = {
        {"rules use the `:=` action", require_define},
        {"rules have set semantics (no payload expression)",
         require_set_semantics},
        {"heads are flat over variables", require_flat_var_head},
    };
    cat.push_back(std::move(s));
  }

  {  // physical-join: the shapes the join lowerings emit.
    SlangSpec s;
    s.name = "physical-join";
    s.summary =
        "join encodings: nested builds, prefix probes, nested-rule bindings, "
        "order layouts";
    s.constraintForms = {
        conjunction_form(),
        true_form(),
        {"relation atoms over bare variables (flat, nested or prefix)",
         [](const Constraint& c) {
           const auto* a = std::get_if<AtomAccess>(&c.node);
           return a && !a->access.argLists.empty() &&
                  all_bare_vars(a->access.argLists);
         }},
        {"variable-variable equalities",
         [](const Constraint& c) { return var_var_equality(c); }},
        {"order layout declarations over variables",
         [](const Constraint& c) {
           const auto* cei = std::get_if<CeiCall>(&c.node);
           return cei && cei->name == "order" && cei->argLists.size() == 1 &&
                  all_bare_vars(cei->argLists);
         }},
        {"nested-rule sub-relation bindings `(Rv := X(k))`",
         [](const Constraint& c) {
           const auto* nr = std::get_if<NestedRule>(&c.node);
           if (!nr || !nr->rule) return false;
           const Rule& r = *nr->rule;
           if (r.action != Action::Define || r.expr) return false;
           if (!r.head.argLists.empty()) return false;
           const auto* atom = std::get_if<AtomAccess>(&r.constraint->node);
           return atom && !atom->access.argLists.empty() &&
                  all_bare_vars(atom->access.argLists);
         }},
    };
    s.expressionForms = {variable_form(), literal_form()};
    s.structuralRules = {
        {"rules use the `:=` action", require_define},
        {"rules have set semantics (no payload expression)",
         require_set_semantics},
        {"head argument lists contain bare variables", require_var_head},
    };
    cat.push_back(std::move(s));
  }

  {  // dense-tensor: card-shaped tensor arithmetic.
    SlangSpec s;
    s.name = "dense-tensor";
    s.summary = "tensor arithmetic over card-shaped relations";
    s.constraintForms = {
        conjunction_form(),
        true_form(),
        {"comparisons (index ranges and bindings)",
         [](const Constraint& c) { return holds<Comparison>(c); }},
        {"card shape declarations",
         [](const Constraint& c) {
           const auto* cei = std::get_if<CeiCall>(&c.node);
           return cei && cei->name == "card";
         }},
    };
    s.expressionForms = {
        variable_form(),
        literal_form(),
        {"tensor accesses", [](const Expression& e) { return holds<Access>(e); }},
        {"arithmetic",
         [](const Expression& e) { return holds<BinaryExpr>(e) || holds<NegateExpr>(e); }},
    };
    s.structuralRules = {
        {"rules use the `:=` action", require_define},
        {"rules compute a payload expression", require_valued},
        {"the head and every accessed tensor carry an in-rule card shape",
         require_card_shapes},
    };
    cat.push_back(std::move(s));
  }

  {  // sparse-tensor: COO atoms and decoded payload bindings.
    SlangSpec s;
    s.name = "sparse-tensor";
    s.summary = "sparse formats: value-column atoms and payload bindings";
    s.constraintForms = {
        conjunction_form(),
        true_form(),
        {"comparisons (index ranges and payload bindings)",
         [](const Constraint& c) { return holds<Comparison>(c); }},
        {"flat relation atoms (index columns plus value column)",
         [](const Constraint& c) {
           const auto* a = std::get_if<AtomAccess>(&c.node);
           return a && a->access.argLists.size() == 1;
         }},
    };
    s.expressionForms = {
        variable_form(),
        literal_form(),
        {"relation accesses", [](const Expression& e) { return holds<Access>(e); }},
        {"arithmetic",
         [](const Expression& e) { return holds<BinaryExpr>(e) || holds<NegateExpr>(e); }},
    };
    s.structuralRules = {
        {"rules use the `:=` action", require_define},
        {"rules compute a payload expression", require_valued},
    };
    cat.push_back(std::move(s));
  }

  {  // sql-core: the SQL frontend's target fragment.
    SlangSpec s;
    s.name = "sql-core";
    s.summary =
        "select-project-join-aggregate rules with limit/order directives";
    s.constraintForms = {
        conjunction_form(),
        true_form(),
        {"flat relation atoms over bare variables",
         [](const Constraint& c) { return flat_atom_over_vars(c); }},
        {"comparisons", [](const Constraint& c) { return holds<Comparison>(c); }},
        {"card limit directives `card(H, k)`",
         [](const Constraint& c) {
           const auto* cei = std::get_if<CeiCall>(&c.node);
           return cei && cei->name == "card" && cei->argLists.size() == 1 &&
                  cei->argLists[0].size() == 2;
         }},
        {"order directives over variables",
         [](const Constraint& c) {
           const auto* cei = std::get_if<CeiCall>(&c.node);
           return cei && cei->name == "order" && cei->argLists.size() == 1 &&
                  all_bare_vars(cei->argLists);
         }},
    };
    s.expressionForms = {
        variable_form(),
        literal_form(),
        {"arithmetic",
         [](const Expression& e) { return holds<BinaryExpr>(e) || holds<NegateExpr>(e); }},
        {"bare relation references (card subjects)",
         [](const Expression& e) {
           const auto* a = std::get_if<Access>(&e.node);
           return a && a->argLists.empty();
         }},
        {"single-column aggregates (sum/avg/min/max)",
         [](const Expression& e) {
           const auto* f = std::get_if<EeiCall>(&e.node);
           return f &&
                  (f->name == "sum" || f->name == "avg" || f->name == "min" ||
                   f->name == "max") &&
                  f->args.size() == 1;
         }},
    };
    s.structuralRules = {{"rules use the `:=` action", require_define}};
    cat.push_back(std::move(s));
  }

  {  // einsum-core: products of card-shaped tensor accesses.
    SlangSpec s;
    s.name = "einsum-core";
    s.summary = "index-notation contractions: products over ranged indices";
    s.constraintForms = {
        conjunction_form(),
        true_form(),
        {"index range comparisons",
         [](const Constraint& c) {
           const auto* cmp = std::get_if<Comparison>(&c.node);
           return cmp && (cmp->op == CompareOp::Lt || cmp->op == CompareOp::Le);
         }},
        {"card shape declarations",
         [](const Constraint& c) {
           const auto* cei = std::get_if<CeiCall>(&c.node);
           return cei && cei->name == "card";
         }},
    };
    s.expressionForms = {
        variable_form(),
        literal_form(),
        {"tensor accesses", [](const Expression& e) { return holds<Access>(e); }},
        {"products",
         [](const Expression& e) {
           const auto* b = std::get_if<BinaryExpr>(&e.node);
           return b && b->op == BinOp::Mul;
         }},
    };
    s.structuralRules = {
        {"rules use the `:=` action", require_define},
        {"rules compute a payload expression", require_valued},
        {"payload expressions are products of tensor accesses",
         require_product_expr},
        {"the head and every accessed tensor carry an in-rule card shape",
         require_card_shapes},
    };
    cat.push_back(std::move(s));
  }

  return cat;
}

// ------------------------------------------------------------- validation

const char* constraint_kind(const Constraint& c) {
  return std::visit(
      [](const auto& n) -> const char* {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Conjunction>) return "conjunction";
        else if constexpr (std::is_same_v<T, Disjunction>) return "disjunction";
        else if constexpr (std::is_same_v<T, Negation>) return "negation";
        else if constexpr (std::is_same_v<T, AtomAccess>) return "relation atom";
        else if constexpr (std::is_same_v<T, Comparison>) return "comparison";
        else if constexpr (std::is_same_v<T, CeiCall>) return "constraint extension";
        else if constexpr (std::is_same_v<T, NestedRule>) return "nested rule";
        else if constexpr (std::is_same_v<T, BoolConst>) return "boolean constant";
        else return "sugar construct";
      },
      c.node);
}

std::string constraint_label(const Constraint& c) {
  if (const auto* cei = std::get_if<CeiCall>(&c.node))
    return "extension '" + cei->name + "'";
  return constraint_kind(c);
}

std::string expression_label(const Expression& e) {
  return std::visit(
      [](const auto& n) -> std::string {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Variable>) return "variable";
        else if constexpr (std::is_same_v<T, Literal>) return "literal";
        else if constexpr (std::is_same_v<T, Access>) return "relation access";
        else if constexpr (std::is_same_v<T, BinaryExpr>) return "arithmetic";
        else if constexpr (std::is_same_v<T, NegateExpr>) return "negation";
        else return "extension '" + n.name + "'";
      },
      e.node);
}

struct Validator {
  const SlangSpec& spec;
  std::string rule;
  std::vector<SlangViolation>& out;

  bool constraint_allowed(const Constraint& c) const {
    for (const auto& f : spec.constraintForms)
      if (f.accepts(c)) return true;
    return false;
  }
  bool expression_allowed(const Expression& e) const {
    for (const auto& f : spec.expressionForms)
      if (f.accepts(e)) return true;
    return false;
  }

  void expr(const ExprPtr& e) {
    if (!e) return;
    if (!expression_allowed(*e)) {
      out.push_back({rule, expression_label(*e) + " not allowed"});
      return;  // do not flood violations from inside a rejected node
    }
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Access>) {
            for (const auto& list : n.argLists)
              for (const auto& q : list) expr(q);
          } else if constexpr (std::is_same_v<T, BinaryExpr>) {
            expr(n.lhs);
            expr(n.rhs);
          } else if constexpr (std::is_same_v<T, NegateExpr>) {
            expr(n.operand);
          } else if constexpr (std::is_same_v<T, EeiCall>) {
            for (const auto& q : n.args) expr(q);
          }
        },
        e->node);
  }

  void constraint(const ConstraintPtr& c) {
    if (!c) return;
    if (!constraint_allowed(*c)) {
      out.push_back({rule, constraint_label(*c) + " not allowed"});
      return;
    }
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Conjunction> ||
                        std::is_same_v<T, Disjunction>) {
            constraint(n.lhs);
            constraint(n.rhs);
          } else if constexpr (std::is_same_v<T, Negation>) {
            constraint(n.inner);
          } else if constexpr (std::is_same_v<T, AtomAccess>) {
            for (const auto& list : n.access.argLists)
              for (const auto& e : list) expr(e);
          } else if constexpr (std::is_same_v<T, Comparison>) {
            expr(n.lhs);
            expr(n.rhs);
          } else if constexpr (std::is_same_v<T, CeiCall>) {
            // The subject slot names a relation, not an expression; check
            // the remaining arguments only.
            bool first = true;
            for (const auto& list : n.argLists)
              for (const auto& e : list) {
                if (!first) expr(e);
                first = false;
              }
          } else if constexpr (std::is_same_v<T, NestedRule>) {
            if (n.rule) constraint(n.rule->constraint);
          }
        },
        c->node);
  }
};

}  // namespace

const std::vector<SlangSpec>& slang_catalog() {
  static const std::vector<SlangSpec> cat = build_catalog();
  return cat;
}

const SlangSpec* find_slang(std::string_view name) {
  for (const auto& s : slang_catalog())
    if (s.name == name) return &s;
  return nullptr;
}

std::string describe_slang(const SlangSpec& s) {
  std::ostringstream os;
  os << s.name << " — " << s.summary << "\n";
  os << "  allowed constraints:\n";
  for (const auto& f : s.constraintForms)
    os << "    - " << f.description << "\n";
  os << "  allowed expressions:\n";
  for (const auto& f : s.expressionForms)
    os << "    - " << f.description << "\n";
  if (!s.structuralRules.empty()) {
    os << "  rule shape:\n";
    for (const auto& r : s.structuralRules)
      os << "    - " << r.description << "\n";
  }
  return os.str();
}

SlangReport validate(const Program& p, const SlangSpec& s) {
  SlangReport rep;
  auto des = desugar(p);
  if (!des.ok()) {
    for (const auto& d : des.errors())
      rep.violations.push_back({d.rule, "does not desugar: " + d.message});
    return rep;
  }
  for (const auto& r : des.value().rules) {
    Validator v{s, print(r.head), rep.violations};
    for (const auto& sr : s.structuralRules)
      if (auto msg = sr.check(r)) rep.violations.push_back({v.rule, *msg});
    for (const auto& list : r.head.argLists)
      for (const auto& e : list) v.expr(e);
    v.expr(r.expr);
    v.constraint(r.constraint);
  }
  rep.member = rep.violations.empty();
  return rep;
}

// ---------------------------------------------------------------- lowering

namespace {

// A flat atom occurrence within a rule.
struct AtomRef {
  size_t conjunct = 0;
  Access access;
  std::vector<std::string> vars;  // includes wildcards
};

std::vector<std::string> atom_vars(const Access& a) {
  std::vector<std::string> vars;
  for (const auto& list : a.argLists)
    for (const auto& e : list) vars.push_back(*bare_var(e));
  return vars;
}

// Join variables: non-wildcard variables shared by at least two atoms, in
// first-occurrence order across the atoms.
std::vector<std::string> join_variables(const std::vector<AtomRef>& atoms) {
  std::map<std::string, int> count;
  for (const auto& a : atoms) {
    std::set<std::string> once(a.vars.begin(), a.vars.end());
    for (const auto& v : once)
      if (!is_wildcard(v)) count[v]++;
  }
  std::vector<std::string> j;
  std::set<std::string> seen;
  for (const auto& a : atoms)
    for (const auto& v : a.vars)
      if (!is_wildcard(v) && count[v] >= 2 && seen.insert(v).second)
        j.push_back(v);
  return j;
}

Access var_access(const std::string& rel,
                  const std::vector<std::vector<std::string>>& lists) {
  Access a;
  a.relation = rel;
  for (const auto& list : lists) {
    std::vector<ExprPtr> args;
    for (const auto& v : list) args.push_back(make_variable(v));
    a.argLists.push_back(std::move(args));
  }
  return a;
}

std::vector<ExprPtr> var_exprs(const std::vector<std::string>& names) {
  std::vector<ExprPtr> es;
  es.reserve(names.size());
  for (const auto& n : names) es.push_back(make_variable(n));
  return es;
}

// Canonical shape of an atom/head-list pair with variables renamed by first
// occurrence, so structurally identical demands from different rules share
// one build regardless of variable spelling. Repeated variables (self-join
// columns) keep their repetition; wildcards are all distinct.
std::string build_key(const Access& atom,
                      const std::vector<std::vector<std::string>>& headLists,
                      bool ordered) {
  std::map<std::string, std::string> ren;
  int next = 0, wild = 0;
  auto name_of = [&](const std::string& v) -> std::string {
    if (is_wildcard(v)) return "w" + std::to_string(wild++);
    auto it = ren.find(v);
    if (it != ren.end()) return it->second;
    auto n = "v" + std::to_string(next++);
    ren.emplace(v, n);
    return n;
  };
  std::ostringstream os;
  os << atom.relation;
  for (const auto& list : atom.argLists) {
    os << "(";
    for (const auto& e : list) os << name_of(*bare_var(e)) << ",";
    os << ")";
  }
  os << "|";
  for (const auto& list : headLists) {
    os << "(";
    for (const auto& v : list) os << name_of(v) << ",";
    os << ")";
  }
  if (ordered) os << "|ordered";
  return os.str();
}

// Shared build-rule registry: one build rule per (relation, key structure,
// layout), reused across consumer rules.
struct BuildRegistry {
  NamePool* names;
  std::map<std::string, std::string> known;  // canonical shape -> relation
  std::vector<Rule> fresh;                   // builds awaiting emission

  std::string demand(const Access& atom, const std::string& suffix,
                     const std::vector<std::vector<std::string>>& headLists,
                     bool ordered) {
    std::string key = build_key(atom, headLists, ordered);
    auto it = known.find(key);
    if (it != known.end()) return it->second;
    std::string name = names->fresh(atom.relation + suffix);
    Rule b;
    b.head = var_access(name, headLists);
    b.action = Action::Define;
    std::vector<ConstraintPtr> body{make_atom(atom)};
    if (ordered && !headLists.empty())
      body.push_back(make_cei("order", {var_exprs(headLists.front())}));
    b.constraint = conjoin(std::move(body));
    known.emplace(std::move(key), name);
    fresh.push_back(std::move(b));
    return name;
  }

  std::vector<Rule> take_fresh() { return std::exchange(fresh, {}); }
};

// Flat atoms of a rule body, with their conjunct positions.
struct RuleAtoms {
  std::vector<ConstraintPtr> conjuncts;
  std::vector<size_t> atomPos;  // positions holding flat bare-var atoms

  const AtomAccess& atom(size_t i) const {
    return std::get<AtomAccess>(conjuncts[atomPos[i]]->node);
  }
};

RuleAtoms split_atoms(const Rule& r) {
  RuleAtoms ra;
  ra.conjuncts = flatten_conjunction(r.constraint);
  for (size_t i = 0; i < ra.conjuncts.size(); ++i)
    if (flat_atom_over_vars(*ra.conjuncts[i])) ra.atomPos.push_back(i);
  return ra;
}

// Distinct non-wildcard variable names of an atom in positional order.
std::vector<std::string> distinct_vars(const Access& a) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& v : atom_vars(a))
    if (!is_wildcard(v) && seen.insert(v).second) out.push_back(v);
  return out;
}

std::string rule_label(const Rule& r) { return print(r.head); }

// Assembles the rewritten body: non-dropped conjuncts in slot order.
ConstraintPtr assemble(const std::vector<std::vector<ConstraintPtr>>& slots,
                       std::vector<ConstraintPtr> tail = {}) {
  std::vector<ConstraintPtr> parts;
  for (const auto& slot : slots)
    for (const auto& c : slot) parts.push_back(c);
  for (auto& c : tail) parts.push_back(std::move(c));
  // A stray `true` disappears once real conjuncts exist.
  if (parts.size() > 1) {
    std::vector<ConstraintPtr> kept;
    for (auto& c : parts) {
      const auto* b = std::get_if<BoolConst>(&c->node);
      if (b && b->value) continue;
      kept.push_back(std::move(c));
    }
    if (!kept.empty()) parts = std::move(kept);
  }
  return conjoin(std::move(parts));
}

// ------------------------------------------------------- join strategies

// Nested-loop form: later atoms re-bind shared variables to primed copies,
// with the equalities spelled out at the end of the body:
//   Q(a,b,c) := R(a,b), S(b,c)   ->   Q(a,b,c) := R(a,b), S(b',c), (b=b')
void nlj_rule(Rule& r, NamePool& varPool) {
  auto ra = split_atoms(r);
  std::vector<std::vector<ConstraintPtr>> slots(ra.conjuncts.size());
  for (size_t i = 0; i < ra.conjuncts.size(); ++i) slots[i] = {ra.conjuncts[i]};
  std::vector<ConstraintPtr> eqs;
  std::set<std::string> bound;
  for (size_t ai = 0; ai < ra.atomPos.size(); ++ai) {
    Access a = ra.atom(ai).access;
    VarSubst ren;
    for (const auto& list : a.argLists)
      for (const auto& e : list) {
        const auto& v = *bare_var(e);
        if (is_wildcard(v) || !bound.count(v) || ren.count(v)) continue;
        std::string nv = varPool.prime(v);
        ren.emplace(v, make_variable(nv));
        eqs.push_back(with_parens(
            make_comparison(make_variable(v), CompareOp::Eq, make_variable(nv))));
      }
    if (!ren.empty()) a.argLists = subst(a.argLists, ren);
    for (const auto& v : atom_vars(a))
      if (!is_wildcard(v)) bound.insert(v);
    slots[ra.atomPos[ai]] = {make_atom(std::move(a))};
  }
  r.constraint = assemble(slots, std::move(eqs));
}

// Hash and sort-merge form: both relations are rebuilt keyed on the shared
// variables, and the probe addresses the keys first:
//   Q(a,b,c) := R(a,b), S(b,c)  ->  Rh(b)(a) := R(a,b) / Sh(b)(c) := S(b,c)
//                                   Q(a,b,c) := Rh(b)(a), Sh(b)(c)
// The sort-merge variant adds an `order` layout on the build keys.
std::optional<std::string> hash_rule(Rule& r, BuildRegistry& reg,
                                     bool ordered) {
  const char* what = ordered ? "sort-merge" : "hash";
  auto ra = split_atoms(r);
  if (ra.atomPos.size() != 2)
    return std::string(what) + " lowering expects exactly two relation atoms; the rule has " +
           std::to_string(ra.atomPos.size());
  std::vector<AtomRef> refs;
  for (size_t i = 0; i < ra.atomPos.size(); ++i)
    refs.push_back({ra.atomPos[i], ra.atom(i).access,
                    atom_vars(ra.atom(i).access)});
  auto J = join_variables(refs);
  if (J.empty())
    return std::string("the two relation atoms share no variable, so the ") +
           what + " lowering does not apply";
  std::vector<std::vector<ConstraintPtr>> slots(ra.conjuncts.size());
  for (size_t i = 0; i < ra.conjuncts.size(); ++i) slots[i] = {ra.conjuncts[i]};
  for (const auto& ref : refs) {
    std::vector<std::string> rest;
    std::set<std::string> inJ(J.begin(), J.end());
    for (const auto& v : distinct_vars(ref.access))
      if (!inJ.count(v)) rest.push_back(v);
    if (rest.empty()) continue;  // fully key-covered: scan it directly
    std::string name = reg.demand(ref.access, ordered ? "o" : "h", {J, rest},
                                  ordered);
    slots[ref.conjunct] = {make_atom(var_access(name, {J, rest}))};
  }
  r.constraint = assemble(slots);
  return std::nullopt;
}

// Generic form: every join variable gets one generator and per-relation
// sub-relation bindings, then the residual columns are probed:
//   Q(x,a,b) := R(x,a), S(x,b), T(x)
//     ->  Rh(x)(a) := R(x,a) / Sh(x)(b) := S(x,b)
//         Q(x,a,b) := Rh(x), (Rx:=Rh(x)), (Sx:=Sh(x)), T(x), Rx(a), Sx(b)
std::optional<std::string> generic_rule(Rule& r, BuildRegistry& reg,
                                        NamePool& varPool) {
  auto ra = split_atoms(r);
  std::vector<AtomRef> refs;
  for (size_t i = 0; i < ra.atomPos.size(); ++i)
    refs.push_back({ra.atomPos[i], ra.atom(i).access,
                    atom_vars(ra.atom(i).access)});
  auto J = join_variables(refs);
  std::set<std::string> inJ(J.begin(), J.end());

  struct State {
    std::vector<std::string> ownJ;  // this atom's join vars, in J order
    std::vector<std::string> rest;
    bool built = false;
    std::string cur;       // current relation (build name, then bind vars)
    std::string bindBase;  // naming stem for the next sub-relation bind
    size_t remaining = 0;  // argument lists left on `cur`
    bool exhausted = false;
  };
  std::vector<State> st(refs.size());
  for (size_t i = 0; i < refs.size(); ++i) {
    auto distinct = distinct_vars(refs[i].access);
    for (const auto& jv : J)
      if (std::count(distinct.begin(), distinct.end(), jv))
        st[i].ownJ.push_back(jv);
    for (const auto& v : distinct)
      if (!inJ.count(v)) st[i].rest.push_back(v);
    bool needsTrie =
        !st[i].ownJ.empty() && (!st[i].rest.empty() || st[i].ownJ.size() >= 2);
    if (needsTrie) {
      std::vector<std::vector<std::string>> lists;
      for (const auto& jv : st[i].ownJ) lists.push_back({jv});
      if (!st[i].rest.empty()) lists.push_back(st[i].rest);
      st[i].built = true;
      st[i].cur = reg.demand(refs[i].access, "h", lists, false);
      st[i].bindBase = refs[i].access.relation;
      st[i].remaining = lists.size();
    }
  }

  std::vector<ConstraintPtr> body;
  for (const auto& jv : J) {
    std::vector<size_t> parts;
    for (size_t i = 0; i < refs.size(); ++i)
      if (!st[i].exhausted &&
          std::count(st[i].ownJ.begin(), st[i].ownJ.end(), jv))
        parts.push_back(i);
    if (parts.empty()) continue;
    size_t gen = parts.front();
    // The generator enumerates candidate values for jv by scanning the
    // first participant; everyone else is probed against the binding.
    if (st[gen].built)
      body.push_back(make_atom(var_access(st[gen].cur, {{jv}})));
    else
      body.push_back(make_atom(refs[gen].access));
    for (size_t i : parts) {
      State& s = st[i];
      if (!s.built) {
        s.exhausted = true;
        if (i != gen) body.push_back(make_atom(refs[i].access));
        continue;
      }
      if (s.remaining > 1) {
        std::string bind = varPool.fresh_var(s.bindBase + jv);
        Rule nested;
        nested.head = Access{bind, {}};
        nested.action = Action::Define;
        nested.constraint = make_atom(var_access(s.cur, {{jv}}));
        body.push_back(with_parens(make_nested_rule(std::move(nested))));
        s.cur = bind;
        s.bindBase = bind;
        s.remaining -= 1;
      } else {
        if (i != gen) body.push_back(make_atom(var_access(s.cur, {{jv}})));
        s.remaining = 0;
        s.exhausted = true;
      }
    }
  }
  // Residual probes: the columns beyond the join variables, relation by
  // relation in body order. Atoms outside the join pass through unchanged.
  for (size_t i = 0; i < refs.size(); ++i) {
    if (st[i].exhausted) continue;
    if (st[i].built)
      body.push_back(make_atom(var_access(st[i].cur, {st[i].rest})));
    else
      body.push_back(make_atom(refs[i].access));
  }
  // Non-atom conjuncts (none in the join fragment, but kept for safety).
  std::set<size_t> atomSet(ra.atomPos.begin(), ra.atomPos.end());
  for (size_t i = 0; i < ra.conjuncts.size(); ++i)
    if (!atomSet.count(i)) body.push_back(ra.conjuncts[i]);
  std::vector<std::vector<ConstraintPtr>> one{{}};
  one[0] = std::move(body);
  r.constraint = assemble(one);
  return std::nullopt;
}

// Free/diamond form: the first relation is scanned whole ("covered"); every
// other relation is rebuilt keyed on the variables it shares with the scan
// and bound as a sub-relation, probed for its residual columns at the end:
//   Q(a,b,x1,x2,x3) := R1(a,b,x1), R2(a,x2), R3(b,x3)
//     ->  R2h(a)(x2) := R2(a,x2) / R3h(b)(x3) := R3(b,x3)
//         Q(...) := R1(a,b,x1), (R2a:=R2h(a)), (R3b:=R3h(b)), R2a(x2), R3b(x3)
// The diamond variant insists every relation hangs off the scan; the free
// variant lets unkeyed or fully-covered relations pass through as scans.
std::optional<std::string> keyed_rule(Rule& r, BuildRegistry& reg,
                                      NamePool& varPool, bool diamond) {
  auto ra = split_atoms(r);
  if (diamond && ra.atomPos.size() < 3)
    return "diamond lowering expects at least three relation atoms; the rule has " +
           std::to_string(ra.atomPos.size());
  std::vector<std::vector<ConstraintPtr>> slots(ra.conjuncts.size());
  for (size_t i = 0; i < ra.conjuncts.size(); ++i) slots[i] = {ra.conjuncts[i]};
  auto coverVars = distinct_vars(ra.atom(0).access);
  std::set<std::string> cover(coverVars.begin(), coverVars.end());
  std::vector<ConstraintPtr> residuals;
  for (size_t ai = 1; ai < ra.atomPos.size(); ++ai) {
    const Access& a = ra.atom(ai).access;
    std::vector<std::string> keys, rest;
    for (const auto& v : distinct_vars(a))
      (cover.count(v) ? keys : rest).push_back(v);
    if (keys.empty()) {
      if (diamond)
        return "relation " + a.relation +
               " shares no variable with the scanned relation " +
               ra.atom(0).access.relation;
      continue;  // free: leave it as a scan
    }
    if (rest.empty()) continue;  // pure membership probe; scan in place
    std::string name = reg.demand(a, "h", {keys, rest}, false);
    std::string stem = a.relation;
    for (const auto& k : keys) stem += k;
    std::string bind = varPool.fresh_var(stem);
    Rule nested;
    nested.head = Access{bind, {}};
    nested.action = Action::Define;
    nested.constraint = make_atom(var_access(name, {keys}));
    slots[ra.atomPos[ai]] = {with_parens(make_nested_rule(std::move(nested)))};
    residuals.push_back(make_atom(var_access(bind, {rest})));
  }
  r.constraint = assemble(slots, std::move(residuals));
  return std::nullopt;
}

Diagnostics slang_errors(const char* code, const SlangSpec& s,
                         const SlangReport& rep) {
  Diagnostics ds;
  for (const auto& v : rep.violations)
    ds.push_back(error(code, "not in slang '" + s.name + "': " + v.message,
                       v.rule));
  return ds;
}

}  // namespace

std::optional<JoinStrategy> join_strategy_from(std::string_view name) {
  if (name == "nlj") return JoinStrategy::Nlj;
  if (name == "hash") return JoinStrategy::Hash;
  if (name == "sort-merge" || name == "smj") return JoinStrategy::SortMerge;
  if (name == "generic") return JoinStrategy::Generic;
  if (name == "free") return JoinStrategy::Free;
  if (name == "diamond") return JoinStrategy::Diamond;
  return std::nullopt;
}

const char* to_string(JoinStrategy s) {
  switch (s) {
    case JoinStrategy::Nlj: return "nlj";
    case JoinStrategy::Hash: return "hash";
    case JoinStrategy::SortMerge: return "sort-merge";
    case JoinStrategy::Generic: return "generic";
    case JoinStrategy::Free: return "free";
    case JoinStrategy::Diamond: return "diamond";
  }
  return "?";
}

std::optional<TensorFormat> tensor_format_from(std::string_view name) {
  if (name == "coo") return TensorFormat::Coo;
  if (name == "csr") return TensorFormat::Csr;
  if (name == "dense") return TensorFormat::Dense;
  return std::nullopt;
}

const char* to_string(TensorFormat f) {
  switch (f) {
    case TensorFormat::Coo: return "coo";
    case TensorFormat::Csr: return "csr";
    case TensorFormat::Dense: return "dense";
  }
  return "?";
}

Result<Program> lower_join(const Program& p, JoinStrategy strategy) {
  const SlangSpec& src = *find_slang("logical-join");
  auto rep = validate(p, src);
  if (!rep.member) return slang_errors(diag::SlangViolation, src, rep);
  auto des = desugar(p);
  if (!des.ok()) return des.errors();

  NamePool relPool{collect_relation_names(des.value()), ""};
  BuildRegistry reg{&relPool, {}, {}};
  Program out;
  out.declarations = des.value().declarations;
  for (const auto& orig : des.value().rules) {
    Rule r = canonicalize_rule(orig);
    auto ra = split_atoms(r);
    if (ra.atomPos.size() >= 2) {
      // Bind/alias names must dodge relations, build names handed out so
      // far, and this rule's own variables.
      NamePool varPool{relPool.used, ""};
      auto fv = free_variables(r);
      varPool.used.insert(fv.begin(), fv.end());
      auto rv = relation_variables(r);
      varPool.used.insert(rv.begin(), rv.end());
      std::optional<std::string> err;
      switch (strategy) {
        case JoinStrategy::Nlj: nlj_rule(r, varPool); break;
        case JoinStrategy::Hash: err = hash_rule(r, reg, false); break;
        case JoinStrategy::SortMerge: err = hash_rule(r, reg, true); break;
        case JoinStrategy::Generic: err = generic_rule(r, reg, varPool); break;
        case JoinStrategy::Free: err = keyed_rule(r, reg, varPool, false); break;
        case JoinStrategy::Diamond:
          err = keyed_rule(r, reg, varPool, true);
          break;
      }
      if (err)
        return error(diag::StrategyInapplicable, *err, rule_label(orig));
    }
    for (auto& b : reg.take_fresh()) out.rules.push_back(std::move(b));
    out.rules.push_back(std::move(r));
  }
  return out;
}

// --------------------------------------------------------- tensor formats

namespace {

bool contains_tensor_access(const ExprPtr& e) {
  std::vector<std::string> rels;
  accessed_relations(e, rels);
  return !rels.empty();
}

// `v = X(...)` (either orientation): the payload of a tensor entry bound to
// a variable.
struct PayloadBinding {
  std::string var;
  Access access;
};

std::optional<PayloadBinding> payload_binding(const Constraint& c) {
  const auto* cmp = std::get_if<Comparison>(&c.node);
  if (!cmp || cmp->op != CompareOp::Eq) return std::nullopt;
  auto side = [](const ExprPtr& v, const ExprPtr& a)
      -> std::optional<PayloadBinding> {
    auto var = bare_var(v);
    if (!var) return std::nullopt;
    const auto* acc = std::get_if<Access>(&a->node);
    if (!acc || acc->argLists.empty()) return std::nullopt;
    return PayloadBinding{*var, *acc};
  };
  if (auto b = side(cmp->lhs, cmp->rhs)) return b;
  return side(cmp->rhs, cmp->lhs);
}

std::vector<ExprPtr> flat_args(const Access& a) {
  std::vector<ExprPtr> out;
  for (const auto& list : a.argLists)
    for (const auto& e : list) out.push_back(e);
  return out;
}

std::string lowercased(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(ch));
  return s;
}

// Per-rule bookkeeping shared by the sparse rewrites: which tensor reads
// exist, which payload variables stand for them, and which conjuncts
// survive.
struct SparseRewrite {
  const Rule& r;
  NamePool& varPool;
  std::map<std::string, std::string> payloadVar;  // printed access -> var
  std::vector<std::pair<std::string, Access>> order;  // first-use order
  std::set<std::string> shapeVars;   // bound by card argument positions
  std::set<std::string> boundVars;   // bound by access args / payload vars
  std::vector<ConstraintPtr> kept;   // surviving non-tensor conjuncts
  std::optional<std::string> error;

  std::string var_for(const Access& a, const std::string& preset = "") {
    std::string key = print(a);
    auto it = payloadVar.find(key);
    if (it != payloadVar.end()) return it->second;
    std::string v =
        preset.empty() ? varPool.fresh_var(lowercased(a.relation)) : preset;
    payloadVar.emplace(key, v);
    order.emplace_back(key, a);
    boundVars.insert(v);
    for (const auto& e : flat_args(a)) {
      std::set<std::string> seen;
      std::vector<std::string> vs;
      occurrence_order(e, vs, seen);
      boundVars.insert(vs.begin(), vs.end());
    }
    return v;
  }

  // Splits the body: harvests payload bindings, records card shape
  // variables, keeps access-free equalities, and rejects or drops the
  // rest. Range comparisons are dropped only when sparse enumeration
  // covers them (every non-shape variable is bound by a tensor read).
  void scan_conjuncts() {
    for (const auto& c : flatten_conjunction(r.constraint)) {
      if (const auto* cei = std::get_if<CeiCall>(&c->node)) {
        if (cei->name != "card")
          error = "extension '" + cei->name + "' has no sparse encoding";
        else
          for (size_t li = 0, n = 0; li < cei->argLists.size(); ++li)
            for (const auto& e : cei->argLists[li]) {
              if (n++ == 0) continue;  // subject names the relation
              if (auto v = bare_var(e)) shapeVars.insert(*v);
            }
        continue;
      }
      if (std::holds_alternative<BoolConst>(c->node)) continue;
      const auto* cmp = std::get_if<Comparison>(&c->node);
      if (!cmp) {
        error = std::string(constraint_kind(*c)) + " has no sparse encoding";
        continue;
      }
      if (payload_binding(*c)) continue;  // handled by the caller
      if (cmp->op == CompareOp::Eq) {
        if (contains_tensor_access(cmp->lhs) ||
            contains_tensor_access(cmp->rhs)) {
          error = "equality mixes a tensor read with other terms";
          continue;
        }
        kept.push_back(c);
        continue;
      }
      // Inequalities: tensor reads cannot appear, and ranges over shape
      // variables dissolve into the sparse enumeration.
      if (contains_tensor_access(cmp->lhs) ||
          contains_tensor_access(cmp->rhs)) {
        error = "comparison reads a tensor outside the payload product";
        continue;
      }
      bool touchesShape = false;
      std::vector<std::string> vs;
      std::set<std::string> seen;
      occurrence_order(cmp->lhs, vs, seen);
      occurrence_order(cmp->rhs, vs, seen);
      for (const auto& v : vs)
        if (shapeVars.count(v)) touchesShape = true;
      if (!touchesShape) kept.push_back(c);  // genuine filter, e.g. i != j
      else
        dropped.push_back(vs);
    }
  }

  std::vector<std::vector<std::string>> dropped;  // vars of dropped ranges

  // After all tensor reads are known: a dropped range must not have been
  // the only binder of a variable.
  void check_dropped_ranges() {
    if (error) return;
    for (const auto& vs : dropped)
      for (const auto& v : vs) {
        if (shapeVars.count(v) || boundVars.count(v)) continue;
        error = "index " + v +
                " is bound only by a shape range and has no sparse generator";
        return;
      }
  }
};

// Rewrites one product expression, replacing tensor reads via `leaf`.
ExprPtr rewrite_product(const ExprPtr& e,
                        const std::function<ExprPtr(const Access&)>& leaf) {
  if (!e) return e;
  if (const auto* a = std::get_if<Access>(&e->node))
    if (!a->argLists.empty()) return leaf(*a);
  if (const auto* b = std::get_if<BinaryExpr>(&e->node))
    return make_binary(b->op, rewrite_product(b->lhs, leaf),
                       rewrite_product(b->rhs, leaf));
  return e;
}

Result<Program> lower_coo(const Program& p) {
  auto des = desugar(p);
  if (!des.ok()) return des.errors();
  NamePool relPool{collect_relation_names(des.value()), ""};
  std::map<std::string, std::string> cooName;  // relation -> COO relation
  auto coo_of = [&](const std::string& rel) -> const std::string& {
    auto it = cooName.find(rel);
    if (it == cooName.end())
      it = cooName.emplace(rel, relPool.fresh(rel + "_COO")).first;
    return it->second;
  };

  Program out;
  for (const auto& orig : des.value().rules) {
    if (orig.expr && !product_form_expr(orig.expr))
      return error(diag::StrategyInapplicable,
                   "the payload expression is not a product of tensor reads",
                   rule_label(orig));
    Rule r = orig;
    NamePool varPool{relPool.used, ""};
    auto fv = free_variables(r);
    varPool.used.insert(fv.begin(), fv.end());
    SparseRewrite rw{r, varPool, {}, {}, {}, {}, {}, {}, {}};
    rw.scan_conjuncts();
    // Payload bindings written in the body adopt the user's variable.
    for (const auto& c : flatten_conjunction(r.constraint))
      if (auto b = payload_binding(*c)) rw.var_for(b->access, b->var);
    r.expr = rewrite_product(r.expr, [&](const Access& a) {
      return make_variable(rw.var_for(a));
    });
    rw.check_dropped_ranges();
    if (rw.error)
      return error(diag::StrategyInapplicable, *rw.error, rule_label(orig));
    std::vector<ConstraintPtr> body;
    for (const auto& [key, a] : rw.order) {
      auto args = flat_args(a);
      args.push_back(make_variable(rw.payloadVar.at(key)));
      body.push_back(make_atom(Access{coo_of(a.relation), {std::move(args)}}));
    }
    for (const auto& c : rw.kept) body.push_back(c);
    r.constraint = conjoin(std::move(body));
    out.rules.push_back(std::move(r));
  }
  // Shape declarations about re-encoded tensors describe the old layout.
  for (const auto& d : des.value().declarations) {
    const auto* cei = std::get_if<CeiCall>(&d->node);
    if (cei)
      if (auto rel = cei_relation(*cei))
        if (cooName.count(*rel)) continue;
    out.declarations.push_back(d);
  }
  return out;
}

Result<Program> lower_csr(const Program& p) {
  auto des = desugar(p);
  if (!des.ok()) return des.errors();
  const Program& dp = des.value();
  auto relNames = collect_relation_names(dp);
  NamePool relPool{relNames, ""};

  // Census: every order-2 tensor read becomes a CSR matrix; deeper tensors
  // have no row/column split.
  std::vector<std::string> matrices;
  std::set<std::string> matrixSet;
  std::optional<Diagnostic> arityErr;
  auto census = [&](const Access& a, const std::string& rule) {
    int arity = total_arity(a);
    if (arity == 2 && matrixSet.insert(a.relation).second)
      matrices.push_back(a.relation);
    if (arity > 2 && !arityErr)
      arityErr = error(diag::StrategyInapplicable,
                       "CSR encodes matrices; " + a.relation + " has order " +
                           std::to_string(arity),
                       rule);
  };
  for (const auto& r : dp.rules) {
    std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& e) {
      if (!e) return;
      if (const auto* a = std::get_if<Access>(&e->node)) {
        if (!a->argLists.empty()) census(*a, rule_label(r));
        for (const auto& list : a->argLists)
          for (const auto& q : list) walk(q);
        return;
      }
      if (const auto* b = std::get_if<BinaryExpr>(&e->node)) {
        walk(b->lhs);
        walk(b->rhs);
      } else if (const auto* n = std::get_if<NegateExpr>(&e->node)) {
        walk(n->operand);
      } else if (const auto* f = std::get_if<EeiCall>(&e->node)) {
        for (const auto& q : f->args) walk(q);
      }
    };
    walk(r.expr);
    for (const auto& c : flatten_conjunction(r.constraint))
      if (const auto* cmp = std::get_if<Comparison>(&c->node)) {
        walk(cmp->lhs);
        walk(cmp->rhs);
      }
  }
  if (arityErr) return *arityErr;
  if (matrices.empty())
    return error(diag::StrategyInapplicable,
                 "no order-2 tensor to encode as CSR");

  // One decode rule per matrix. The classic array names n/P/I/V are used
  // verbatim when a single matrix is encoded and none of them is already a
  // relation; otherwise every array is prefixed with the matrix name.
  bool bare = matrices.size() == 1 && !relNames.count("n") &&
              !relNames.count("P") && !relNames.count("I") &&
              !relNames.count("V");
  std::map<std::string, std::string> csrName;
  std::vector<Rule> decodes;
  for (const auto& m : matrices) {
    std::string n = bare ? relPool.fresh("n") : relPool.fresh(m + "_n");
    std::string P = bare ? relPool.fresh("P") : relPool.fresh(m + "_P");
    std::string I = bare ? relPool.fresh("I") : relPool.fresh(m + "_I");
    std::string V = bare ? relPool.fresh("V") : relPool.fresh(m + "_V");
    std::string csr = relPool.fresh(m + "_CSR");
    csrName.emplace(m, csr);
    std::string text = csr + "(i)(j) := " + V + "(p) if (0<=i<" + n +
                       "),(p1=" + P + "(i)), (p2=" + P +
                       "(i+1)), (p1<=p<p2), (j=" + I + "(p))";
    auto dr = parse(text);
    if (!dr.ok()) return dr.errors();
    decodes.push_back(dr.value().rules.front());
  }

  Program out;
  for (auto& d : decodes) out.rules.push_back(std::move(d));
  for (const auto& orig : dp.rules) {
    if (orig.expr && !product_form_expr(orig.expr))
      return error(diag::StrategyInapplicable,
                   "the payload expression is not a product of tensor reads",
                   rule_label(orig));
    Rule r = orig;
    NamePool varPool{relPool.used, ""};
    auto fv = free_variables(r);
    varPool.used.insert(fv.begin(), fv.end());
    SparseRewrite rw{r, varPool, {}, {}, {}, {}, {}, {}, {}};
    rw.scan_conjuncts();
    for (const auto& c : flatten_conjunction(r.constraint))
      if (auto b = payload_binding(*c)) rw.var_for(b->access, b->var);
    r.expr = rewrite_product(r.expr, [&](const Access& a) {
      return make_variable(rw.var_for(a));
    });
    rw.check_dropped_ranges();
    if (rw.error)
      return error(diag::StrategyInapplicable, *rw.error, rule_label(orig));
    std::vector<ConstraintPtr> body;
    for (const auto& [key, a] : rw.order) {
      ExprPtr read;
      if (total_arity(a) == 2) {
        auto args = flat_args(a);
        read = make_access_expr(
            Access{csrName.at(a.relation), {{args[0]}, {args[1]}}});
      } else {
        read = make_access_expr(a);
      }
      body.push_back(make_comparison(make_variable(rw.payloadVar.at(key)),
                                     CompareOp::Eq, std::move(read)));
    }
    for (const auto& c : rw.kept) body.push_back(c);
    r.constraint = conjoin(std::move(body));
    out.rules.push_back(std::move(r));
  }
  for (const auto& d : dp.declarations) {
    const auto* cei = std::get_if<CeiCall>(&d->node);
    if (cei)
      if (auto rel = cei_relation(*cei))
        if (csrName.count(*rel)) continue;
    out.declarations.push_back(d);
  }
  return out;
}

}  // namespace

Result<Program> lower_tensor(const Program& p, TensorFormat format) {
  const SlangSpec& src = *find_slang("dense-tensor");
  auto rep = validate(p, src);
  if (!rep.member) return slang_errors(diag::SlangViolation, src, rep);
  switch (format) {
    case TensorFormat::Dense: return p;
    case TensorFormat::Coo: return lower_coo(p);
    case TensorFormat::Csr: return lower_csr(p);
  }
  return p;
}

// ------------------------------------------------------------------ lift

namespace {

// A rule of the form `Xh(k...)(...)... := X(vars...) [, order(k...)]`
// whose head re-keys exactly the atom's named columns.
struct BuildShape {
  Access base;
  std::vector<std::vector<std::string>> headLists;
  std::vector<std::string> flatHead;
  bool referenced = false;
};

std::optional<BuildShape> match_build(const Rule& r) {
  if (r.action != Action::Define || r.expr) return std::nullopt;
  if (r.head.argLists.size() < 2) return std::nullopt;
  BuildShape b;
  std::set<std::string> headVars;
  for (const auto& list : r.head.argLists) {
    std::vector<std::string> vs;
    for (const auto& e : list) {
      auto v = bare_var(e);
      if (!v || is_wildcard(*v) || !headVars.insert(*v).second)
        return std::nullopt;
      vs.push_back(*v);
      b.flatHead.push_back(*v);
    }
    if (vs.empty()) return std::nullopt;
    b.headLists.push_back(std::move(vs));
  }
  const Access* atom = nullptr;
  for (const auto& c : flatten_conjunction(r.constraint)) {
    if (const auto* ba = std::get_if<BoolConst>(&c->node)) {
      if (ba->value) continue;
      return std::nullopt;
    }
    if (const auto* aa = std::get_if<AtomAccess>(&c->node)) {
      if (atom || aa->access.argLists.size() != 1 ||
          !all_bare_vars(aa->access.argLists))
        return std::nullopt;
      atom = &aa->access;
      continue;
    }
    if (const auto* cei = std::get_if<CeiCall>(&c->node)) {
      if (cei->name != "order" || !all_bare_vars(cei->argLists))
        return std::nullopt;
      for (const auto& list : cei->argLists)
        for (const auto& e : list)
          if (!headVars.count(*bare_var(e))) return std::nullopt;
      continue;
    }
    return std::nullopt;
  }
  if (!atom) return std::nullopt;
  std::set<std::string> atomVars;
  for (const auto& v : atom_vars(*atom))
    if (!is_wildcard(v)) atomVars.insert(v);
  if (atomVars != headVars) return std::nullopt;
  b.base = *atom;
  return b;
}

}  // namespace

Result<Program> lift_join(const Program& p) {
  const SlangSpec& src = *find_slang("physical-join");
  auto rep = validate(p, src);
  if (!rep.member) return slang_errors(diag::SlangViolation, src, rep);
  auto des = desugar(p);
  if (!des.ok()) return des.errors();
  const Program& dp = des.value();

  // Build detection: single-definition rules with a re-keying shape.
  std::map<std::string, int> defs;
  for (const auto& r : dp.rules) defs[r.head.relation]++;
  std::map<std::string, BuildShape> builds;
  std::vector<bool> isBuild(dp.rules.size(), false);
  for (size_t i = 0; i < dp.rules.size(); ++i) {
    if (defs[dp.rules[i].head.relation] != 1) continue;
    if (auto b = match_build(dp.rules[i])) {
      builds.emplace(dp.rules[i].head.relation, std::move(*b));
      isBuild[i] = true;
    }
  }

  auto lift_rule = [&](const Rule& orig) -> Result<Rule> {
    auto fail = [&](const std::string& msg) {
      return error(diag::NotAnEncoding, msg, rule_label(orig));
    };
    auto conjuncts = flatten_conjunction(orig.constraint);
    std::vector<std::vector<ConstraintPtr>> slots(conjuncts.size());

    struct Instance {
      BuildShape* b;
      std::vector<std::vector<ExprPtr>> given;
      size_t anchor;
      bool continued = false;
    };
    std::vector<Instance> inst;
    std::map<std::string, size_t> alias;    // relation variable -> instance
    std::map<std::string, size_t> pending;  // build + given -> instance

    auto given_key = [](const BuildShape* b,
                        const std::vector<std::vector<ExprPtr>>& given) {
      std::ostringstream os;
      os << b->base.relation << "#" << b;
      for (const auto& list : given) {
        os << "|";
        for (const auto& e : list) os << print(e) << ",";
      }
      return os.str();
    };
    auto lists_fit = [](const BuildShape& b,
                        const std::vector<std::vector<ExprPtr>>& given) {
      if (given.size() > b.headLists.size()) return false;
      for (size_t i = 0; i < given.size(); ++i)
        if (given[i].size() != b.headLists[i].size()) return false;
      return true;
    };
    auto emit_full = [&](BuildShape& b,
                         const std::vector<std::vector<ExprPtr>>& given,
                         size_t anchor) {
      VarSubst m;
      size_t k = 0;
      for (const auto& list : given)
        for (const auto& e : list) m[b.flatHead[k++]] = e;
      Access a = b.base;
      a.argLists = subst(a.argLists, m);
      slots[anchor].push_back(make_atom(std::move(a)));
      b.referenced = true;
    };

    for (size_t ci = 0; ci < conjuncts.size(); ++ci) {
      const ConstraintPtr& c = conjuncts[ci];
      if (const auto* aa = std::get_if<AtomAccess>(&c->node)) {
        const std::string& rel = aa->access.relation;
        auto al = alias.find(rel);
        if (al != alias.end()) {
          Instance& parent = inst[al->second];
          auto given = parent.given;
          for (const auto& list : aa->access.argLists) given.push_back(list);
          if (!lists_fit(*parent.b, given))
            return fail("the access " + print(aa->access) +
                        " does not match the shape of encoding " +
                        parent.b->base.relation);
          parent.continued = true;
          if (given.size() == parent.b->headLists.size()) {
            emit_full(*parent.b, given, parent.anchor);
          } else {
            inst.push_back({parent.b, std::move(given), parent.anchor});
            pending[given_key(parent.b, inst.back().given)] = inst.size() - 1;
          }
          continue;
        }
        auto bit = builds.find(rel);
        if (bit != builds.end()) {
          const auto& given = aa->access.argLists;
          if (!lists_fit(bit->second, given))
            return fail("the access " + print(aa->access) +
                        " does not match the shape of encoding " + rel);
          bit->second.referenced = true;
          if (given.size() == bit->second.headLists.size()) {
            emit_full(bit->second, given, ci);
          } else {
            auto key = given_key(&bit->second, given);
            if (!pending.count(key)) {
              inst.push_back({&bit->second, given, ci});
              pending[key] = inst.size() - 1;
            }
          }
          continue;
        }
        slots[ci].push_back(c);
        continue;
      }
      if (const auto* nr = std::get_if<NestedRule>(&c->node)) {
        const Rule& inner = *nr->rule;
        const auto* body = std::get_if<AtomAccess>(&inner.constraint->node);
        if (!body)
          return fail("the binding " + print(c) +
                      " is not a sub-relation of a join encoding");
        const std::string& base = body->access.relation;
        const std::string& bindVar = inner.head.relation;
        BuildShape* b = nullptr;
        std::vector<std::vector<ExprPtr>> given;
        size_t anchor = ci;
        auto al = alias.find(base);
        if (al != alias.end()) {
          Instance& parent = inst[al->second];
          b = parent.b;
          given = parent.given;
          anchor = parent.anchor;
          parent.continued = true;
          for (const auto& list : body->access.argLists)
            given.push_back(list);
        } else {
          auto bit = builds.find(base);
          if (bit == builds.end())
            return fail(base + " is not a join encoding or a sub-relation");
          b = &bit->second;
          b->referenced = true;
          given = body->access.argLists;
        }
        if (!lists_fit(*b, given) || given.size() >= b->headLists.size())
          return fail("the binding " + print(c) +
                      " does not match the shape of encoding " +
                      b->base.relation);
        auto key = given_key(b, given);
        auto pit = pending.find(key);
        if (pit != pending.end()) {
          // Adopt the generator's instance: the prefix access and the
          // binding denote the same sub-relation.
          alias[bindVar] = pit->second;
          pending.erase(pit);
        } else {
          inst.push_back({b, std::move(given), anchor});
          alias[bindVar] = inst.size() - 1;
        }
        continue;
      }
      if (const auto* cei = std::get_if<CeiCall>(&c->node)) {
        if (cei->name == "order") continue;  // layout hint; no content
        slots[ci].push_back(c);
        continue;
      }
      slots[ci].push_back(c);
    }
    // Every partially-applied encoding must have been carried through to a
    // full access; anything else is a dangling sub-relation.
    for (const auto& in : inst)
      if (!in.continued)
        return fail("a sub-relation of encoding " + in.b->base.relation +
                    " is never consumed");

    Rule out = orig;
    out.constraint = assemble(slots);
    return canonicalize_rule(out);
  };

  std::vector<Rule> lifted(dp.rules.size());
  for (size_t i = 0; i < dp.rules.size(); ++i) {
    if (isBuild[i]) continue;
    auto lr = lift_rule(dp.rules[i]);
    if (!lr.ok()) return lr.errors();
    lifted[i] = std::move(lr.value());
  }
  Program out;
  out.declarations = dp.declarations;
  for (size_t i = 0; i < dp.rules.size(); ++i) {
    if (isBuild[i]) {
      // Unreferenced builds are ordinary rules and stay behind.
      if (!builds.at(dp.rules[i].head.relation).referenced)
        out.rules.push_back(dp.rules[i]);
      continue;
    }
    out.rules.push_back(std::move(lifted[i]));
  }
  const SlangSpec& dst = *find_slang("logical-join");
  auto outRep = validate(out, dst);
  if (!outRep.member) {
    Diagnostics ds;
    for (const auto& v : outRep.violations)
      ds.push_back(error(diag::NotAnEncoding,
                         "the lifted program leaves the join fragment: " +
                             v.message,
                         v.rule));
    return ds;
  }
  return out;
}

const std::vector<LoweringPass>& lowering_passes() {
  static const std::vector<LoweringPass> passes = [] {
    std::vector<LoweringPass> v;
    for (JoinStrategy s :
         {JoinStrategy::Nlj, JoinStrategy::Hash, JoinStrategy::SortMerge,
          JoinStrategy::Generic, JoinStrategy::Free, JoinStrategy::Diamond})
      v.push_back({std::string("join:") + to_string(s), "logical-join",
                   "physical-join", "",
                   [s](const Program& p) { return lower_join(p, s); }});
    for (TensorFormat f : {TensorFormat::Coo, TensorFormat::Csr})
      v.push_back({std::string("tensor:") + to_string(f), "dense-tensor",
                   "sparse-tensor", "",
                   [f](const Program& p) { return lower_tensor(p, f); }});
    v.push_back({"tensor:dense", "dense-tensor", "dense-tensor", "",
                 [](const Program& p) {
                   return lower_tensor(p, TensorFormat::Dense);
                 }});
    v.push_back({"lift:join", "physical-join", "logical-join", "",
                 [](const Program& p) { return lift_join(p); }});
    return v;
  }();
  return passes;
}

}  // namespace hojabr
