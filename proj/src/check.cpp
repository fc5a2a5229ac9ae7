#include "hojabr/check.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <limits>
#include <sstream>
#include <tuple>

#include "hojabr/desugar.hpp"
#include "hojabr/syntax.hpp"

namespace hojabr {

namespace {

// ------------------------------------------------------------- utilities

const Variable* as_variable(const ExprPtr& e) {
  return e ? std::get_if<Variable>(&e->node) : nullptr;
}
const Literal* as_literal(const ExprPtr& e) {
  return e ? std::get_if<Literal>(&e->node) : nullptr;
}
const Access* as_access(const ExprPtr& e) {
  return e ? std::get_if<Access>(&e->node) : nullptr;
}

bool is_bare_var(const ExprPtr& e, std::string* name = nullptr) {
  const auto* v = as_variable(e);
  if (!v || is_wildcard(v->name)) return false;
  if (name) *name = v->name;
  return true;
}

std::vector<ExprPtr> flatten_access_args(const Access& a) {
  std::vector<ExprPtr> out;
  for (const auto& list : a.argLists)
    for (const auto& e : list) out.push_back(e);
  return out;
}

// Identifier naming a relation in CEI first-argument position: a bare
// variable (`card(R, 2)`) or an argument-less access.
std::optional<std::string> relation_name_arg(const ExprPtr& e) {
  if (const auto* v = as_variable(e)) return v->name;
  if (const auto* a = as_access(e))
    if (a->argLists.empty() ||
        (a->argLists.size() == 1 && a->argLists[0].empty()))
      return a->relation;
  return std::nullopt;
}

void collect_expr_vars(const ExprPtr& e, std::set<std::string>& out) {
  if (!e) return;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Variable>) {
          if (!is_wildcard(n.name)) out.insert(n.name);
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          collect_expr_vars(n.lhs, out);
          collect_expr_vars(n.rhs, out);
        } else if constexpr (std::is_same_v<T, NegateExpr>) {
          collect_expr_vars(n.operand, out);
        } else if constexpr (std::is_same_v<T, Access>) {
          for (const auto& list : n.argLists)
            for (const auto& a : list) collect_expr_vars(a, out);
        } else if constexpr (std::is_same_v<T, EeiCall>) {
          for (const auto& a : n.args) collect_expr_vars(a, out);
        }
      },
      e->node);
}

void collect_constraint_vars(const ConstraintPtr& c, std::set<std::string>& out) {
  if (!c) return;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Conjunction> ||
                      std::is_same_v<T, Disjunction>) {
          collect_constraint_vars(n.lhs, out);
          collect_constraint_vars(n.rhs, out);
        } else if constexpr (std::is_same_v<T, Negation>) {
          collect_constraint_vars(n.inner, out);
        } else if constexpr (std::is_same_v<T, AtomAccess>) {
          for (const auto& list : n.access.argLists)
            for (const auto& a : list) collect_expr_vars(a, out);
        } else if constexpr (std::is_same_v<T, Comparison>) {
          collect_expr_vars(n.lhs, out);
          collect_expr_vars(n.rhs, out);
        } else if constexpr (std::is_same_v<T, CeiCall>) {
          bool first = true;
          for (const auto& list : n.argLists)
            for (const auto& a : list) {
              if (!first) collect_expr_vars(a, out);
              first = false;
            }
        } else if constexpr (std::is_same_v<T, NestedRule>) {
          if (n.rule) collect_constraint_vars(n.rule->constraint, out);
        }
        // BoolConst and sugar forms: nothing / unreachable after desugar.
      },
      c->node);
}

std::vector<ConstraintPtr> flatten_disjunction(const ConstraintPtr& c) {
  std::vector<ConstraintPtr> out;
  std::function<void(const ConstraintPtr&)> walk = [&](const ConstraintPtr& d) {
    if (const auto* dj = d ? std::get_if<Disjunction>(&d->node) : nullptr) {
      walk(dj->lhs);
      walk(dj->rhs);
    } else {
      out.push_back(d);
    }
  };
  walk(c);
  return out;
}

Diagnostic err_at(const char* code, std::string msg, const std::string& rule,
                  int line, int col) {
  Diagnostic d = error(code, std::move(msg));
  d.rule = rule;
  d.line = line;
  d.col = col;
  return d;
}

}  // namespace

// ------------------------------------------------------------ type names

const char* to_string(ScalarType t) {
  switch (t) {
    case ScalarType::Int: return "int";
    case ScalarType::Float: return "float";
    case ScalarType::String: return "string";
    case ScalarType::Bool: return "bool";
  }
  return "?";
}

ScalarType scalar_type_of(const Scalar& s) {
  switch (s.index()) {
    case 0: return ScalarType::Int;
    case 1: return ScalarType::Float;
    case 2: return ScalarType::String;
    default: return ScalarType::Bool;
  }
}

std::optional<ScalarType> type_from_name(const std::string& name) {
  if (name == "int") return ScalarType::Int;
  if (name == "float" || name == "real") return ScalarType::Float;
  if (name == "string") return ScalarType::String;
  if (name == "bool") return ScalarType::Bool;
  return std::nullopt;
}

namespace {

bool numeric(ScalarType t) {
  return t == ScalarType::Int || t == ScalarType::Float;
}

// --------------------------------------------------- schema/type inference

struct VarInfo {
  std::optional<ScalarType> type;
  bool pinned = false;       // set by explicit type(x, T)
  std::string source;        // human-readable origin of the current type
};

struct Inferencer {
  Inferencer(const Program& p, const Database* d) : prog(p), db(d) {}

  const Program& prog;
  const Database* db = nullptr;
  TypeEnv env;
  std::vector<Diagnostic> errs;

  // Per-rule state while walking one rule.
  std::map<std::string, VarInfo>* vars = nullptr;
  std::set<std::string> relVars;
  const Rule* rule = nullptr;
  std::string ruleName;
  bool changed = false;

  RelationInfo& rel(const std::string& name) { return env.relSchemas[name]; }

  void type_error(std::string msg, int line, int col) {
    errs.push_back(err_at(diag::TypeConflict, std::move(msg), ruleName, line, col));
  }

  std::string describe(const std::optional<ScalarType>& t) {
    return t ? to_string(*t) : "?";
  }

  // Merge a type observation into a variable; Int/Float widen to Float
  // unless the variable's type was pinned by an explicit declaration.
  void merge_var(const std::string& name, ScalarType t, const std::string& src,
                 int line, int col, bool pin = false) {
    if (is_wildcard(name)) return;
    auto& info = (*vars)[name];
    if (!info.type) {
      info.type = t;
      info.pinned = pin;
      info.source = src;
      changed = true;
      return;
    }
    if (*info.type == t) {
      if (pin) info.pinned = true;
      return;
    }
    bool bothNum = numeric(*info.type) && numeric(t);
    if (bothNum && !info.pinned && !pin) {
      if (*info.type != ScalarType::Float) {
        info.type = ScalarType::Float;
        info.source = src;
        changed = true;
      }
      return;
    }
    type_error("variable " + name + ": " + to_string(*info.type) + " (from " +
                   info.source + ") conflicts with " + to_string(t) +
                   " (from " + src + ")",
               line, col);
    // Keep the first type so one conflict reports once.
  }

  void merge_col(RelationInfo& ri, int idx, std::optional<ScalarType> t,
                 const std::string& relName, int line, int col) {
    if (!t) return;
    if (idx >= static_cast<int>(ri.colTypes.size()))
      ri.colTypes.resize(idx + 1);
    auto& cur = ri.colTypes[idx];
    if (!cur) {
      cur = t;
      changed = true;
      return;
    }
    if (*cur == *t) return;
    if (numeric(*cur) && numeric(*t)) {
      if (*cur != ScalarType::Float) {
        cur = ScalarType::Float;
        changed = true;
      }
      return;
    }
    type_error("relation " + relName + " column " + std::to_string(idx) +
                   ": " + to_string(*cur) + " conflicts with " + to_string(*t),
               line, col);
  }

  void merge_payload(RelationInfo& ri, std::optional<ScalarType> t,
                     const std::string& relName, int line, int col) {
    if (!t) return;
    if (!ri.payloadType) {
      ri.payloadType = t;
      changed = true;
      return;
    }
    if (*ri.payloadType == *t) return;
    if (numeric(*ri.payloadType) && numeric(*t)) {
      if (*ri.payloadType != ScalarType::Float) {
        ri.payloadType = ScalarType::Float;
        changed = true;
      }
      return;
    }
    type_error("relation " + relName + " payload: " +
                   to_string(*ri.payloadType) + " conflicts with " +
                   to_string(*t),
               line, col);
  }

  std::optional<ScalarType> var_type(const std::string& name) {
    auto it = vars->find(name);
    return it == vars->end() ? std::nullopt : it->second.type;
  }

  // Unify an access against its relation's schema; returns the payload type
  // for full-arity accesses, nullopt otherwise.
  std::optional<ScalarType> visit_access(const Access& a, bool expectFull,
                                         int line, int col) {
    if (relVars.count(a.relation)) {
      // Sub-relation bound by a nested rule: columns unknown statically.
      for (const auto& e : flatten_access_args(a)) infer_expr(e);
      return std::nullopt;
    }
    auto args = flatten_access_args(a);
    RelationInfo& ri = rel(a.relation);
    int arity = static_cast<int>(args.size());
    if (ri.totalArity >= 0) {
      if (arity > ri.totalArity) {
        errs.push_back(err_at(
            diag::ArityMismatch,
            "relation " + a.relation + " accessed with " +
                std::to_string(arity) + " argument(s) but has arity " +
                std::to_string(ri.totalArity),
            ruleName, line, col));
        return std::nullopt;
      }
      if (expectFull && arity != ri.totalArity) {
        errs.push_back(err_at(
            diag::KindError,
            "partial access " + a.relation + " with " + std::to_string(arity) +
                " of " + std::to_string(ri.totalArity) +
                " keys yields a sub-relation, not a scalar",
            ruleName, line, col));
        return std::nullopt;
      }
    } else if (expectFull) {
      ri.totalArity = arity;
      changed = true;
    }
    for (int i = 0; i < arity; ++i) {
      auto t = infer_expr(args[i]);
      std::string vn;
      if (is_bare_var(args[i], &vn)) {
        // Propagate column type back onto the variable, too.
        if (i < static_cast<int>(ri.colTypes.size()) && ri.colTypes[i])
          merge_var(vn, *ri.colTypes[i],
                    a.relation + " column " + std::to_string(i), line, col);
      }
      merge_col(ri, i, t, a.relation, line, col);
    }
    bool full = ri.totalArity >= 0 && arity == ri.totalArity;
    if (full) return ri.payloadType;
    return std::nullopt;
  }

  std::optional<ScalarType> infer_expr(const ExprPtr& e) {
    if (!e) return std::nullopt;
    return std::visit(
        [&](const auto& n) -> std::optional<ScalarType> {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Literal>) {
            return scalar_type_of(n.value);
          } else if constexpr (std::is_same_v<T, Variable>) {
            if (is_wildcard(n.name)) return std::nullopt;
            if (relVars.count(n.name)) {
              errs.push_back(err_at(diag::KindError,
                                    "relation variable " + n.name +
                                        " used as a scalar",
                                    ruleName, e->line, e->col));
              return std::nullopt;
            }
            return var_type(n.name);
          } else if constexpr (std::is_same_v<T, BinaryExpr>) {
            auto lt = infer_expr(n.lhs), rt = infer_expr(n.rhs);
            for (const auto* t : {&lt, &rt})
              if (*t && !numeric(**t))
                type_error("arithmetic over " + describe(*t), e->line, e->col);
            if (lt == ScalarType::Float || rt == ScalarType::Float)
              return ScalarType::Float;
            if (lt == ScalarType::Int && rt == ScalarType::Int)
              return ScalarType::Int;
            return std::nullopt;
          } else if constexpr (std::is_same_v<T, NegateExpr>) {
            auto t = infer_expr(n.operand);
            if (t && !numeric(*t))
              type_error("negation of " + describe(t), e->line, e->col);
            return t;
          } else if constexpr (std::is_same_v<T, Access>) {
            return visit_access(n, /*expectFull=*/true, e->line, e->col);
          } else {  // EeiCall
            if (!is_eei_name(n.name))
              errs.push_back(err_at(diag::UnknownEei,
                                    "unknown expression extension " + n.name,
                                    ruleName, e->line, e->col));
            else if (n.args.size() != 1)
              errs.push_back(err_at(
                  diag::ArityMismatch,
                  n.name + " takes 1 argument, got " +
                      std::to_string(n.args.size()),
                  ruleName, e->line, e->col));
            std::optional<ScalarType> at;
            for (const auto& a : n.args) at = infer_expr(a);
            if (at && !numeric(*at))
              type_error(n.name + " applied to " + describe(at), e->line,
                         e->col);
            if (n.name == "sin" || n.name == "cos" || n.name == "avg" ||
                n.name == "softmax")
              return ScalarType::Float;
            return at;  // relu/min/max/sum/median preserve the argument type
          }
        },
        e->node);
  }

  void equate(const ExprPtr& a, const ExprPtr& b, int line, int col) {
    auto ta = infer_expr(a), tb = infer_expr(b);
    std::string va, vb;
    if (is_bare_var(a, &va) && tb)
      merge_var(va, *tb, va + "=" + print(b), line, col);
    if (is_bare_var(b, &vb) && ta)
      merge_var(vb, *ta, print(a) + "=" + vb, line, col);
    if (ta && tb && *ta != *tb && !(numeric(*ta) && numeric(*tb)))
      type_error("comparison between " + describe(ta) + " and " + describe(tb),
                 line, col);
  }

  void visit_constraint(const ConstraintPtr& c, int ruleIdx) {
    if (!c) return;
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Conjunction> ||
                        std::is_same_v<T, Disjunction>) {
            visit_constraint(n.lhs, ruleIdx);
            visit_constraint(n.rhs, ruleIdx);
          } else if constexpr (std::is_same_v<T, Negation>) {
            visit_constraint(n.inner, ruleIdx);
          } else if constexpr (std::is_same_v<T, AtomAccess>) {
            visit_access(n.access, /*expectFull=*/false, c->line, c->col);
          } else if constexpr (std::is_same_v<T, Comparison>) {
            if (n.op == CompareOp::Eq || n.op == CompareOp::Ne) {
              equate(n.lhs, n.rhs, c->line, c->col);
            } else {
              auto ta = infer_expr(n.lhs), tb = infer_expr(n.rhs);
              for (const auto* t : {&ta, &tb})
                if (*t && !numeric(**t) && **t != ScalarType::String)
                  type_error("ordering comparison over " + describe(*t),
                             c->line, c->col);
              std::string va, vb;
              if (is_bare_var(n.lhs, &va) && tb && numeric(*tb))
                merge_var(va, *tb, "comparison with " + print(n.rhs), c->line,
                          c->col);
              if (is_bare_var(n.rhs, &vb) && ta && numeric(*ta))
                merge_var(vb, *ta, "comparison with " + print(n.lhs), c->line,
                          c->col);
            }
            env.refinements[ruleIdx].push_back(c);
          } else if constexpr (std::is_same_v<T, CeiCall>) {
            visit_cei(n, c, ruleIdx);
          } else if constexpr (std::is_same_v<T, NestedRule>) {
            if (n.rule) visit_constraint(n.rule->constraint, ruleIdx);
          }
        },
        c->node);
  }

  void visit_cei(const CeiCall& n, const ConstraintPtr& c, int /*ruleIdx*/) {
    if (!is_cei_name(n.name)) {
      errs.push_back(err_at(diag::UnknownCei,
                            "unknown constraint extension " + n.name, ruleName,
                            c->line, c->col));
      return;
    }
    if (n.name == "type") {
      if (n.argLists.size() == 1 && n.argLists[0].size() == 2) {
        auto target = relation_name_arg(n.argLists[0][0]);
        auto tn = relation_name_arg(n.argLists[0][1]);
        auto t = tn ? type_from_name(*tn) : std::nullopt;
        if (target && t) {
          if (!target->empty() && std::isupper(static_cast<unsigned char>((*target)[0])))
            merge_payload(rel(*target), t, *target, c->line, c->col);
          else
            merge_var(*target, *t, "type(" + *target + ", " + *tn + ")",
                      c->line, c->col, /*pin=*/true);
          return;
        }
      }
      errs.push_back(err_at(diag::BadCeiUse,
                            "type(...) takes a variable or relation and a "
                            "type name",
                            ruleName, c->line, c->col));
      return;
    }
    if (n.name == "card") {
      // In-rule card(X, dims...): dimension variables are integers.
      if (!n.argLists.empty())
        for (size_t i = 1; i < n.argLists[0].size(); ++i) {
          std::string vn;
          if (is_bare_var(n.argLists[0][i], &vn))
            merge_var(vn, ScalarType::Int, "card dimension", c->line, c->col);
        }
      return;
    }
    if (n.name == "order" || n.name == "deg") return;  // layout/hints
    // fdep/pkey/unique are declaration-only; the planner reports C011.
  }

  // ---- relation facts from heads, data and declarations ----

  void seed_from_db() {
    if (!db) return;
    for (const auto& name : db->names()) {
      auto r = db->relation(name);
      auto* sch = db->schema(name);
      RelationInfo& ri = rel(name);
      ri.presentInData = true;
      ri.totalArity = r->total_arity();
      ri.levels = r->levels();
      ri.dataSize = static_cast<std::int64_t>(r->entries_flat().size());
      if (sch) ri.attrs = sch->attrs;
      switch (r->semiring()) {
        case SemiringKind::Boolean: ri.payloadType = ScalarType::Bool; break;
        case SemiringKind::Natural: ri.payloadType = ScalarType::Int; break;
        case SemiringKind::Real: ri.payloadType = ScalarType::Float; break;
      }
      auto entries = r->entries_flat();
      if (!entries.empty())
        for (size_t i = 0; i < entries.front().first.size(); ++i)
          merge_col(ri, static_cast<int>(i),
                    scalar_type_of(entries.front().first[i]), name, 0, 0);
    }
  }

  void seed_from_heads() {
    for (const auto& r : prog.rules) {
      RelationInfo& ri = rel(r.head.relation);
      ri.definedByRule = true;
      auto args = flatten_access_args(r.head);
      int arity = static_cast<int>(args.size());
      std::vector<int> levels;
      for (const auto& list : r.head.argLists)
        levels.push_back(static_cast<int>(list.size()));
      if (ri.totalArity < 0) {
        ri.totalArity = arity;
        ri.levels = levels;
        // Head variable names double as column names when nothing better
        // is known (used by integrity checks over derived relations).
        if (ri.attrs.empty()) {
          for (const auto& a : args) {
            const auto* v = as_variable(a);
            ri.attrs.push_back(v ? v->name : "");
          }
        }
      } else if (ri.totalArity != arity) {
        errs.push_back(err_at(diag::ArityMismatch,
                              "relation " + r.head.relation +
                                  " defined with arity " +
                                  std::to_string(arity) + " and " +
                                  std::to_string(ri.totalArity),
                              r.head.relation, r.line, r.col));
      }
    }
  }

  void seed_from_declarations() {
    for (const auto& d : prog.declarations) {
      const auto* cei = d ? std::get_if<CeiCall>(&d->node) : nullptr;
      if (!cei) continue;  // validated separately
      if (cei->argLists.empty() || cei->argLists[0].empty()) continue;
      auto relName = relation_name_arg(cei->argLists[0][0]);
      if (!relName) continue;
      RelationInfo& ri = rel(*relName);
      if (cei->name == "card") {
        std::vector<std::int64_t> dims;
        bool allInts = true;
        for (size_t i = 1; i < cei->argLists[0].size(); ++i) {
          const auto* lit = as_literal(cei->argLists[0][i]);
          const auto* v = as_variable(cei->argLists[0][i]);
          if (lit && std::holds_alternative<std::int64_t>(lit->value))
            dims.push_back(std::get<std::int64_t>(lit->value));
          else if (v && is_wildcard(v->name))
            dims.push_back(-1);  // unconstrained dimension
          else
            allInts = false;
        }
        if (!allInts) continue;  // C012 reported by validate_declarations
        if (dims.size() == 1 && dims[0] >= 0)
          ri.declaredCap = dims[0];
        else if (dims.size() > 1)
          ri.declaredShape = dims;
      } else if (cei->name == "order") {
        ri.ordered = true;
        for (size_t i = 1; i < cei->argLists[0].size(); ++i)
          if (auto col = relation_name_arg(cei->argLists[0][i]))
            ri.orderCols.push_back(*col);
      } else if (cei->name == "type") {
        if (cei->argLists[0].size() == 2)
          if (auto tn = relation_name_arg(cei->argLists[0][1]))
            if (auto t = type_from_name(*tn))
              merge_payload(ri, t, *relName, d->line, d->col);
      }
    }
  }

  Result<TypeEnv> run() {
    env.varTypes.resize(prog.rules.size());
    env.refinements.resize(prog.rules.size());
    seed_from_db();
    seed_from_heads();
    seed_from_declarations();

    std::vector<std::map<std::string, VarInfo>> ruleVars(prog.rules.size());
    // Iterate to a small fixpoint so types flow through chained accesses.
    // Each pass re-derives the same conflicts (merges keep the first type on
    // conflict), so only the final pass's diagnostics are kept.
    size_t seedErrs = errs.size();
    for (int pass = 0; pass < 4; ++pass) {
      changed = false;
      errs.resize(seedErrs);
      for (size_t i = 0; i < prog.rules.size(); ++i) {
        rule = &prog.rules[i];
        ruleName = rule->head.relation;
        vars = &ruleVars[i];
        relVars = relation_variables(*rule);
        env.refinements[i].clear();
        visit_constraint(rule->constraint, static_cast<int>(i));
        // Head: unify key columns and payload.
        RelationInfo& ri = rel(rule->head.relation);
        auto headArgs = flatten_access_args(rule->head);
        for (size_t k = 0; k < headArgs.size(); ++k) {
          auto t = infer_expr(headArgs[k]);
          merge_col(ri, static_cast<int>(k), t, rule->head.relation,
                    rule->line, rule->col);
          std::string vn;
          if (is_bare_var(headArgs[k], &vn) &&
              k < ri.colTypes.size() && ri.colTypes[k])
            merge_var(vn, *ri.colTypes[k],
                      rule->head.relation + " column " + std::to_string(k),
                      rule->line, rule->col);
        }
        if (rule->expr) {
          auto t = infer_expr(rule->expr);
          merge_payload(ri, t, rule->head.relation, rule->line, rule->col);
        } else {
          merge_payload(ri, ScalarType::Bool, rule->head.relation, rule->line,
                        rule->col);
        }
      }
      if (!changed) break;
    }
    for (size_t i = 0; i < prog.rules.size(); ++i)
      for (const auto& [name, info] : ruleVars[i])
        if (info.type) env.varTypes[i][name] = *info.type;
    if (!errs.empty()) return errs;
    return env;
  }
};

}  // namespace

Result<TypeEnv> infer_types(const Program& p, const Database* db) {
  auto des = desugar(p);
  if (!des.ok()) return des.errors();
  Inferencer inf(des.value(), db);
  return inf.run();
}

// -------------------------------------------------------------- planning

namespace {

struct Planner {
  const TypeEnv& env;
  int ruleIdx;
  const Rule& rule;
  std::string ruleName;
  // Variables known from enclosing scopes (head, expr, sibling conjuncts);
  // an inner-only negation variable is one NOT in here.
  std::set<std::string> externalVars;

  std::set<std::string> ground;
  std::set<std::string> relVars;  // bound relation variables
  std::vector<Diagnostic> errs;
  BindingPlan plan;

  struct Item {
    ConstraintPtr c;
    bool consumed = false;
  };
  std::vector<Item> items;

  explicit Planner(const TypeEnv& e, int idx, const Rule& r)
      : env(e), ruleIdx(idx), rule(r), ruleName(r.head.relation) {}

  const RelationInfo* rel_info(const std::string& name) const {
    auto it = env.relSchemas.find(name);
    return it == env.relSchemas.end() ? nullptr : &it->second;
  }

  bool expr_ground(const ExprPtr& e) const {
    std::set<std::string> vs;
    collect_expr_vars(e, vs);
    for (const auto& v : vs)
      if (!ground.count(v)) return false;
    // Wildcards are never ground.
    bool wild = false;
    std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& x) {
      if (!x) return;
      if (const auto* v = std::get_if<Variable>(&x->node)) {
        if (is_wildcard(v->name)) wild = true;
        return;
      }
      if (const auto* b = std::get_if<BinaryExpr>(&x->node)) {
        walk(b->lhs);
        walk(b->rhs);
      } else if (const auto* g = std::get_if<NegateExpr>(&x->node)) {
        walk(g->operand);
      } else if (const auto* a = std::get_if<Access>(&x->node)) {
        for (const auto& list : a->argLists)
          for (const auto& q : list) walk(q);
      } else if (const auto* f = std::get_if<EeiCall>(&x->node)) {
        for (const auto& q : f->args) walk(q);
      }
    };
    walk(e);
    return !wild;
  }

  bool constraint_ground(const ConstraintPtr& c) const {
    std::set<std::string> vs;
    collect_constraint_vars(c, vs);
    for (const auto& v : vs)
      if (!ground.count(v)) return false;
    return true;
  }

  // Estimated enumeration cost of scanning a relation.
  std::int64_t rel_cost(const std::string& name) const {
    const auto* ri = rel_info(name);
    if (!ri) return std::numeric_limits<std::int64_t>::max();
    if (ri->declaredCap) return *ri->declaredCap;
    if (ri->declaredShape) {
      std::int64_t p = 1;
      for (auto d : *ri->declaredShape) p *= d < 0 ? 1 : d;
      return p;
    }
    if (ri->dataSize) return *ri->dataSize;
    return std::numeric_limits<std::int64_t>::max();
  }

  // Try to lay out the slots of a generating access. Fails (returns false)
  // when a ground-position expression needs variables that are neither
  // ground nor bound by an earlier slot of this same access.
  bool build_slots(const Access& a, std::vector<AccessSlot>& out,
                   std::set<std::string>& newlyBound) const {
    std::set<std::string> local = ground;
    for (const auto& e : flatten_access_args(a)) {
      std::string vn;
      const auto* v = as_variable(e);
      if (v && is_wildcard(v->name)) {
        AccessSlot s;
        s.mode = AccessSlot::Mode::Bind;
        s.var = v->name;
        out.push_back(std::move(s));
        continue;
      }
      if (is_bare_var(e, &vn) && !local.count(vn) && !relVars.count(vn)) {
        AccessSlot s;
        s.mode = AccessSlot::Mode::Bind;
        s.var = vn;
        out.push_back(std::move(s));
        local.insert(vn);
        newlyBound.insert(vn);
        continue;
      }
      // Ground position: every variable must be available.
      std::set<std::string> vs;
      collect_expr_vars(e, vs);
      for (const auto& q : vs)
        if (!local.count(q)) return false;
      AccessSlot s;
      s.mode = AccessSlot::Mode::Ground;
      s.expr = e;
      out.push_back(std::move(s));
    }
    return true;
  }

  // ---- classification helpers -------------------------------------------

  // Equality conjunct usable as `var = ground expr`?
  bool equality_bind(const Comparison& cmp, std::string& var, ExprPtr& expr) {
    if (cmp.op != CompareOp::Eq) return false;
    std::string l, r;
    bool lv = is_bare_var(cmp.lhs, &l) && !ground.count(l) && !relVars.count(l);
    bool rv = is_bare_var(cmp.rhs, &r) && !ground.count(r) && !relVars.count(r);
    if (lv && expr_ground(cmp.rhs)) {
      var = l;
      expr = cmp.rhs;
      return true;
    }
    if (rv && !lv && expr_ground(cmp.lhs)) {
      var = r;
      expr = cmp.lhs;
      return true;
    }
    return false;
  }

  // Equality conjunct driving an access scan: `v = X(e...)` (either order)
  // where the access still has unbound argument variables.
  struct AccessScan {
    const Access* access;
    ExprPtr other;       // the non-access side
    std::string relation;
  };
  std::optional<AccessScan> access_scan(const Comparison& cmp) {
    if (cmp.op != CompareOp::Eq) return std::nullopt;
    for (auto [a, o] : {std::pair{as_access(cmp.lhs), cmp.rhs},
                        std::pair{as_access(cmp.rhs), cmp.lhs}}) {
      if (!a) continue;
      std::set<std::string> vs;
      for (const auto& list : a->argLists)
        for (const auto& e : list) collect_expr_vars(e, vs);
      bool unbound = false;
      for (const auto& v : vs)
        if (!ground.count(v)) unbound = true;
      // Wildcards in the arguments also make this a scan.
      for (const auto& e : flatten_access_args(*a)) {
        const auto* v2 = as_variable(e);
        if (v2 && is_wildcard(v2->name)) unbound = true;
      }
      if (!unbound) continue;
      return AccessScan{a, o, a->relation};
    }
    return std::nullopt;
  }

  // ---- step emission -----------------------------------------------------

  void emit_access_generator(const Access& a, const ExprPtr& payloadSide,
                             bool isAtom) {
    StepGenAccess step;
    step.relation = a.relation;
    step.relationIsVar = relVars.count(a.relation) > 0;
    std::set<std::string> newly;
    if (!build_slots(a, step.slots, newly)) return;  // caller checked
    const auto* ri = rel_info(a.relation);
    int arity = static_cast<int>(flatten_access_args(a).size());
    if (isAtom) {
      if (!step.relationIsVar && ri && ri->totalArity > arity)
        step.prefixOnly = true;
    } else {
      std::string vn;
      if (payloadSide && is_bare_var(payloadSide, &vn) && !ground.count(vn)) {
        step.payloadVar = vn;
        newly.insert(vn);
      } else if (payloadSide) {
        step.payloadEq = payloadSide;
      }
    }
    for (const auto& v : newly) ground.insert(v);
    plan.steps.push_back(std::move(step));
  }

  std::set<std::string> boundRelVars;

  // ---- the main loop ------------------------------------------------------

  // Collect variables that some unconsumed item could still bind.
  std::set<std::string> bindable_vars() const {
    std::set<std::string> out;
    std::map<std::string, int> lower, upper;
    for (const auto& item : items) {
      if (item.consumed) continue;
      const auto& c = item.c;
      if (const auto* atom = std::get_if<AtomAccess>(&c->node)) {
        for (const auto& e : flatten_access_args(atom->access)) {
          std::string vn;
          if (is_bare_var(e, &vn)) out.insert(vn);
        }
      } else if (const auto* cmp = std::get_if<Comparison>(&c->node)) {
        std::string vn;
        if (cmp->op == CompareOp::Eq) {
          if (is_bare_var(cmp->lhs, &vn)) out.insert(vn);
          if (is_bare_var(cmp->rhs, &vn)) out.insert(vn);
          for (const auto& side : {cmp->lhs, cmp->rhs})
            if (const auto* a = as_access(side))
              for (const auto& e : flatten_access_args(*a))
                if (is_bare_var(e, &vn)) out.insert(vn);
        } else {
          // Range halves.
          auto note = [&](const ExprPtr& varSide, bool isLower) {
            std::string v;
            if (!is_bare_var(varSide, &v)) return;
            (isLower ? lower : upper)[v]++;
          };
          switch (cmp->op) {
            case CompareOp::Lt:
            case CompareOp::Le:
              note(cmp->rhs, true);   // l < v
              note(cmp->lhs, false);  // v < u
              break;
            case CompareOp::Gt:
            case CompareOp::Ge:
              note(cmp->lhs, true);   // v > l reversed
              note(cmp->rhs, false);
              break;
            default: break;
          }
        }
      } else if (const auto* cei = std::get_if<CeiCall>(&c->node)) {
        if (cei->name == "card" && !cei->argLists.empty())
          for (size_t i = 1; i < cei->argLists[0].size(); ++i) {
            std::string vn;
            if (is_bare_var(cei->argLists[0][i], &vn)) out.insert(vn);
          }
      } else if (std::holds_alternative<Disjunction>(c->node)) {
        std::set<std::string> vs;
        collect_constraint_vars(c, vs);
        for (const auto& v : vs) out.insert(v);
      }
    }
    for (const auto& [v, n] : lower)
      if (upper.count(v)) out.insert(v);
    return out;
  }

  // Variables appearing anywhere outside item `self` (other items, head,
  // expression, or enclosing scopes).
  std::set<std::string> vars_outside(size_t self) const {
    std::set<std::string> out = externalVars;
    for (size_t i = 0; i < items.size(); ++i) {
      if (i == self) continue;
      collect_constraint_vars(items[i].c, out);
    }
    return out;
  }

  bool try_deterministic() {
    for (size_t i = 0; i < items.size(); ++i) {
      auto& item = items[i];
      if (item.consumed) continue;
      const auto& c = item.c;
      if (const auto* b = std::get_if<BoolConst>(&c->node)) {
        (void)b;
        plan.steps.push_back(StepFilter{c});
        item.consumed = true;
        return true;
      }
      if (const auto* cmp = std::get_if<Comparison>(&c->node)) {
        if (expr_ground(cmp->lhs) && expr_ground(cmp->rhs)) {
          plan.steps.push_back(StepFilter{c});
          item.consumed = true;
          return true;
        }
        continue;
      }
      if (const auto* atom = std::get_if<AtomAccess>(&c->node)) {
        bool allGround = true;
        for (const auto& e : flatten_access_args(atom->access))
          if (!expr_ground(e)) allGround = false;
        if (relVars.count(atom->access.relation) &&
            !boundRelVars.count(atom->access.relation))
          allGround = false;
        if (allGround) {
          plan.steps.push_back(StepFilter{c});
          item.consumed = true;
          return true;
        }
        continue;
      }
      if (const auto* cei = std::get_if<CeiCall>(&c->node)) {
        if (consume_cei(*cei, c, item)) return true;
        continue;
      }
      if (const auto* nr = std::get_if<NestedRule>(&c->node)) {
        if (consume_nested(*nr, c, item)) return true;
        continue;
      }
      if (const auto* neg = std::get_if<Negation>(&c->node)) {
        if (consume_negation(*neg, i, item)) return true;
        continue;
      }
    }
    return try_zero_ary_fallback();
  }

  // Needed-but-unbindable variables backed by a 0-ary relation of the same
  // name read as that relation's payload (e.g. the CSR row count `n`).
  bool try_zero_ary_fallback() {
    std::set<std::string> needed;
    for (const auto& item : items)
      if (!item.consumed) collect_constraint_vars(item.c, needed);
    std::set<std::string> headVars;
    for (const auto& e : flatten_access_args(rule.head))
      collect_expr_vars(e, headVars);
    collect_expr_vars(rule.expr, headVars);
    needed.insert(headVars.begin(), headVars.end());
    auto bindable = bindable_vars();
    for (const auto& v : needed) {
      if (ground.count(v) || bindable.count(v) || relVars.count(v)) continue;
      const auto* ri = rel_info(v);
      if (!ri || ri->totalArity != 0) continue;
      Access a;
      a.relation = v;
      a.argLists.push_back({});
      StepGenEquality step;
      step.var = v;
      step.expr = make_access_expr(std::move(a));
      plan.steps.push_back(std::move(step));
      ground.insert(v);
      return true;
    }
    return false;
  }

  bool consume_cei(const CeiCall& cei, const ConstraintPtr& c, Item& item) {
    if (!is_cei_name(cei.name)) {
      errs.push_back(err_at(diag::UnknownCei,
                            "unknown constraint extension " + cei.name,
                            ruleName, c->line, c->col));
      item.consumed = true;
      return true;
    }
    if (cei.name == "type" || cei.name == "deg") {
      item.consumed = true;  // typing/hints only; no runtime step
      return true;
    }
    if (cei.name == "fdep" || cei.name == "pkey" || cei.name == "unique") {
      errs.push_back(err_at(
          diag::BadCeiUse,
          cei.name + "(...) is a declaration, not a rule constraint", ruleName,
          c->line, c->col));
      item.consumed = true;
      return true;
    }
    if (cei.name == "order") {
      // Head-layout directive: order(v...) over a prefix of the head keys.
      std::vector<std::string> vars;
      bool ok = !cei.argLists.empty();
      if (ok)
        for (const auto& e : cei.argLists[0]) {
          std::string vn;
          if (is_bare_var(e, &vn))
            vars.push_back(vn);
          else
            ok = false;
        }
      auto headArgs = flatten_access_args(rule.head);
      if (ok) {
        if (vars.size() > headArgs.size()) ok = false;
        for (size_t i = 0; ok && i < vars.size(); ++i) {
          std::string hv;
          if (!is_bare_var(headArgs[i], &hv) || hv != vars[i]) ok = false;
        }
      }
      if (!ok) {
        errs.push_back(err_at(diag::BadCeiUse,
                              "order(...) in a rule takes a prefix of the "
                              "head's key variables",
                              ruleName, c->line, c->col));
      } else {
        plan.headOrdered = true;
        plan.headOrderVars = vars;
      }
      item.consumed = true;
      return true;
    }
    // card
    if (cei.argLists.size() != 1 || cei.argLists[0].empty()) {
      errs.push_back(err_at(diag::BadCeiUse, "malformed card(...)", ruleName,
                            c->line, c->col));
      item.consumed = true;
      return true;
    }
    auto relName = relation_name_arg(cei.argLists[0][0]);
    if (!relName) {
      errs.push_back(err_at(diag::BadCeiUse,
                            "card(...) needs a relation first", ruleName,
                            c->line, c->col));
      item.consumed = true;
      return true;
    }
    std::vector<ExprPtr> args(cei.argLists[0].begin() + 1,
                              cei.argLists[0].end());
    if (*relName == rule.head.relation) {
      // Shape/cap directive for the head being derived.
      plan.headCardArgs = args;
      item.consumed = true;
      return true;
    }
    if (relVars.count(*relName) && !boundRelVars.count(*relName))
      return false;  // wait for the nested bind
    // Ground arguments (and wildcards) are checks; unbound dimension
    // variables are bound from the stored shape. Both are deterministic.
    bool ready = true;
    for (const auto& e : args) {
      std::string vn;
      const auto* v = as_variable(e);
      if (v && is_wildcard(v->name)) continue;
      if (is_bare_var(e, &vn) && !ground.count(vn)) continue;  // will bind
      if (!expr_ground(e)) ready = false;
    }
    if (!ready) return false;
    StepCardBind step;
    step.relation = *relName;
    step.relationIsVar = relVars.count(*relName) > 0;
    step.args = args;
    for (const auto& e : args) {
      std::string vn;
      if (is_bare_var(e, &vn)) ground.insert(vn);
    }
    plan.steps.push_back(std::move(step));
    item.consumed = true;
    return true;
  }

  bool consume_nested(const NestedRule& nr, const ConstraintPtr& c,
                      Item& item) {
    // Shape: (Rv := X(e...)) — head is a bare relation variable, body a
    // single full or prefix access, no expression, define action.
    const Rule* r = nr.rule.get();
    bool shapeOk = r && r->action == Action::Define && !r->expr &&
                   r->head.argLists.empty();
    const AtomAccess* atom = nullptr;
    if (shapeOk && r->constraint)
      atom = std::get_if<AtomAccess>(&r->constraint->node);
    if (!shapeOk || !atom) {
      errs.push_back(err_at(diag::BadNestedRule,
                            "nested rules must have the lookup shape "
                            "(Rv := X(e...))",
                            ruleName, c->line, c->col));
      item.consumed = true;
      return true;
    }
    const std::string& rv = r->head.relation;
    auto keys = flatten_access_args(atom->access);
    const auto* ri = rel_info(atom->access.relation);
    bool targetIsVar = relVars.count(atom->access.relation) > 0;
    if (ri && ri->totalArity >= 0 &&
        static_cast<int>(keys.size()) >= ri->totalArity && !targetIsVar) {
      errs.push_back(err_at(diag::BadNestedRule,
                            "nested rule binds a payload, not a "
                            "sub-relation: " +
                                atom->access.relation,
                            ruleName, c->line, c->col));
      item.consumed = true;
      return true;
    }
    if (targetIsVar && !boundRelVars.count(atom->access.relation))
      return false;
    for (const auto& k : keys)
      if (!expr_ground(k)) return false;
    StepNestedBind step;
    step.relVar = rv;
    step.relation = atom->access.relation;
    step.relationIsVar = targetIsVar;
    step.keys = keys;
    plan.steps.push_back(std::move(step));
    boundRelVars.insert(rv);
    item.consumed = true;
    return true;
  }

  bool consume_negation(const Negation& neg, size_t idx, Item& item) {
    std::set<std::string> inner;
    collect_constraint_vars(neg.inner, inner);
    auto outside = vars_outside(idx);
    std::set<std::string> shared;
    for (const auto& v : inner)
      if (outside.count(v)) shared.insert(v);
    for (const auto& v : shared)
      if (!ground.count(v)) return false;  // wait until ground
    // Inner-only variables are existentially quantified inside.
    Planner sub(env, ruleIdx, rule);
    sub.externalVars = {};  // inner-only vars may bind freely
    sub.ground = ground;
    sub.relVars = relVars;
    sub.boundRelVars = boundRelVars;
    sub.ruleName = ruleName;
    auto res = sub.plan_conjuncts(flatten_conjunction(neg.inner));
    if (!res) {
      for (auto& d : sub.errs) {
        if (d.code == diag::Ungroundable) d.code = diag::UnsafeNegation;
        errs.push_back(d);
      }
      item.consumed = true;
      return true;
    }
    StepNegation step;
    step.inner = std::make_shared<const BindingPlan>(std::move(sub.plan));
    plan.steps.push_back(std::move(step));
    item.consumed = true;
    return true;
  }

  // Plan every branch of a disjunction from the current bindings; visible
  // variables are those bound by all branches.
  bool consume_disjunction(const ConstraintPtr& c, size_t idx, Item& item) {
    auto branches = flatten_disjunction(c);
    auto outside = vars_outside(idx);
    StepDisjunct step;
    std::set<std::string> visible;
    bool first = true;
    for (const auto& br : branches) {
      Planner sub(env, ruleIdx, rule);
      sub.externalVars = outside;
      sub.ground = ground;
      sub.relVars = relVars;
      sub.boundRelVars = boundRelVars;
      sub.ruleName = ruleName;
      if (!sub.plan_conjuncts(flatten_conjunction(br))) return false;
      std::set<std::string> bound;
      for (const auto& v : sub.ground)
        if (!ground.count(v) && !is_wildcard(v)) bound.insert(v);
      if (first) {
        visible = bound;
        first = false;
      } else {
        std::set<std::string> keep;
        for (const auto& v : visible)
          if (bound.count(v)) keep.insert(v);
        visible = keep;
      }
      step.branches.push_back(
          std::make_shared<const BindingPlan>(std::move(sub.plan)));
    }
    step.visible.assign(visible.begin(), visible.end());
    for (const auto& v : visible) ground.insert(v);
    plan.steps.push_back(std::move(step));
    item.consumed = true;
    return true;
  }

  // Two-sided integer range generator for some variable, if available.
  bool try_range() {
    struct Half {
      size_t itemIdx;
      ExprPtr bound;
      bool strict;
    };
    std::map<std::string, std::vector<Half>> lowers, uppers;
    std::vector<std::string> orderSeen;
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].consumed) continue;
      const auto* cmp = std::get_if<Comparison>(&items[i].c->node);
      if (!cmp || cmp->op == CompareOp::Eq || cmp->op == CompareOp::Ne)
        continue;
      auto note = [&](const ExprPtr& varSide, const ExprPtr& boundSide,
                      bool isLower, bool strict) {
        std::string v;
        if (!is_bare_var(varSide, &v) || ground.count(v)) return;
        std::set<std::string> bv;
        collect_expr_vars(boundSide, bv);
        if (bv.count(v)) return;
        auto& m = isLower ? lowers : uppers;
        m[v].push_back({i, boundSide, strict});
        if (std::find(orderSeen.begin(), orderSeen.end(), v) ==
            orderSeen.end())
          orderSeen.push_back(v);
      };
      switch (cmp->op) {
        case CompareOp::Lt:  // l < v  |  v < u
          note(cmp->rhs, cmp->lhs, true, true);
          note(cmp->lhs, cmp->rhs, false, true);
          break;
        case CompareOp::Le:
          note(cmp->rhs, cmp->lhs, true, false);
          note(cmp->lhs, cmp->rhs, false, false);
          break;
        case CompareOp::Gt:  // v > l  |  u > v
          note(cmp->lhs, cmp->rhs, true, true);
          note(cmp->rhs, cmp->lhs, false, true);
          break;
        case CompareOp::Ge:
          note(cmp->lhs, cmp->rhs, true, false);
          note(cmp->rhs, cmp->lhs, false, false);
          break;
        default: break;
      }
    }
    for (const auto& v : orderSeen) {
      auto lo = lowers.find(v);
      auto hi = uppers.find(v);
      if (lo == lowers.end() || hi == uppers.end()) continue;
      const Half* loH = nullptr;
      const Half* hiH = nullptr;
      for (const auto& h : lo->second)
        if (expr_ground(h.bound)) {
          loH = &h;
          break;
        }
      for (const auto& h : hi->second)
        if (expr_ground(h.bound)) {
          hiH = &h;
          break;
        }
      if (!loH || !hiH) continue;
      // Integer ranges only; reject known-non-integer variables.
      auto vt = env.varTypes.size() > static_cast<size_t>(ruleIdx)
                    ? env.varTypes[ruleIdx]
                    : std::map<std::string, ScalarType>{};
      auto it = vt.find(v);
      if (it != vt.end() && it->second != ScalarType::Int &&
          it->second != ScalarType::Float)
        continue;
      StepGenRange step;
      step.var = v;
      step.lo = loH->bound;
      step.loStrict = loH->strict;
      step.hi = hiH->bound;
      step.hiStrict = hiH->strict;
      items[loH->itemIdx].consumed = true;
      items[hiH->itemIdx].consumed = true;
      plan.steps.push_back(std::move(step));
      ground.insert(v);
      return true;
    }
    return false;
  }

  // Atom-access scan candidates (class: relation accesses).
  bool try_atom_scan() {
    std::int64_t bestCost = std::numeric_limits<std::int64_t>::max();
    size_t best = items.size();
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].consumed) continue;
      const auto* atom = std::get_if<AtomAccess>(&items[i].c->node);
      if (!atom) continue;
      if (relVars.count(atom->access.relation) &&
          !boundRelVars.count(atom->access.relation))
        continue;
      std::vector<AccessSlot> slots;
      std::set<std::string> newly;
      if (!build_slots(atom->access, slots, newly)) continue;
      bool binds = false;
      for (const auto& s : slots)
        if (s.mode == AccessSlot::Mode::Bind) binds = true;
      if (!binds) continue;  // fully ground: deterministic phase handles it
      auto cost = rel_cost(atom->access.relation);
      if (best == items.size() || cost < bestCost) {
        bestCost = cost;
        best = i;
      }
    }
    if (best == items.size()) return false;
    const auto* atom = std::get_if<AtomAccess>(&items[best].c->node);
    emit_access_generator(atom->access, nullptr, /*isAtom=*/true);
    items[best].consumed = true;
    return true;
  }

  bool try_disjunctions() {
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].consumed) continue;
      if (!std::holds_alternative<Disjunction>(items[i].c->node)) continue;
      if (consume_disjunction(items[i].c, i, items[i])) return true;
    }
    return false;
  }

  // Equality class: `v = ground expr` bindings and payload-access scans.
  bool try_equalities() {
    // Deterministic `v = ground` first, in textual order.
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].consumed) continue;
      const auto* cmp = std::get_if<Comparison>(&items[i].c->node);
      if (!cmp) continue;
      std::string var;
      ExprPtr expr;
      if (equality_bind(*cmp, var, expr)) {
        StepGenEquality step;
        step.var = var;
        step.expr = expr;
        plan.steps.push_back(std::move(step));
        ground.insert(var);
        items[i].consumed = true;
        return true;
      }
    }
    // Then payload-binding scans, in textual order. Unlike atom scans,
    // this choice is SEMANTIC, not a cost decision: relations elide zero
    // payloads, so `v = R(k)` with k unbound enumerates only the stored
    // nonzeros of R, while the same equality with k already bound reads
    // absent keys as zero. Whichever equality generates a variable first
    // therefore decides which relation's sparsity pattern drives the loop
    // (e.g. `z = W(i)(j) * x` then `0 = B(i) - b`: W must generate i/j and
    // B must be probed, even when B currently stores fewer entries). The
    // first access in source order that can generate owns the variables.
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].consumed) continue;
      const auto* cmp = std::get_if<Comparison>(&items[i].c->node);
      if (!cmp) continue;
      auto scan = access_scan(*cmp);
      if (!scan) continue;
      if (relVars.count(scan->relation) &&
          !boundRelVars.count(scan->relation))
        continue;
      std::vector<AccessSlot> slots;
      std::set<std::string> newly;
      if (!build_slots(*scan->access, slots, newly)) continue;
      // The non-access side must be a bindable variable or ground.
      std::string vn;
      bool otherBindable =
          is_bare_var(scan->other, &vn) && !ground.count(vn);
      if (!otherBindable && !expr_ground(scan->other)) continue;
      emit_access_generator(*scan->access, scan->other, /*isAtom=*/false);
      items[i].consumed = true;
      return true;
    }
    return false;
  }

  void diagnose_stuck() {
    // Prefer the unsafe-negation story when a negation is blocked.
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].consumed) continue;
      const auto* neg = std::get_if<Negation>(&items[i].c->node);
      if (!neg) continue;
      std::set<std::string> inner;
      collect_constraint_vars(neg->inner, inner);
      auto outside = vars_outside(i);
      for (const auto& v : inner)
        if (outside.count(v) && !ground.count(v)) {
          errs.push_back(err_at(
              diag::UnsafeNegation,
              "negation over unground variable " + v, ruleName,
              items[i].c->line, items[i].c->col));
          return;
        }
    }
    for (const auto& item : items) {
      if (item.consumed) continue;
      std::set<std::string> vs;
      collect_constraint_vars(item.c, vs);
      for (const auto& v : vs)
        if (!ground.count(v) && !relVars.count(v)) {
          errs.push_back(err_at(diag::Ungroundable,
                                "variable " + v + " cannot be grounded",
                                ruleName, item.c->line, item.c->col));
          return;
        }
      errs.push_back(err_at(diag::Ungroundable,
                            "constraint cannot be scheduled: " + print(item.c),
                            ruleName, item.c->line, item.c->col));
      return;
    }
  }

  bool all_consumed() const {
    for (const auto& item : items)
      if (!item.consumed) return false;
    return true;
  }

  bool plan_conjuncts(std::vector<ConstraintPtr> conjuncts) {
    for (auto& c : conjuncts) items.push_back({std::move(c), false});
    while (!all_consumed()) {
      if (try_deterministic()) continue;
      if (try_atom_scan()) continue;
      if (try_range()) continue;
      if (try_disjunctions()) continue;
      if (try_equalities()) continue;
      diagnose_stuck();
      return false;
    }
    return errs.empty();
  }

  Result<BindingPlan> run() {
    if (!plan_conjuncts(flatten_conjunction(rule.constraint))) return errs;
    // Everything the head and expression read must now be ground.
    std::set<std::string> consumed;
    for (const auto& e : flatten_access_args(rule.head))
      collect_expr_vars(e, consumed);
    collect_expr_vars(rule.expr, consumed);
    for (const auto& v : consumed) {
      if (ground.count(v)) continue;
      if (relVars.count(v)) {
        errs.push_back(err_at(diag::KindError,
                              "relation variable " + v +
                                  " used as a scalar in the head",
                              ruleName, rule.line, rule.col));
        continue;
      }
      errs.push_back(err_at(diag::Ungroundable,
                            "variable " + v + " cannot be grounded", ruleName,
                            rule.line, rule.col));
    }
    if (!errs.empty()) return errs;
    return std::move(plan);
  }
};

}  // namespace

Result<BindingPlan> plan_bindings(const Rule& rule, const TypeEnv& env,
                                  int ruleIndex) {
  auto des = desugar(rule);
  if (!des.ok()) return des.errors();
  Planner p(env, ruleIndex, des.value());
  // Head and expression variables count as external consumers.
  for (const auto& e : flatten_access_args(des.value().head))
    collect_expr_vars(e, p.externalVars);
  collect_expr_vars(des.value().expr, p.externalVars);
  return p.run();
}

// ------------------------------------------------------------ plan print

namespace {

void print_plan_into(const BindingPlan& plan, std::ostream& os,
                     const char* sep);

std::string access_text(const std::string& rel,
                        const std::vector<AccessSlot>& slots) {
  std::ostringstream os;
  os << rel << "(";
  for (size_t i = 0; i < slots.size(); ++i) {
    if (i) os << ", ";
    if (slots[i].mode == AccessSlot::Mode::Bind)
      os << (is_wildcard(slots[i].var) ? "_" : slots[i].var.c_str());
    else
      os << print(slots[i].expr);
  }
  os << ")";
  return os.str();
}

struct StepPrinter {
  std::ostream& os;
  void operator()(const StepGenAccess& s) {
    os << "gen ";
    if (!s.payloadVar.empty()) os << s.payloadVar << " = ";
    os << access_text(s.relation, s.slots);
    if (s.payloadEq) os << " == " << print(s.payloadEq);
    if (s.prefixOnly) os << " prefix";
  }
  void operator()(const StepGenRange& s) {
    os << "gen " << s.var << " in " << (s.loStrict ? "(" : "[")
       << print(s.lo) << ", " << print(s.hi) << (s.hiStrict ? ")" : "]");
  }
  void operator()(const StepGenEquality& s) {
    os << "let " << s.var << " = " << print(s.expr);
  }
  void operator()(const StepCardBind& s) {
    os << "shape card(" << s.relation;
    for (const auto& a : s.args) os << ", " << print(a);
    os << ")";
  }
  void operator()(const StepFilter& s) { os << "filter " << print(s.constraint); }
  void operator()(const StepNegation& s) {
    os << "not { ";
    print_plan_into(*s.inner, os, "; ");
    os << " }";
  }
  void operator()(const StepNestedBind& s) {
    os << "bind " << s.relVar << " := " << s.relation << "(";
    for (size_t i = 0; i < s.keys.size(); ++i) {
      if (i) os << ", ";
      os << print(s.keys[i]);
    }
    os << ")";
  }
  void operator()(const StepDisjunct& s) {
    os << "or { ";
    for (size_t i = 0; i < s.branches.size(); ++i) {
      if (i) os << " | ";
      print_plan_into(*s.branches[i], os, "; ");
    }
    os << " } -> [";
    for (size_t i = 0; i < s.visible.size(); ++i) {
      if (i) os << ", ";
      os << s.visible[i];
    }
    os << "]";
  }
};

void print_plan_into(const BindingPlan& plan, std::ostream& os,
                     const char* sep) {
  for (size_t i = 0; i < plan.steps.size(); ++i) {
    if (i) os << sep;
    std::visit(StepPrinter{os}, plan.steps[i]);
  }
}

}  // namespace

std::string print_plan(const BindingPlan& plan) {
  std::ostringstream os;
  print_plan_into(plan, os, "\n");
  return os.str();
}

// --------------------------------------------------------- stratification

namespace {

// Relations a rule reads, split by polarity. Negative = under negation, or
// (whole rule) aggregate head / imperative action.
void rule_dependencies(const Rule& r, std::set<std::string>& pos,
                       std::set<std::string>& neg) {
  std::set<std::string> relVars = relation_variables(r);
  bool wholeRuleNegative = r.action != Action::Define;
  if (r.expr) {
    const auto* eei = std::get_if<EeiCall>(&r.expr->node);
    if (eei && is_aggregate_eei(eei->name)) wholeRuleNegative = true;
  }
  std::function<void(const ExprPtr&, bool)> walkExpr;
  std::function<void(const ConstraintPtr&, bool)> walkCon;
  auto addAccess = [&](const Access& a, bool negative) {
    if (!relVars.count(a.relation)) {
      (negative ? neg : pos).insert(a.relation);
    }
    for (const auto& list : a.argLists)
      for (const auto& e : list) walkExpr(e, negative);
  };
  walkExpr = [&](const ExprPtr& e, bool negative) {
    if (!e) return;
    if (const auto* a = std::get_if<Access>(&e->node)) {
      addAccess(*a, negative);
    } else if (const auto* b = std::get_if<BinaryExpr>(&e->node)) {
      walkExpr(b->lhs, negative);
      walkExpr(b->rhs, negative);
    } else if (const auto* g = std::get_if<NegateExpr>(&e->node)) {
      walkExpr(g->operand, negative);
    } else if (const auto* f = std::get_if<EeiCall>(&e->node)) {
      for (const auto& q : f->args) walkExpr(q, negative);
    }
  };
  walkCon = [&](const ConstraintPtr& c, bool negative) {
    if (!c) return;
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Conjunction> ||
                        std::is_same_v<T, Disjunction>) {
            walkCon(n.lhs, negative);
            walkCon(n.rhs, negative);
          } else if constexpr (std::is_same_v<T, Negation>) {
            walkCon(n.inner, true);
          } else if constexpr (std::is_same_v<T, AtomAccess>) {
            addAccess(n.access, negative);
          } else if constexpr (std::is_same_v<T, Comparison>) {
            walkExpr(n.lhs, negative);
            walkExpr(n.rhs, negative);
          } else if constexpr (std::is_same_v<T, CeiCall>) {
            if (!n.argLists.empty() && !n.argLists[0].empty() &&
                (n.name == "card" || n.name == "deg")) {
              // A CEI naming the rule's own head is a head directive
              // (shape/cap/layout), not a read of the relation's contents,
              // so it must not create a dependency edge (which would make
              // every shaped rule self-recursive).
              if (auto rn = relation_name_arg(n.argLists[0][0]))
                if (!relVars.count(*rn) && *rn != r.head.relation)
                  (negative ? neg : pos).insert(*rn);
            }
            bool first = true;
            for (const auto& list : n.argLists)
              for (const auto& e : list) {
                if (!first) walkExpr(e, negative);
                first = false;
              }
          } else if constexpr (std::is_same_v<T, NestedRule>) {
            if (n.rule) walkCon(n.rule->constraint, negative);
          }
        },
        c->node);
  };
  walkCon(r.constraint, wholeRuleNegative);
  walkExpr(r.expr, wholeRuleNegative);
}

}  // namespace

Result<Stratification> stratify(const Program& p) {
  auto des0 = desugar(p);
  if (!des0.ok()) return des0.errors();
  const Program& prog = des0.value();

  // Dependency graph over relation names.
  std::set<std::string> nodes;
  // edge (from, to, negative): rules for `to` read `from`.
  std::set<std::tuple<std::string, std::string, bool>> edgeSet;
  std::map<std::string, std::vector<int>> rulesFor;
  for (size_t i = 0; i < prog.rules.size(); ++i) {
    const Rule& r = prog.rules[i];
    nodes.insert(r.head.relation);
    rulesFor[r.head.relation].push_back(static_cast<int>(i));
    std::set<std::string> pos, neg;
    rule_dependencies(r, pos, neg);
    for (const auto& d : pos) {
      nodes.insert(d);
      edgeSet.insert({d, r.head.relation, false});
    }
    for (const auto& d : neg) {
      nodes.insert(d);
      edgeSet.insert({d, r.head.relation, true});
    }
  }

  std::vector<std::string> nodeList(nodes.begin(), nodes.end());
  std::map<std::string, int> id;
  for (size_t i = 0; i < nodeList.size(); ++i) id[nodeList[i]] = (int)i;
  int n = static_cast<int>(nodeList.size());
  std::vector<std::vector<std::pair<int, bool>>> out(n);  // id -> (dep id?, )
  for (const auto& [from, to, negFlag] : edgeSet)
    out[id[from]].push_back({id[to], negFlag});

  // Tarjan SCC (iterative).
  std::vector<int> index(n, -1), low(n, 0), comp(n, -1);
  std::vector<bool> onStack(n, false);
  std::vector<int> stack;
  int counter = 0, ncomp = 0;
  std::vector<std::vector<int>> compMembers;
  struct Frame {
    int v;
    size_t ei;
  };
  for (int start = 0; start < n; ++start) {
    if (index[start] != -1) continue;
    std::vector<Frame> frames{{start, 0}};
    index[start] = low[start] = counter++;
    stack.push_back(start);
    onStack[start] = true;
    while (!frames.empty()) {
      auto& f = frames.back();
      if (f.ei < out[f.v].size()) {
        int w = out[f.v][f.ei++].first;
        if (index[w] == -1) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          onStack[w] = true;
          frames.push_back({w, 0});
        } else if (onStack[w]) {
          low[f.v] = std::min(low[f.v], index[w]);
        }
      } else {
        if (low[f.v] == index[f.v]) {
          compMembers.emplace_back();
          while (true) {
            int w = stack.back();
            stack.pop_back();
            onStack[w] = false;
            comp[w] = ncomp;
            compMembers.back().push_back(w);
            if (w == f.v) break;
          }
          ++ncomp;
        }
        int v = f.v;
        frames.pop_back();
        if (!frames.empty())
          low[frames.back().v] = std::min(low[frames.back().v], low[v]);
      }
    }
  }

  // Cycle detection: negative edge inside one SCC, and self/multi cycles.
  std::vector<bool> compCyclic(ncomp, false);
  for (int c = 0; c < ncomp; ++c)
    if (compMembers[c].size() > 1) compCyclic[c] = true;
  std::vector<Diagnostic> errs;
  for (const auto& [from, to, negFlag] : edgeSet) {
    if (comp[id.at(from)] != comp[id.at(to)]) continue;
    if (from == to) compCyclic[comp[id.at(from)]] = true;
    if (negFlag) {
      std::vector<std::string> cycle;
      for (int m : compMembers[comp[id.at(from)]]) cycle.push_back(nodeList[m]);
      std::sort(cycle.begin(), cycle.end());
      std::string names;
      for (const auto& s : cycle) names += (names.empty() ? "" : ", ") + s;
      int line = 0, col = 0;
      std::string ruleName = to;
      for (const auto& r : prog.rules)
        if (r.head.relation == to) {
          line = r.line;
          col = r.col;
          break;
        }
      errs.push_back(err_at(
          diag::Unstratifiable,
          "negation or aggregation inside recursive cycle {" + names + "}",
          ruleName, line, col));
    }
  }
  if (!errs.empty()) return errs;

  // Longest-path level per SCC (every cross-SCC edge adds one level).
  std::vector<std::vector<int>> compOut(ncomp);
  std::vector<int> indeg(ncomp, 0);
  std::set<std::pair<int, int>> seenCompEdge;
  for (const auto& [from, to, negFlag] : edgeSet) {
    (void)negFlag;
    int a = comp[id.at(from)], b = comp[id.at(to)];
    if (a == b) continue;
    if (seenCompEdge.insert({a, b}).second) {
      compOut[a].push_back(b);
      indeg[b]++;
    }
  }
  std::vector<int> level(ncomp, 0), order;
  {
    std::vector<int> q;
    for (int c2 = 0; c2 < ncomp; ++c2)
      if (indeg[c2] == 0) q.push_back(c2);
    while (!q.empty()) {
      std::sort(q.begin(), q.end());
      int c2 = q.front();
      q.erase(q.begin());
      order.push_back(c2);
      for (int d : compOut[c2]) {
        level[d] = std::max(level[d], level[c2] + 1);
        if (--indeg[d] == 0) q.push_back(d);
      }
    }
  }

  Stratification st;
  for (int i2 = 0; i2 < n; ++i2)
    st.relationLevel[nodeList[i2]] = level[comp[i2]];
  for (const auto& [from, to, negFlag] : edgeSet)
    st.edges.push_back({from, to, negFlag});

  // Strata: SCCs that define rules, ordered by (level, first rule index).
  struct StratumSeed {
    int lvl;
    int firstRule;
    std::vector<int> rules;
    bool cyclic;
  };
  std::map<int, StratumSeed> byComp;
  for (size_t i2 = 0; i2 < prog.rules.size(); ++i2) {
    int c2 = comp[id.at(prog.rules[i2].head.relation)];
    auto& seed = byComp[c2];
    if (seed.rules.empty()) {
      seed.lvl = level[c2];
      seed.firstRule = static_cast<int>(i2);
      seed.cyclic = compCyclic[c2];
    }
    seed.rules.push_back(static_cast<int>(i2));
  }
  std::vector<StratumSeed> seeds;
  for (auto& [c2, seed] : byComp) seeds.push_back(std::move(seed));
  std::sort(seeds.begin(), seeds.end(), [](const auto& a, const auto& b) {
    return std::tie(a.lvl, a.firstRule) < std::tie(b.lvl, b.firstRule);
  });
  st.ruleStratum.assign(prog.rules.size(), -1);
  for (size_t s = 0; s < seeds.size(); ++s) {
    st.strata.push_back(seeds[s].rules);
    for (int ri : seeds[s].rules) st.ruleStratum[ri] = static_cast<int>(s);
    if (seeds[s].cyclic) st.recursiveStrata.insert(static_cast<int>(s));
  }
  return st;
}

// ------------------------------------------------------------- integrity

namespace {

std::string tuple_text(const Key& k) { return "(" + print_key(k) + ")"; }

// Resolve declared column names to flattened key indexes using schema
// attributes (k0, k1, ... accepted as positional fallbacks).
std::optional<std::vector<int>> resolve_cols(
    const std::vector<std::string>& attrs, int arity,
    const std::vector<ExprPtr>& nameExprs, std::string& badName) {
  std::vector<int> out;
  for (const auto& e : nameExprs) {
    auto name = relation_name_arg(e);
    if (!name) {
      badName = print(e);
      return std::nullopt;
    }
    int idx = -1;
    for (size_t i = 0; i < attrs.size(); ++i)
      if (attrs[i] == *name) idx = static_cast<int>(i);
    if (idx < 0 && name->size() > 1 && name->size() <= 7 && (*name)[0] == 'k') {
      bool digits = true;
      for (size_t i = 1; i < name->size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>((*name)[i])))
          digits = false;
      if (digits) idx = std::stoi(name->substr(1));
    }
    if (idx < 0 || idx >= arity) {
      badName = *name;
      return std::nullopt;
    }
    out.push_back(idx);
  }
  return out;
}

Key project(const Key& k, const std::vector<int>& cols) {
  Key out;
  for (int c : cols) out.push_back(k[static_cast<size_t>(c)]);
  return out;
}

}  // namespace

std::vector<IntegrityViolation> check_integrity(
    const Database& db, const std::vector<ConstraintPtr>& decls) {
  std::vector<IntegrityViolation> out;
  for (const auto& d : decls) {
    const auto* cei = d ? std::get_if<CeiCall>(&d->node) : nullptr;
    if (!cei || cei->argLists.empty() || cei->argLists[0].empty()) continue;
    auto relName = relation_name_arg(cei->argLists[0][0]);
    if (!relName) continue;
    auto rel = db.relation(*relName);
    if (!rel) continue;  // not loaded; rules may define it later
    const auto* sch = db.schema(*relName);
    std::vector<std::string> attrs = sch ? sch->attrs : std::vector<std::string>{};
    int arity = rel->total_arity();
    auto entries = rel->entries_flat();

    const char* declCode = cei->name == "fdep"     ? diag::IntegrityFdep
                           : cei->name == "pkey"   ? diag::IntegrityPkey
                           : cei->name == "unique" ? diag::IntegrityUnique
                           : cei->name == "card"   ? diag::IntegrityCard
                                                   : diag::IntegrityOrder;
    auto columns = [&](const std::vector<ExprPtr>& names,
                       std::vector<int>& cols) -> bool {
      std::string bad;
      auto r = resolve_cols(attrs, arity, names, bad);
      if (!r) {
        out.push_back({declCode, *relName,
                       "column " + bad + " not found in " + *relName});
        return false;
      }
      cols = *r;
      return true;
    };

    if (cei->name == "fdep") {
      if (cei->argLists.size() != 2) continue;  // C012 elsewhere
      std::vector<ExprPtr> lhsNames(cei->argLists[0].begin() + 1,
                                    cei->argLists[0].end());
      std::vector<int> lhs, rhs;
      if (!columns(lhsNames, lhs) || !columns(cei->argLists[1], rhs)) continue;
      std::map<Key, std::pair<Key, Key>, KeyLess> seen;  // lhs -> (rhs, whole)
      for (const auto& [k, v] : entries) {
        (void)v;
        Key l = project(k, lhs), r = project(k, rhs);
        auto it = seen.find(l);
        if (it == seen.end()) {
          seen.emplace(l, std::make_pair(r, k));
        } else if (!(it->second.first == r)) {
          out.push_back({diag::IntegrityFdep, *relName,
                         "fdep violated: " + tuple_text(it->second.second) +
                             " and " + tuple_text(k) + " agree on the "
                             "determinant but differ on the dependent"});
        }
      }
    } else if (cei->name == "pkey" || cei->name == "unique") {
      std::vector<ExprPtr> names(cei->argLists[0].begin() + 1,
                                 cei->argLists[0].end());
      std::vector<int> cols;
      if (!columns(names, cols)) continue;
      const char* code =
          cei->name == "pkey" ? diag::IntegrityPkey : diag::IntegrityUnique;
      std::map<Key, Key, KeyLess> seen;
      for (const auto& [k, v] : entries) {
        (void)v;
        Key proj = project(k, cols);
        auto it = seen.find(proj);
        if (it == seen.end()) {
          seen.emplace(proj, k);
        } else {
          out.push_back({code, *relName,
                         std::string(cei->name) + " violated: " +
                             tuple_text(it->second) + " and " + tuple_text(k) +
                             " agree on " + tuple_text(proj)});
        }
      }
    } else if (cei->name == "card") {
      std::vector<std::int64_t> dims;
      bool literal = true;
      for (size_t i = 1; i < cei->argLists[0].size(); ++i) {
        const auto* lit = as_literal(cei->argLists[0][i]);
        const auto* v = as_variable(cei->argLists[0][i]);
        if (lit && std::holds_alternative<std::int64_t>(lit->value))
          dims.push_back(std::get<std::int64_t>(lit->value));
        else if (v && is_wildcard(v->name))
          dims.push_back(-1);
        else
          literal = false;
      }
      if (!literal || dims.empty()) continue;
      if (dims.size() == 1) {
        auto count = static_cast<std::int64_t>(entries.size());
        if (dims[0] >= 0 && count > dims[0])
          out.push_back({diag::IntegrityCard, *relName,
                         "cardinality " + std::to_string(count) +
                             " exceeds declared " + std::to_string(dims[0]) +
                             " (" + std::to_string(count) +
                             "≠" + std::to_string(dims[0]) + ")"});
      } else {
        if (static_cast<int>(dims.size()) != arity) {
          out.push_back({diag::IntegrityCard, *relName,
                         "card declares " + std::to_string(dims.size()) +
                             " dimensions but " + *relName + " has arity " +
                             std::to_string(arity)});
          continue;
        }
        if (rel->is_dense()) {
          const auto& shape = rel->shape();
          for (size_t i = 0; i < dims.size(); ++i)
            if (dims[i] >= 0 && static_cast<std::int64_t>(shape[i]) != dims[i])
              out.push_back({diag::IntegrityCard, *relName,
                             "dimension " + std::to_string(i) + " is " +
                                 std::to_string(shape[i]) + ", declared " +
                                 std::to_string(dims[i])});
        } else {
          for (const auto& [k, v] : entries) {
            (void)v;
            for (size_t i = 0; i < dims.size(); ++i) {
              if (dims[i] < 0) continue;
              const auto* ik = std::get_if<std::int64_t>(&k[i]);
              if (!ik || *ik >= dims[i] || *ik < 0) {
                out.push_back({diag::IntegrityCard, *relName,
                               "key " + tuple_text(k) +
                                   " outside declared shape at dimension " +
                                   std::to_string(i)});
                break;
              }
            }
          }
        }
      }
    } else if (cei->name == "order") {
      std::vector<ExprPtr> names(cei->argLists[0].begin() + 1,
                                 cei->argLists[0].end());
      std::vector<int> cols;
      if (!columns(names, cols)) continue;
      for (size_t i = 1; i < entries.size(); ++i) {
        Key prev = project(entries[i - 1].first, cols);
        Key cur = project(entries[i].first, cols);
        if (KeyLess{}(cur, prev)) {
          out.push_back({diag::IntegrityOrder, *relName,
                         "iteration order violates order(...): " +
                             tuple_text(entries[i - 1].first) + " before " +
                             tuple_text(entries[i].first)});
          break;
        }
      }
    }
  }
  return out;
}

// ------------------------------------------------------------ check_program

namespace {

// Aggregates may appear only as the outermost node of a rule's expression.
void check_aggregate_placement(const Program& p, std::vector<Diagnostic>& errs) {
  std::function<void(const ExprPtr&, const std::string&, bool)> walkExpr =
      [&](const ExprPtr& e, const std::string& ruleName, bool allowTop) {
        if (!e) return;
        if (const auto* f = std::get_if<EeiCall>(&e->node)) {
          if (is_aggregate_eei(f->name) && !allowTop)
            errs.push_back(err_at(diag::BadAggregate,
                                  "aggregate " + f->name +
                                      " allowed only as the head "
                                      "expression's outermost call",
                                  ruleName, e->line, e->col));
          for (const auto& a : f->args) walkExpr(a, ruleName, false);
          return;
        }
        std::visit(
            [&](const auto& n) {
              using T = std::decay_t<decltype(n)>;
              if constexpr (std::is_same_v<T, BinaryExpr>) {
                walkExpr(n.lhs, ruleName, false);
                walkExpr(n.rhs, ruleName, false);
              } else if constexpr (std::is_same_v<T, NegateExpr>) {
                walkExpr(n.operand, ruleName, false);
              } else if constexpr (std::is_same_v<T, Access>) {
                for (const auto& list : n.argLists)
                  for (const auto& a : list) walkExpr(a, ruleName, false);
              }
            },
            e->node);
      };
  std::function<void(const ConstraintPtr&, const std::string&)> walkCon =
      [&](const ConstraintPtr& c, const std::string& ruleName) {
        if (!c) return;
        std::visit(
            [&](const auto& n) {
              using T = std::decay_t<decltype(n)>;
              if constexpr (std::is_same_v<T, Conjunction> ||
                            std::is_same_v<T, Disjunction>) {
                walkCon(n.lhs, ruleName);
                walkCon(n.rhs, ruleName);
              } else if constexpr (std::is_same_v<T, Negation>) {
                walkCon(n.inner, ruleName);
              } else if constexpr (std::is_same_v<T, AtomAccess>) {
                for (const auto& list : n.access.argLists)
                  for (const auto& a : list) walkExpr(a, ruleName, false);
              } else if constexpr (std::is_same_v<T, Comparison>) {
                walkExpr(n.lhs, ruleName, false);
                walkExpr(n.rhs, ruleName, false);
              } else if constexpr (std::is_same_v<T, CeiCall>) {
                for (const auto& list : n.argLists)
                  for (const auto& a : list) walkExpr(a, ruleName, false);
              } else if constexpr (std::is_same_v<T, NestedRule>) {
                if (n.rule) walkCon(n.rule->constraint, ruleName);
              }
            },
            c->node);
      };
  for (const auto& r : p.rules) {
    if (r.expr) {
      const auto* f = std::get_if<EeiCall>(&r.expr->node);
      bool topAggregate = f && is_aggregate_eei(f->name);
      walkExpr(r.expr, r.head.relation, topAggregate);
    }
    walkCon(r.constraint, r.head.relation);
  }
}

void validate_declarations(const Program& p, std::vector<Diagnostic>& errs) {
  for (const auto& d : p.declarations) {
    const auto* cei = d ? std::get_if<CeiCall>(&d->node) : nullptr;
    if (!cei) {
      errs.push_back(err_at(diag::BadDeclaration,
                            "declarations must be constraint-extension calls",
                            "", d ? d->line : 0, d ? d->col : 0));
      continue;
    }
    if (!is_cei_name(cei->name)) {
      errs.push_back(err_at(diag::UnknownCei,
                            "unknown constraint extension " + cei->name, "",
                            d->line, d->col));
      continue;
    }
    auto bad = [&](const std::string& why) {
      errs.push_back(
          err_at(diag::BadDeclaration, cei->name + ": " + why, "", d->line,
                 d->col));
    };
    if (cei->argLists.empty() || cei->argLists[0].empty()) {
      bad("missing arguments");
      continue;
    }
    auto relName = relation_name_arg(cei->argLists[0][0]);
    if (!relName) {
      bad("first argument must name a relation");
      continue;
    }
    size_t lists = cei->argLists.size();
    if (cei->name == "fdep") {
      if (lists != 2 || cei->argLists[0].size() < 2 || cei->argLists[1].empty())
        bad("expects fdep(R, determinant...)(dependent...)");
    } else if (cei->name == "pkey" || cei->name == "unique" ||
               cei->name == "order") {
      if (lists != 1 || cei->argLists[0].size() < 2)
        bad("expects " + cei->name + "(R, column...)");
    } else if (cei->name == "card") {
      if (lists != 1 || cei->argLists[0].size() < 2) {
        bad("expects card(R, n...)");
      } else {
        for (size_t i = 1; i < cei->argLists[0].size(); ++i) {
          const auto* lit = as_literal(cei->argLists[0][i]);
          const auto* v = as_variable(cei->argLists[0][i]);
          bool okInt = lit && std::holds_alternative<std::int64_t>(lit->value) &&
                       std::get<std::int64_t>(lit->value) >= 0;
          bool okWild = v && is_wildcard(v->name);
          if (!okInt && !okWild) {
            bad("dimensions must be non-negative integers or _");
            break;
          }
        }
      }
    } else if (cei->name == "type") {
      bool ok = lists == 1 && cei->argLists[0].size() == 2;
      if (ok) {
        auto tn = relation_name_arg(cei->argLists[0][1]);
        ok = tn && type_from_name(*tn).has_value();
      }
      if (!ok) bad("expects type(R, int|float|string|bool)");
    } else if (cei->name == "deg") {
      if (lists != 1) bad("expects a single argument list");
    }
  }
}

}  // namespace

Result<CheckedProgram> check_program(const Program& p, const Database* db,
                                     CheckOptions opts) {
  auto des = desugar(p);
  if (!des.ok()) return des.errors();
  CheckedProgram out;
  out.program = des.take();

  // Merge manifest-supplied declarations (parsed by the loader).
  if (db)
    for (const auto& d : db->declarations())
      out.program.declarations.push_back(d);

  std::vector<Diagnostic> errs;
  validate_declarations(out.program, errs);
  check_aggregate_placement(out.program, errs);
  if (!errs.empty()) return errs;

  auto env = infer_types(out.program, db);
  if (!env.ok()) return env.errors();
  out.env = env.take();

  for (size_t i = 0; i < out.program.rules.size(); ++i) {
    auto plan = plan_bindings(out.program.rules[i], out.env,
                              static_cast<int>(i));
    if (!plan.ok()) {
      for (const auto& d : plan.errors()) errs.push_back(d);
      continue;
    }
    out.plans.push_back(std::make_shared<const BindingPlan>(plan.take()));
  }
  if (!errs.empty()) return errs;

  auto strat = stratify(out.program);
  if (!strat.ok()) return strat.errors();
  out.strat = strat.take();

  // Recursion over real-valued payloads has no convergence guarantee.
  for (int s : out.strat.recursiveStrata) {
    for (int ri : out.strat.strata[s]) {
      const auto& name = out.program.rules[ri].head.relation;
      auto it = out.env.relSchemas.find(name);
      if (it != out.env.relSchemas.end() &&
          it->second.payloadType == ScalarType::Float) {
        errs.push_back(err_at(diag::RealRecursion,
                              "recursive relation " + name +
                                  " carries real payloads; recursion "
                                  "requires boolean or natural payloads",
                              name, out.program.rules[ri].line,
                              out.program.rules[ri].col));
      }
    }
  }
  if (!errs.empty()) return errs;

  if (db) {
    auto violations = check_integrity(*db, out.program.declarations);
    for (const auto& v : violations) {
      Diagnostic d = opts.strict ? error(v.code, v.message)
                                 : warning(v.code, v.message);
      d.rule = v.relation;
      if (opts.strict)
        errs.push_back(d);
      else
        out.warnings.push_back(d);
    }
    if (!errs.empty()) return errs;
  }
  return out;
}

}  // namespace hojabr
