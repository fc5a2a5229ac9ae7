// Evaluator: interprets binding plans, derives head relations over the
// payload semiring, applies actions, and runs strata to fixpoint.

#include "hojabr/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <variant>

#include <json.hpp>

#include "hojabr/syntax.hpp"

namespace hojabr {

namespace {

// ---------------------------------------------------------------- scalars

bool is_numeric(const Scalar& s) {
  return std::holds_alternative<std::int64_t>(s) ||
         std::holds_alternative<double>(s);
}

double as_double(const Scalar& s) {
  if (const auto* i = std::get_if<std::int64_t>(&s))
    return static_cast<double>(*i);
  return std::get<double>(s);
}

std::optional<std::int64_t> to_int(const Scalar& s) {
  if (const auto* i = std::get_if<std::int64_t>(&s)) return *i;
  if (const auto* d = std::get_if<double>(&s)) {
    if (*d == std::floor(*d) && std::abs(*d) < 4.6e18)
      return static_cast<std::int64_t>(*d);
  }
  return std::nullopt;
}

// Key-position equality is type-exact: an integer key never matches a
// float expression. Payload and filter comparisons promote numerics.
bool scalar_eq_exact(const Scalar& a, const Scalar& b) {
  return a.index() == b.index() && a == b;
}

// Three-way comparison with numeric promotion; nullopt when the operands
// are not comparable (different classes, or ordering over bools).
std::optional<int> compare3(const Scalar& a, const Scalar& b) {
  if (is_numeric(a) && is_numeric(b)) {
    if (std::holds_alternative<std::int64_t>(a) &&
        std::holds_alternative<std::int64_t>(b)) {
      auto x = std::get<std::int64_t>(a), y = std::get<std::int64_t>(b);
      return x < y ? -1 : x > y ? 1 : 0;
    }
    double x = as_double(a), y = as_double(b);
    return x < y ? -1 : x > y ? 1 : 0;
  }
  if (std::holds_alternative<std::string>(a) &&
      std::holds_alternative<std::string>(b)) {
    const auto& x = std::get<std::string>(a);
    const auto& y = std::get<std::string>(b);
    return x < y ? -1 : x > y ? 1 : 0;
  }
  return std::nullopt;
}

std::optional<bool> apply_compare(CompareOp op, const Scalar& a,
                                  const Scalar& b) {
  if (std::holds_alternative<bool>(a) && std::holds_alternative<bool>(b)) {
    if (op == CompareOp::Eq) return std::get<bool>(a) == std::get<bool>(b);
    if (op == CompareOp::Ne) return std::get<bool>(a) != std::get<bool>(b);
    return std::nullopt;
  }
  auto c = compare3(a, b);
  if (!c) {
    // Cross-class values are unequal but not ordered.
    if (op == CompareOp::Eq) return false;
    if (op == CompareOp::Ne) return true;
    return std::nullopt;
  }
  switch (op) {
    case CompareOp::Eq: return *c == 0;
    case CompareOp::Ne: return *c != 0;
    case CompareOp::Lt: return *c < 0;
    case CompareOp::Le: return *c <= 0;
    case CompareOp::Gt: return *c > 0;
    case CompareOp::Ge: return *c >= 0;
  }
  return std::nullopt;
}

SemiringKind semiring_for(const std::optional<ScalarType>& payload,
                          bool hasExpr) {
  if (payload) {
    switch (*payload) {
      case ScalarType::Bool: return SemiringKind::Boolean;
      case ScalarType::Int: return SemiringKind::Natural;
      case ScalarType::Float: return SemiringKind::Real;
      case ScalarType::String: return SemiringKind::Boolean;  // rejected later
    }
  }
  return hasExpr ? SemiringKind::Real : SemiringKind::Boolean;
}

std::vector<int> head_levels(const Access& head) {
  std::vector<int> lv;
  for (const auto& args : head.argLists)
    lv.push_back(static_cast<int>(args.size()));
  if (lv.empty()) lv.push_back(0);
  return lv;
}

void collect_expr_vars(const ExprPtr& e, std::set<std::string>& out) {
  if (!e) return;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Variable>) {
          if (!is_wildcard(n.name)) out.insert(n.name);
        } else if constexpr (std::is_same_v<T, Access>) {
          for (const auto& args : n.argLists)
            for (const auto& a : args) collect_expr_vars(a, out);
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          collect_expr_vars(n.lhs, out);
          collect_expr_vars(n.rhs, out);
        } else if constexpr (std::is_same_v<T, NegateExpr>) {
          collect_expr_vars(n.operand, out);
        } else if constexpr (std::is_same_v<T, EeiCall>) {
          for (const auto& a : n.args) collect_expr_vars(a, out);
        }
      },
      e->node);
}

}  // namespace

// --------------------------------------------------------------- EEI core

std::vector<double> eval_softmax(const std::vector<double>& values) {
  std::vector<double> out(values.size());
  if (values.empty()) return out;
  double m = *std::max_element(values.begin(), values.end());
  double sum = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = std::exp(values[i] - m);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

Result<Scalar> eval_eei(const std::string& name,
                        const std::vector<Scalar>& args) {
  for (const auto& a : args)
    if (!is_numeric(a))
      return error(diag::RuntimeType,
                   name + " applied to a non-numeric value " + print_scalar(a));
  if (is_scalar_eei(name)) {
    if (args.size() != 1)
      return error(diag::RuntimeType, name + " takes exactly one argument");
    const Scalar& x = args[0];
    if (name == "sin") return Scalar{std::sin(as_double(x))};
    if (name == "cos") return Scalar{std::cos(as_double(x))};
    if (name == "relu") {
      if (const auto* i = std::get_if<std::int64_t>(&x))
        return Scalar{std::max<std::int64_t>(0, *i)};
      return Scalar{std::max(0.0, std::get<double>(x))};
    }
  }
  if (name == "softmax")
    return error(diag::RuntimeType,
                 "softmax is per-element; it applies only as a head "
                 "aggregate");
  if (is_aggregate_eei(name)) {
    if (args.empty()) {
      if (name == "median")
        return error(diag::EmptyMedian, "median of an empty group");
      if (name == "sum") return Scalar{std::int64_t{0}};
      return error(diag::RuntimeType, name + " of an empty group");
    }
    bool allInt = std::all_of(args.begin(), args.end(), [](const Scalar& s) {
      return std::holds_alternative<std::int64_t>(s);
    });
    if (name == "sum") {
      if (allInt) {
        std::int64_t s = 0;
        for (const auto& a : args) s += std::get<std::int64_t>(a);
        return Scalar{s};
      }
      double s = 0;
      for (const auto& a : args) s += as_double(a);
      return Scalar{s};
    }
    if (name == "avg") {
      double s = 0;
      for (const auto& a : args) s += as_double(a);
      return Scalar{s / static_cast<double>(args.size())};
    }
    if (name == "min" || name == "max") {
      Scalar best = args[0];
      for (const auto& a : args) {
        double d = as_double(a), bd = as_double(best);
        if (name == "min" ? d < bd : d > bd) best = a;
      }
      return best;
    }
    if (name == "median") {
      std::vector<Scalar> sorted = args;
      std::stable_sort(sorted.begin(), sorted.end(),
                       [](const Scalar& a, const Scalar& b) {
                         return as_double(a) < as_double(b);
                       });
      std::size_t n = sorted.size();
      if (n % 2 == 1) return sorted[n / 2];
      const Scalar& a = sorted[n / 2 - 1];
      const Scalar& b = sorted[n / 2];
      if (allInt)
        return Scalar{(std::get<std::int64_t>(a) + std::get<std::int64_t>(b)) /
                      2};
      return Scalar{(as_double(a) + as_double(b)) / 2.0};
    }
  }
  return error(diag::RuntimeType, "unknown extension function " + name);
}

// ----------------------------------------------------------------- walker

namespace {

struct Binding {
  std::map<std::string, Scalar> scalars;
  std::map<std::string, ConstRelPtr> rels;
};

struct EvalContext {
  const TypeEnv* env = nullptr;
  const Database* db = nullptr;
  const EvalConfig* cfg = nullptr;
  // Semi-naive delta substitution: the top-level plan step at this index
  // reads deltaRel instead of the stored relation.
  int deltaStep = -1;
  ConstRelPtr deltaRel;
  std::string ruleName;
  int ruleLine = 0;
  std::set<std::string> headKeyVars;
  bool valuedRule = false;
  RuleStats* stats = nullptr;
  std::vector<Diagnostic>* warnings = nullptr;
  bool disjunctOverlapWarned = false;
  std::optional<Diagnostic> failure;
  std::map<std::string, ConstRelPtr> emptyCache;

  bool fail(const char* code, std::string msg) {
    if (!failure)
      failure = error(code, std::move(msg), ruleName, ruleLine, 0);
    return false;
  }
  void count(std::int64_t n) { stats->enumerations += n; }
};

// Resolves a relation reference; null return means ctx.failure is set.
const RelationValue* resolve_relation(EvalContext& ctx, const Binding& b,
                                      const std::string& name, bool isVar,
                                      int topIdx) {
  if (isVar) {
    auto it = b.rels.find(name);
    if (it == b.rels.end()) {
      ctx.fail(diag::RuntimeType, "relation variable " + name + " is unbound");
      return nullptr;
    }
    return it->second.get();
  }
  if (topIdx >= 0 && topIdx == ctx.deltaStep) return ctx.deltaRel.get();
  if (auto r = ctx.db->relation(name)) {
    // Keep the snapshot alive for the duration of this evaluation: the
    // database may be reinstalled between rounds but not within one.
    return r.get();
  }
  auto info = ctx.env->relSchemas.find(name);
  if (info != ctx.env->relSchemas.end() && info->second.definedByRule) {
    auto& cached = ctx.emptyCache[name];
    if (!cached) {
      std::vector<int> lv = info->second.levels;
      if (lv.empty())
        lv = {info->second.totalArity >= 0 ? info->second.totalArity : 1};
      cached = std::make_shared<RelationValue>(
          lv, semiring_for(info->second.payloadType, false));
    }
    return cached.get();
  }
  ctx.fail(diag::MissingRelation,
           "relation " + name + " is not loaded and no rule defines it");
  return nullptr;
}

// Binds variables for the dynamic extent of one candidate; unbinds on
// destruction. bind() refuses to shadow an existing binding.
struct ScopedBinds {
  Binding& b;
  std::vector<std::string> names;
  explicit ScopedBinds(Binding& bb) : b(bb) {}
  ScopedBinds(const ScopedBinds&) = delete;
  bool bind(const std::string& n, const Scalar& v) {
    if (is_wildcard(n)) return true;
    auto [it, inserted] = b.scalars.emplace(n, v);
    if (!inserted) return false;
    names.push_back(n);
    return true;
  }
  ~ScopedBinds() {
    for (const auto& n : names) b.scalars.erase(n);
  }
};

std::optional<Scalar> eval_expr(EvalContext& ctx, const Binding& b,
                                const ExprPtr& e);

// Ground payload lookup: descends the relation's own level structure;
// absent keys read the semiring zero.
std::optional<Scalar> lookup_payload(EvalContext& ctx,
                                     const RelationValue* rel,
                                     const Key& flat) {
  if (static_cast<int>(flat.size()) != rel->total_arity()) {
    ctx.fail(diag::RuntimeType, "access arity does not match stored relation");
    return std::nullopt;
  }
  SemiringKind k = rel->semiring();
  const RelationValue* node = rel;
  ConstRelPtr hold;
  std::size_t off = 0;
  while (node->depth() > 1) {
    std::size_t a = static_cast<std::size_t>(node->level_arity());
    Key levelKey(flat.begin() + off, flat.begin() + off + a);
    if (node->is_dense())
      for (const auto& c : levelKey)
        if (!std::holds_alternative<std::int64_t>(c))
          return semiring_zero(k);
    hold = node->sub(levelKey);
    if (!hold) return semiring_zero(k);
    node = hold.get();
    off += a;
  }
  Key levelKey(flat.begin() + off, flat.end());
  if (node->is_dense())
    for (const auto& c : levelKey)
      if (!std::holds_alternative<std::int64_t>(c)) return semiring_zero(k);
  return node->payload_or_zero(levelKey);
}

std::optional<Scalar> eval_expr(EvalContext& ctx, const Binding& b,
                                const ExprPtr& e) {
  if (!e) {
    ctx.fail(diag::RuntimeType, "missing expression");
    return std::nullopt;
  }
  return std::visit(
      [&](const auto& n) -> std::optional<Scalar> {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Literal>) {
          return n.value;
        } else if constexpr (std::is_same_v<T, Variable>) {
          auto it = b.scalars.find(n.name);
          if (it == b.scalars.end()) {
            ctx.fail(diag::RuntimeType, "variable " + n.name + " is unbound");
            return std::nullopt;
          }
          return it->second;
        } else if constexpr (std::is_same_v<T, Access>) {
          const RelationValue* rel =
              resolve_relation(ctx, b, n.relation, b.rels.count(n.relation) > 0,
                               -1);
          if (!rel) return std::nullopt;
          Key flat;
          for (const auto& args : n.argLists)
            for (const auto& a : args) {
              auto v = eval_expr(ctx, b, a);
              if (!v) return std::nullopt;
              flat.push_back(*v);
            }
          return lookup_payload(ctx, rel, flat);
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          auto l = eval_expr(ctx, b, n.lhs);
          if (!l) return std::nullopt;
          auto r = eval_expr(ctx, b, n.rhs);
          if (!r) return std::nullopt;
          if (!is_numeric(*l) || !is_numeric(*r)) {
            ctx.fail(diag::RuntimeType,
                     std::string("arithmetic over non-numeric values (") +
                         print_scalar(*l) + " " + to_string(n.op) + " " +
                         print_scalar(*r) + ")");
            return std::nullopt;
          }
          bool bothInt = std::holds_alternative<std::int64_t>(*l) &&
                         std::holds_alternative<std::int64_t>(*r);
          if (n.op == BinOp::Div) {
            if ((bothInt && std::get<std::int64_t>(*r) == 0) ||
                (!bothInt && as_double(*r) == 0.0)) {
              ctx.fail(diag::DivisionByZero, "division by zero");
              return std::nullopt;
            }
          }
          if (bothInt) {
            std::int64_t x = std::get<std::int64_t>(*l);
            std::int64_t y = std::get<std::int64_t>(*r);
            switch (n.op) {
              case BinOp::Add: return Scalar{x + y};
              case BinOp::Sub: return Scalar{x - y};
              case BinOp::Mul: return Scalar{x * y};
              case BinOp::Div: return Scalar{x / y};
            }
          }
          double x = as_double(*l), y = as_double(*r);
          switch (n.op) {
            case BinOp::Add: return Scalar{x + y};
            case BinOp::Sub: return Scalar{x - y};
            case BinOp::Mul: return Scalar{x * y};
            case BinOp::Div: return Scalar{x / y};
          }
          return std::nullopt;
        } else if constexpr (std::is_same_v<T, NegateExpr>) {
          auto v = eval_expr(ctx, b, n.operand);
          if (!v) return std::nullopt;
          if (const auto* i = std::get_if<std::int64_t>(&*v))
            return Scalar{-*i};
          if (const auto* d = std::get_if<double>(&*v)) return Scalar{-*d};
          ctx.fail(diag::RuntimeType, "negation of a non-numeric value");
          return std::nullopt;
        } else if constexpr (std::is_same_v<T, EeiCall>) {
          if (is_aggregate_eei(n.name)) {
            ctx.fail(diag::RuntimeType,
                     "aggregate " + n.name + " in expression position");
            return std::nullopt;
          }
          std::vector<Scalar> args;
          for (const auto& a : n.args) {
            auto v = eval_expr(ctx, b, a);
            if (!v) return std::nullopt;
            args.push_back(*v);
          }
          auto r = eval_eei(n.name, args);
          if (!r) {
            ctx.fail(diag::RuntimeType, r.errors()[0].message);
            return std::nullopt;
          }
          return r.take();
        }
      },
      e->node);
}

// Fully-ground constraint test. nullopt means ctx.failure is set.
std::optional<bool> eval_test(EvalContext& ctx, const Binding& b,
                              const ConstraintPtr& c) {
  return std::visit(
      [&](const auto& n) -> std::optional<bool> {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, BoolConst>) {
          return n.value;
        } else if constexpr (std::is_same_v<T, Comparison>) {
          auto l = eval_expr(ctx, b, n.lhs);
          if (!l) return std::nullopt;
          auto r = eval_expr(ctx, b, n.rhs);
          if (!r) return std::nullopt;
          auto v = apply_compare(n.op, *l, *r);
          if (!v) {
            ctx.fail(diag::RuntimeType,
                     std::string("values ") + print_scalar(*l) + " and " +
                         print_scalar(*r) + " are not ordered");
            return std::nullopt;
          }
          return *v;
        } else if constexpr (std::is_same_v<T, AtomAccess>) {
          const RelationValue* rel = resolve_relation(
              ctx, b, n.access.relation,
              b.rels.count(n.access.relation) > 0, -1);
          if (!rel) return std::nullopt;
          Key flat;
          for (const auto& args : n.access.argLists)
            for (const auto& a : args) {
              auto v = eval_expr(ctx, b, a);
              if (!v) return std::nullopt;
              flat.push_back(*v);
            }
          // Existence: full keys need a non-zero payload, prefixes a
          // non-empty sub-relation.
          const RelationValue* node = rel;
          ConstRelPtr hold;
          std::size_t off = 0;
          while (off < flat.size() && node->depth() > 1) {
            std::size_t a = static_cast<std::size_t>(node->level_arity());
            if (off + a > flat.size()) {
              ctx.fail(diag::RuntimeType,
                       "atom does not align with a level boundary of " +
                           n.access.relation);
              return std::nullopt;
            }
            Key lk(flat.begin() + off, flat.begin() + off + a);
            if (node->is_dense())
              for (const auto& comp : lk)
                if (!std::holds_alternative<std::int64_t>(comp)) return false;
            hold = node->sub(lk);
            if (!hold || hold->empty()) return false;
            node = hold.get();
            off += a;
          }
          if (off == flat.size())
            return !node->empty();  // ground prefix: existence
          Key lk(flat.begin() + off, flat.end());
          if (static_cast<int>(lk.size()) != node->level_arity()) {
            ctx.fail(diag::RuntimeType,
                     "atom arity does not match " + n.access.relation);
            return std::nullopt;
          }
          if (node->is_dense())
            for (const auto& comp : lk)
              if (!std::holds_alternative<std::int64_t>(comp)) return false;
          Scalar p = node->payload_or_zero(lk);
          return !is_semiring_zero(node->semiring(), p);
        } else if constexpr (std::is_same_v<T, Conjunction>) {
          auto l = eval_test(ctx, b, n.lhs);
          if (!l) return std::nullopt;
          if (!*l) return false;
          return eval_test(ctx, b, n.rhs);
        } else if constexpr (std::is_same_v<T, Disjunction>) {
          auto l = eval_test(ctx, b, n.lhs);
          if (!l) return std::nullopt;
          if (*l) return true;
          return eval_test(ctx, b, n.rhs);
        } else if constexpr (std::is_same_v<T, Negation>) {
          auto v = eval_test(ctx, b, n.inner);
          if (!v) return std::nullopt;
          return !*v;
        } else {
          ctx.fail(diag::RuntimeType,
                   "constraint form cannot be tested at runtime");
          return std::nullopt;
        }
      },
      c->node);
}

// Interprets one BindingPlan. Steps execute in order; each generator
// enumerates candidates and recurses; walk returns false to stop early
// (error or a sink that asked to stop).
class Walker {
 public:
  Walker(EvalContext& ctx, const BindingPlan& plan, bool topLevel)
      : ctx_(ctx), plan_(plan), topLevel_(topLevel) {}

  bool run(Binding& b, const std::function<bool(Binding&)>& sink) {
    sink_ = &sink;
    return step(0, b);
  }

 private:
  EvalContext& ctx_;
  const BindingPlan& plan_;
  bool topLevel_;
  const std::function<bool(Binding&)>* sink_ = nullptr;

  bool step(std::size_t i, Binding& b) {
    if (ctx_.failure) return false;
    if (i == plan_.steps.size()) return (*sink_)(b);
    return std::visit(
        [&](const auto& s) -> bool {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, StepGenAccess>)
            return gen_access(s, static_cast<int>(i), i + 1, b);
          else if constexpr (std::is_same_v<T, StepGenRange>)
            return gen_range(s, i + 1, b);
          else if constexpr (std::is_same_v<T, StepGenEquality>)
            return gen_equality(s, i + 1, b);
          else if constexpr (std::is_same_v<T, StepCardBind>)
            return card_bind(s, i + 1, b);
          else if constexpr (std::is_same_v<T, StepFilter>)
            return filter(s, i + 1, b);
          else if constexpr (std::is_same_v<T, StepNegation>)
            return negation(s, i + 1, b);
          else if constexpr (std::is_same_v<T, StepNestedBind>)
            return nested_bind(s, i + 1, b);
          else
            return disjunct(s, i + 1, b);
        },
        plan_.steps[i]);
  }

  // ---- generating access (scan / probe over the relation's levels)

  bool gen_access(const StepGenAccess& s, int stepIdx, std::size_t next,
                  Binding& b) {
    const RelationValue* rel =
        resolve_relation(ctx_, b, s.relation, s.relationIsVar,
                         topLevel_ ? stepIdx : -1);
    if (!rel) return false;
    return descend(rel, 0, s, next, b);
  }

  bool descend(const RelationValue* node, std::size_t off,
               const StepGenAccess& s, std::size_t next, Binding& b) {
    if (off == s.slots.size()) {
      // Slots exhausted at a level boundary: the addressed sub-relation
      // exists (and is non-empty by the zero-elision invariant).
      return step(next, b);
    }
    std::size_t arity = static_cast<std::size_t>(node->level_arity());
    bool last = node->depth() == 1;
    if (off + arity > s.slots.size() ||
        (last && off + arity != s.slots.size()))
      return ctx_.fail(diag::RuntimeType,
                       "access to " + s.relation +
                           " does not match the stored level structure");
    bool allGround = true;
    for (std::size_t c = 0; c < arity; ++c)
      if (s.slots[off + c].mode == AccessSlot::Mode::Bind) allGround = false;
    if (allGround) {
      ctx_.count(1);
      Key key;
      for (std::size_t c = 0; c < arity; ++c) {
        auto v = eval_expr(ctx_, b, s.slots[off + c].expr);
        if (!v) return false;
        key.push_back(*v);
      }
      if (node->is_dense())
        for (const auto& comp : key)
          if (!std::holds_alternative<std::int64_t>(comp)) return true;
      if (!last) {
        ConstRelPtr child = node->sub(key);
        if (!child || child->empty()) return true;
        return descend(child.get(), off + arity, s, next, b);
      }
      Scalar p = node->payload_or_zero(key);
      if (is_semiring_zero(node->semiring(), p)) return true;
      return finish_payload(s, p, next, b);
    }
    return node->for_each_while([&](const Key& k, ConstRelPtr child,
                                    const Scalar* payload) -> bool {
      ctx_.count(1);
      ScopedBinds sb(b);
      for (std::size_t c = 0; c < arity; ++c) {
        const AccessSlot& sl = s.slots[off + c];
        if (sl.mode == AccessSlot::Mode::Bind) {
          if (!sb.bind(sl.var, k[c]))
            return ctx_.fail(diag::RuntimeType,
                             "variable " + sl.var + " bound twice");
        } else {
          auto v = eval_expr(ctx_, b, sl.expr);
          if (!v) return false;
          if (!scalar_eq_exact(*v, k[c])) return true;  // next candidate
        }
      }
      if (!last) return descend(child.get(), off + arity, s, next, b);
      return finish_payload(s, *payload, next, b);
    });
  }

  bool finish_payload(const StepGenAccess& s, const Scalar& p,
                      std::size_t next, Binding& b) {
    ScopedBinds sb(b);
    if (!s.payloadVar.empty()) {
      if (!sb.bind(s.payloadVar, p))
        return ctx_.fail(diag::RuntimeType,
                         "variable " + s.payloadVar + " bound twice");
    }
    if (s.payloadEq) {
      auto v = eval_expr(ctx_, b, s.payloadEq);
      if (!v) return false;
      auto eq = apply_compare(CompareOp::Eq, p, *v);
      if (!eq || !*eq) return true;
    }
    return step(next, b);
  }

  // ---- integer range

  bool gen_range(const StepGenRange& s, std::size_t next, Binding& b) {
    auto loV = eval_expr(ctx_, b, s.lo);
    if (!loV) return false;
    auto hiV = eval_expr(ctx_, b, s.hi);
    if (!hiV) return false;
    auto lo = to_int(*loV), hi = to_int(*hiV);
    if (!lo || !hi)
      return ctx_.fail(diag::RuntimeType,
                       "range over " + s.var + " has non-integer bounds");
    for (std::int64_t v = *lo + (s.loStrict ? 1 : 0);
         s.hiStrict ? v < *hi : v <= *hi; ++v) {
      ctx_.count(1);
      ScopedBinds sb(b);
      if (!sb.bind(s.var, Scalar{v}))
        return ctx_.fail(diag::RuntimeType,
                         "variable " + s.var + " bound twice");
      if (!step(next, b)) return false;
    }
    return true;
  }

  // ---- deterministic equality bind

  bool gen_equality(const StepGenEquality& s, std::size_t next, Binding& b) {
    auto v = eval_expr(ctx_, b, s.expr);
    if (!v) return false;
    ScopedBinds sb(b);
    if (!sb.bind(s.var, *v))
      return ctx_.fail(diag::RuntimeType, "variable " + s.var + " bound twice");
    return step(next, b);
  }

  // ---- card: bind/check dimensions of a stored relation

  bool card_bind(const StepCardBind& s, std::size_t next, Binding& b) {
    const RelationValue* rel =
        resolve_relation(ctx_, b, s.relation, s.relationIsVar, -1);
    if (!rel) return false;
    std::vector<std::int64_t> dims;
    if (rel->is_dense()) {
      for (auto d : rel->shape()) dims.push_back(static_cast<std::int64_t>(d));
    } else {
      dims.assign(static_cast<std::size_t>(rel->total_arity()), 0);
      bool bad = false;
      rel->for_each_flat([&](const Key& k, const Scalar&) {
        for (std::size_t i = 0; i < k.size(); ++i) {
          const auto* iv = std::get_if<std::int64_t>(&k[i]);
          if (!iv) {
            bad = true;
            return;
          }
          dims[i] = std::max(dims[i], *iv + 1);
        }
      });
      if (bad)
        return ctx_.fail(diag::RuntimeType,
                         "card over " + s.relation +
                             " requires integer keys");
    }
    if (s.args.size() != dims.size())
      return ctx_.fail(diag::RuntimeType,
                       "card over " + s.relation + " expects " +
                           std::to_string(dims.size()) + " dimensions");
    ScopedBinds sb(b);
    for (std::size_t i = 0; i < s.args.size(); ++i) {
      const ExprPtr& a = s.args[i];
      const Variable* var = std::get_if<Variable>(&a->node);
      if (var && is_wildcard(var->name)) continue;
      if (var && !b.scalars.count(var->name)) {
        if (!sb.bind(var->name, Scalar{dims[i]}))
          return ctx_.fail(diag::RuntimeType,
                           "variable " + var->name + " bound twice");
        continue;
      }
      auto v = eval_expr(ctx_, b, a);
      if (!v) return false;
      auto eq = apply_compare(CompareOp::Eq, *v, Scalar{dims[i]});
      if (!eq || !*eq) return true;  // dimension mismatch: no extension
    }
    return step(next, b);
  }

  // ---- filter

  bool filter(const StepFilter& s, std::size_t next, Binding& b) {
    auto v = eval_test(ctx_, b, s.constraint);
    if (!v) return false;
    if (!*v) return true;
    return step(next, b);
  }

  // ---- negation (no satisfying extension of the inner plan)

  bool negation(const StepNegation& s, std::size_t next, Binding& b) {
    bool found = false;
    Walker inner(ctx_, *s.inner, false);
    inner.run(b, [&](Binding&) {
      found = true;
      return false;
    });
    if (ctx_.failure) return false;
    if (found) return true;
    return step(next, b);
  }

  // ---- nested rule: bind a relation variable to a sub-relation

  bool nested_bind(const StepNestedBind& s, std::size_t next, Binding& b) {
    const RelationValue* rel =
        resolve_relation(ctx_, b, s.relation, s.relationIsVar, -1);
    if (!rel) return false;
    Key flat;
    for (const auto& e : s.keys) {
      auto v = eval_expr(ctx_, b, e);
      if (!v) return false;
      flat.push_back(*v);
    }
    const RelationValue* node = rel;
    ConstRelPtr hold;
    std::size_t off = 0;
    while (off < flat.size()) {
      if (node->depth() <= 1)
        return ctx_.fail(diag::RuntimeType,
                         "nested rule over " + s.relation +
                             " addresses a payload, not a sub-relation");
      std::size_t a = static_cast<std::size_t>(node->level_arity());
      if (off + a > flat.size())
        return ctx_.fail(diag::RuntimeType,
                         "nested rule key does not align with a level "
                         "boundary of " +
                             s.relation);
      Key lk(flat.begin() + off, flat.begin() + off + a);
      if (node->is_dense())
        for (const auto& comp : lk)
          if (!std::holds_alternative<std::int64_t>(comp)) return true;
      hold = node->sub(lk);
      if (!hold || hold->empty()) return true;  // unsatisfied
      node = hold.get();
      off += a;
    }
    auto [it, inserted] = b.rels.emplace(s.relVar, hold);
    if (!inserted)
      return ctx_.fail(diag::RuntimeType,
                       "relation variable " + s.relVar + " bound twice");
    bool ok = step(next, b);
    b.rels.erase(it);
    return ok;
  }

  // ---- disjunction: union of branch extensions over the visible vars

  bool disjunct(const StepDisjunct& s, std::size_t next, Binding& b) {
    std::map<Key, std::set<std::size_t>, KeyLess> tuples;
    for (std::size_t bi = 0; bi < s.branches.size(); ++bi) {
      Walker bw(ctx_, *s.branches[bi], false);
      bw.run(b, [&](Binding& bb) {
        Key t;
        for (const auto& v : s.visible) {
          auto it = bb.scalars.find(v);
          if (it == bb.scalars.end())
            return ctx_.fail(diag::RuntimeType,
                             "disjunction branch left " + v + " unbound");
          t.push_back(it->second);
        }
        tuples[t].insert(bi);
        return true;
      });
      if (ctx_.failure) return false;
    }
    if (ctx_.cfg->strict && ctx_.valuedRule && !ctx_.disjunctOverlapWarned &&
        ctx_.warnings) {
      std::vector<std::size_t> keyPos;
      for (std::size_t i = 0; i < s.visible.size(); ++i)
        if (ctx_.headKeyVars.count(s.visible[i])) keyPos.push_back(i);
      if (keyPos.size() < s.visible.size()) {
        std::map<Key, int, KeyLess> byKey;
        for (const auto& entry : tuples) {
          Key kp;
          for (auto i : keyPos) kp.push_back(entry.first[i]);
          if (++byKey[kp] == 2) {
            ctx_.warnings->push_back(warning(
                diag::ValuedDisjunctOverlap,
                "valued disjunction branches overlap on head key (" +
                    print_key(kp) + "); the overlapping derivations add",
                ctx_.ruleName, ctx_.ruleLine, 0));
            ctx_.disjunctOverlapWarned = true;
            break;
          }
        }
      }
    }
    for (const auto& entry : tuples) {
      const Key& t = entry.first;
      ScopedBinds sb(b);
      for (std::size_t i = 0; i < s.visible.size(); ++i)
        if (!sb.bind(s.visible[i], t[i]))
          return ctx_.fail(diag::RuntimeType,
                           "variable " + s.visible[i] + " bound twice");
      if (!step(next, b)) return false;
    }
    return true;
  }
};

// ------------------------------------------------------------- rule eval

struct RuleOutput {
  RelPtr rel;
  std::optional<std::vector<std::int64_t>> shape;  // multi-arg head card
  std::optional<std::int64_t> cap;                 // single-arg head card
  bool ordered = false;
};

Result<RuleOutput> eval_rule_internal(const CheckedProgram& cp, int ruleIdx,
                                      const Database& db,
                                      const EvalConfig& cfg, RuleStats* stats,
                                      std::vector<Diagnostic>* warnSink,
                                      int deltaStep, ConstRelPtr deltaRel) {
  const Rule& rule = cp.program.rules[ruleIdx];
  const BindingPlan& plan = *cp.plans[ruleIdx];
  const std::string& headName = rule.head.relation;

  auto infoIt = cp.env.relSchemas.find(headName);
  std::optional<ScalarType> payloadType;
  if (infoIt != cp.env.relSchemas.end())
    payloadType = infoIt->second.payloadType;
  if (payloadType && *payloadType == ScalarType::String)
    return error(diag::RuntimeType,
                 "relation " + headName + " cannot carry string payloads",
                 headName, rule.line, rule.col);
  SemiringKind semiring = semiring_for(payloadType, rule.expr != nullptr);

  // Aggregate heads group by head key instead of adding derivations.
  const EeiCall* agg = nullptr;
  if (rule.expr) {
    if (const auto* call = std::get_if<EeiCall>(&rule.expr->node))
      if (is_aggregate_eei(call->name)) agg = call;
  }
  bool isSoftmax = agg && agg->name == "softmax";

  EvalContext ctx;
  ctx.env = &cp.env;
  ctx.db = &db;
  ctx.cfg = &cfg;
  ctx.deltaStep = deltaStep;
  ctx.deltaRel = std::move(deltaRel);
  ctx.ruleName = headName;
  ctx.ruleLine = rule.line;
  ctx.valuedRule = rule.expr != nullptr && semiring == SemiringKind::Real;
  for (const auto& args : rule.head.argLists)
    for (const auto& a : args) collect_expr_vars(a, ctx.headKeyVars);
  RuleStats local;
  local.head = headName;
  ctx.stats = &local;
  ctx.warnings = warnSink;

  RuleOutput out;
  out.rel = std::make_shared<RelationValue>(head_levels(rule.head), semiring);

  std::map<Key, std::vector<Scalar>, KeyLess> groups;  // aggregates
  std::map<Key, double, KeyLess> combined;             // softmax
  bool directivesCaptured = plan.headCardArgs.empty();
  std::vector<ExprPtr> flatHead;
  for (const auto& args : rule.head.argLists)
    for (const auto& a : args) flatHead.push_back(a);

  Binding b;
  Walker w(ctx, plan, true);
  w.run(b, [&](Binding& bb) -> bool {
    local.derivations++;
    Key hk;
    for (const auto& e : flatHead) {
      auto v = eval_expr(ctx, bb, e);
      if (!v) return false;
      hk.push_back(*v);
    }
    if (!directivesCaptured) {
      if (plan.headCardArgs.size() == 1) {
        auto v = eval_expr(ctx, bb, plan.headCardArgs[0]);
        if (!v) return false;
        auto k = to_int(*v);
        if (!k)
          return ctx.fail(diag::RuntimeType,
                          "head card cap must be an integer");
        out.cap = *k;
      } else {
        std::vector<std::int64_t> shape;
        for (const auto& a : plan.headCardArgs) {
          const Variable* var = std::get_if<Variable>(&a->node);
          if (var && is_wildcard(var->name)) {
            shape.push_back(-1);
            continue;
          }
          auto v = eval_expr(ctx, bb, a);
          if (!v) return false;
          auto k = to_int(*v);
          if (!k)
            return ctx.fail(diag::RuntimeType,
                            "head shape dimensions must be integers");
          shape.push_back(*k);
        }
        out.shape = std::move(shape);
      }
      directivesCaptured = true;
    }
    if (agg) {
      auto v = eval_expr(ctx, bb, agg->args[0]);
      if (!v) return false;
      if (isSoftmax) {
        if (!is_numeric(*v))
          return ctx.fail(diag::RuntimeType,
                          "softmax over a non-numeric value");
        auto [it, inserted] = combined.emplace(hk, as_double(*v));
        if (!inserted) it->second += as_double(*v);
      } else {
        groups[hk].push_back(*v);
      }
      return true;
    }
    Scalar val =
        rule.expr ? Scalar{} : semiring_one(semiring);
    if (rule.expr) {
      auto v = eval_expr(ctx, bb, rule.expr);
      if (!v) return false;
      val = *v;
    }
    auto carried = to_carrier(semiring, val);
    if (!carried)
      return ctx.fail(diag::RuntimeType,
                      "head payload " + print_scalar(val) +
                          " does not fit the " +
                          std::string(to_string(semiring)) + " semiring");
    out.rel->merge(hk, *carried);
    return true;
  });
  if (ctx.failure) return *ctx.failure;

  if (agg && !isSoftmax) {
    for (const auto& [k, vals] : groups) {
      auto r = eval_eei(agg->name, vals);
      if (!r) {
        Diagnostic d = r.errors()[0];
        d.rule = headName;
        d.line = rule.line;
        return d;
      }
      auto carried = to_carrier(semiring, r.value());
      if (!carried)
        return error(diag::RuntimeType,
                     "aggregate result does not fit the " +
                         std::string(to_string(semiring)) + " semiring",
                     headName, rule.line, rule.col);
      out.rel->merge(k, *carried);
    }
  }
  if (isSoftmax) {
    // Groups span the last head-key position: entries sharing the
    // all-but-last key prefix normalize together.
    std::map<Key, std::vector<std::pair<Key, double>>, KeyLess> byPrefix;
    for (const auto& [k, v] : combined) {
      Key prefix = k.empty() ? Key{} : Key(k.begin(), k.end() - 1);
      byPrefix[prefix].emplace_back(k, v);
    }
    for (const auto& [prefix, entries] : byPrefix) {
      std::vector<double> vals;
      for (const auto& [k, v] : entries) vals.push_back(v);
      std::vector<double> soft = eval_softmax(vals);
      for (std::size_t i = 0; i < entries.size(); ++i)
        out.rel->merge(entries[i].first, Scalar{soft[i]});
    }
  }

  out.ordered = plan.headOrdered;
  if (out.ordered) out.rel->set_layout(LayoutKind::Ordered);
  if (stats) {
    stats->head = local.head;
    stats->derivations += local.derivations;
    stats->enumerations += local.enumerations;
  }
  return out;
}

// Keeps the first `cap` entries in layout order (full-key lexicographic).
RelPtr apply_cap(const RelationValue& rel, std::int64_t cap) {
  auto out = std::make_shared<RelationValue>(rel.levels(), rel.semiring());
  out->set_layout(rel.layout());
  std::int64_t kept = 0;
  rel.for_each_flat([&](const Key& k, const Scalar& p) {
    if (kept < cap) {
      out->merge(k, p);
      ++kept;
    }
  });
  return out;
}

// --------------------------------------------------------- fixpoint tools

void merge_into(RelationValue& dst, const RelationValue& src) {
  src.for_each_flat([&](const Key& k, const Scalar& p) {
    auto c = to_carrier(dst.semiring(), p);
    if (c) dst.merge(k, *c);
  });
}

bool contains_flat(const RelationValue& rel, const Key& flat) {
  const RelationValue* node = &rel;
  ConstRelPtr hold;
  std::size_t off = 0;
  while (node->depth() > 1) {
    std::size_t a = static_cast<std::size_t>(node->level_arity());
    Key lk(flat.begin() + off, flat.begin() + off + a);
    hold = node->sub(lk);
    if (!hold) return false;
    node = hold.get();
    off += a;
  }
  Key lk(flat.begin() + off, flat.end());
  return node->contains(lk);
}

// Entries of `now` whose keys are absent from `before`.
RelPtr diff_new(const RelationValue& now, const RelationValue& before) {
  auto out = std::make_shared<RelationValue>(now.levels(), now.semiring());
  now.for_each_flat([&](const Key& k, const Scalar& p) {
    if (!contains_flat(before, k)) out->merge(k, p);
  });
  return out;
}

void collect_expr_relations(const ExprPtr& e, std::set<std::string>& out) {
  if (!e) return;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Access>) {
          out.insert(n.relation);
          for (const auto& args : n.argLists)
            for (const auto& a : args) collect_expr_relations(a, out);
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          collect_expr_relations(n.lhs, out);
          collect_expr_relations(n.rhs, out);
        } else if constexpr (std::is_same_v<T, NegateExpr>) {
          collect_expr_relations(n.operand, out);
        } else if constexpr (std::is_same_v<T, EeiCall>) {
          for (const auto& a : n.args) collect_expr_relations(a, out);
        }
      },
      e->node);
}

void collect_constraint_relations(const ConstraintPtr& c,
                                  std::set<std::string>& out) {
  if (!c) return;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Conjunction> ||
                      std::is_same_v<T, Disjunction>) {
          collect_constraint_relations(n.lhs, out);
          collect_constraint_relations(n.rhs, out);
        } else if constexpr (std::is_same_v<T, Negation>) {
          collect_constraint_relations(n.inner, out);
        } else if constexpr (std::is_same_v<T, AtomAccess>) {
          out.insert(n.access.relation);
          for (const auto& args : n.access.argLists)
            for (const auto& a : args) collect_expr_relations(a, out);
        } else if constexpr (std::is_same_v<T, Comparison>) {
          collect_expr_relations(n.lhs, out);
          collect_expr_relations(n.rhs, out);
        }
      },
      c->node);
}

// Where a rule's plan reads relations of its own stratum. Semi-naive
// delta substitution targets top-level generating accesses; recursive
// reads anywhere else force the rule to re-derive fully each round.
struct RecursiveRefs {
  std::vector<int> substitutable;  // top-level StepGenAccess indexes
  bool elsewhere = false;
  bool any() const { return elsewhere || !substitutable.empty(); }
};

void scan_plan_refs(const BindingPlan& plan, const std::set<std::string>& rec,
                    bool topLevel, RecursiveRefs& out) {
  auto exprHits = [&](const ExprPtr& e) {
    std::set<std::string> names;
    collect_expr_relations(e, names);
    for (const auto& n : names)
      if (rec.count(n)) return true;
    return false;
  };
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, StepGenAccess>) {
            bool slotHit = false;
            for (const auto& sl : s.slots)
              if (sl.expr && exprHits(sl.expr)) slotHit = true;
            if (s.payloadEq && exprHits(s.payloadEq)) slotHit = true;
            if (slotHit) out.elsewhere = true;
            if (!s.relationIsVar && rec.count(s.relation)) {
              if (topLevel && !slotHit)
                out.substitutable.push_back(static_cast<int>(i));
              else
                out.elsewhere = true;
            }
          } else if constexpr (std::is_same_v<T, StepGenRange>) {
            if (exprHits(s.lo) || exprHits(s.hi)) out.elsewhere = true;
          } else if constexpr (std::is_same_v<T, StepGenEquality>) {
            if (exprHits(s.expr)) out.elsewhere = true;
          } else if constexpr (std::is_same_v<T, StepCardBind>) {
            if (!s.relationIsVar && rec.count(s.relation))
              out.elsewhere = true;
            for (const auto& a : s.args)
              if (exprHits(a)) out.elsewhere = true;
          } else if constexpr (std::is_same_v<T, StepFilter>) {
            std::set<std::string> names;
            collect_constraint_relations(s.constraint, names);
            for (const auto& n : names)
              if (rec.count(n)) out.elsewhere = true;
          } else if constexpr (std::is_same_v<T, StepNegation>) {
            scan_plan_refs(*s.inner, rec, false, out);
          } else if constexpr (std::is_same_v<T, StepNestedBind>) {
            if (!s.relationIsVar && rec.count(s.relation))
              out.elsewhere = true;
            for (const auto& k : s.keys)
              if (exprHits(k)) out.elsewhere = true;
          } else if constexpr (std::is_same_v<T, StepDisjunct>) {
            for (const auto& br : s.branches)
              scan_plan_refs(*br, rec, false, out);
          }
        },
        plan.steps[i]);
  }
}

// Per-head output metadata accumulated from rule outputs.
struct HeadDirectives {
  std::optional<std::vector<std::int64_t>> shape;
  std::optional<std::int64_t> cap;
  bool ordered = false;
};

RelationSchema head_schema(const Rule& rule, const RelationValue& rel,
                           const HeadDirectives& dir) {
  RelationSchema s;
  s.levels = rel.levels();
  s.semiring = rel.semiring();
  s.layout = dir.ordered ? LayoutKind::Ordered : rel.layout();
  if (dir.shape) {
    for (auto d : *dir.shape)
      s.shape.push_back(d < 0 ? 0 : static_cast<std::size_t>(d));
  }
  int i = 0;
  for (const auto& args : rule.head.argLists)
    for (const auto& a : args) {
      const Variable* v = std::get_if<Variable>(&a->node);
      s.attrs.push_back(v && !is_wildcard(v->name)
                            ? v->name
                            : "k" + std::to_string(i));
      ++i;
    }
  return s;
}

}  // namespace

// ------------------------------------------------------------ public ops

Result<RelPtr> eval_rule(const CheckedProgram& cp, int ruleIndex,
                         const Database& db, const EvalConfig& cfg,
                         RuleStats* stats) {
  if (ruleIndex < 0 ||
      ruleIndex >= static_cast<int>(cp.program.rules.size()))
    return error(diag::RuntimeType, "rule index out of range");
  std::vector<Diagnostic> warnings;
  auto r = eval_rule_internal(cp, ruleIndex, db, cfg, stats, &warnings, -1,
                              nullptr);
  if (!r) return r.errors();
  RuleOutput out = r.take();
  RelPtr rel = out.rel;
  if (out.cap) rel = apply_cap(*rel, *out.cap);
  if (out.ordered) rel->set_layout(LayoutKind::Ordered);
  return Result<RelPtr>(std::move(rel), std::move(warnings));
}

void apply_action(Database& db, const std::string& head,
                  const RelationValue& delta, Action action) {
  ConstRelPtr existing = db.relation(head);
  switch (action) {
    case Action::Define:
    case Action::Add: {
      if (!existing) {
        db.install(head, delta.clone());
        return;
      }
      RelPtr m = existing->clone();
      delta.for_each_flat([&](const Key& k, const Scalar& p) {
        auto c = to_carrier(m->semiring(), p);
        if (c) m->merge(k, *c);
      });
      RelationSchema schema = *db.schema(head);
      db.install(head, m, schema);
      return;
    }
    case Action::Remove: {
      if (!existing) return;  // removing from nothing is a no-op
      RelPtr m = existing->clone();
      delta.for_each_flat([&](const Key& k, const Scalar& p) {
        auto c = to_carrier(m->semiring(), p);
        m->subtract(k, c ? *c : p);
      });
      RelationSchema schema = *db.schema(head);
      db.install(head, m, schema);
      return;
    }
    case Action::Replace: {
      db.install(head, delta.clone());
      return;
    }
  }
}

Result<RunResult> run_checked(const CheckedProgram& cp, const Database& dbIn,
                              EvalConfig cfg) {
  auto t0 = std::chrono::steady_clock::now();
  Database db = dbIn;
  const auto& strat = cp.strat;
  RunReport rep;
  rep.rules.resize(cp.program.rules.size());
  for (std::size_t i = 0; i < cp.program.rules.size(); ++i)
    rep.rules[i].head = cp.program.rules[i].head.relation;
  rep.strataIterations.assign(strat.strata.size(), 0);
  std::vector<Diagnostic> warnings = cp.warnings;

  for (std::size_t s = 0; s < strat.strata.size(); ++s) {
    std::vector<int> decl, imp;
    for (int ri : strat.strata[s])
      (cp.program.rules[ri].action == Action::Define ? decl : imp)
          .push_back(ri);
    std::sort(decl.begin(), decl.end());
    std::sort(imp.begin(), imp.end());

    std::map<std::string, HeadDirectives> directives;
    std::map<std::string, int> headRule;  // head -> first defining rule
    for (int ri : decl)
      headRule.emplace(cp.program.rules[ri].head.relation, ri);

    auto note_directives = [&](const std::string& h, const RuleOutput& out) {
      auto& d = directives[h];
      if (out.shape) d.shape = out.shape;
      if (out.cap) d.cap = out.cap;
      d.ordered = d.ordered || out.ordered;
    };

    if (!decl.empty()) {
      std::set<std::string> heads;
      for (int ri : decl) heads.insert(cp.program.rules[ri].head.relation);
      std::map<std::string, ConstRelPtr> base;
      for (const auto& h : heads) base[h] = db.relation(h);
      bool recursive = strat.recursiveStrata.count(static_cast<int>(s)) > 0;

      auto fresh_for = [&](const std::string& h) -> RelPtr {
        if (base[h]) return base[h]->clone();
        const Rule& r = cp.program.rules[headRule[h]];
        auto it = cp.env.relSchemas.find(h);
        std::optional<ScalarType> pt;
        if (it != cp.env.relSchemas.end()) pt = it->second.payloadType;
        return std::make_shared<RelationValue>(
            head_levels(r.head),
            semiring_for(pt, r.expr != nullptr));
      };

      if (!recursive) {
        std::map<std::string, RelPtr> fresh;
        for (const auto& h : heads) fresh[h] = fresh_for(h);
        for (int ri : decl) {
          const std::string& h = cp.program.rules[ri].head.relation;
          auto r = eval_rule_internal(cp, ri, db, cfg, &rep.rules[ri],
                                      &warnings, -1, nullptr);
          if (!r) return r.errors();
          note_directives(h, r.value());
          merge_into(*fresh[h], *r.value().rel);
        }
        for (const auto& h : heads) {
          RelPtr rel = fresh[h];
          const auto& d = directives[h];
          if (d.cap) rel = apply_cap(*rel, *d.cap);
          if (d.ordered) rel->set_layout(LayoutKind::Ordered);
          db.install(h, rel,
                     head_schema(cp.program.rules[headRule[h]], *rel, d));
        }
        rep.strataIterations[s] = 1;
      } else {
        // Semi-naive needs boolean heads; bag (natural) recursion iterates
        // naively so its counts stay well-defined.
        bool allBool = true;
        for (const auto& h : heads) {
          auto it = cp.env.relSchemas.find(h);
          std::optional<ScalarType> pt;
          if (it != cp.env.relSchemas.end()) pt = it->second.payloadType;
          if (semiring_for(pt, cp.program.rules[headRule[h]].expr != nullptr) !=
              SemiringKind::Boolean)
            allBool = false;
        }
        bool semi = cfg.mode == EvalConfig::Mode::SemiNaive && allBool;

        std::map<int, RecursiveRefs> refs;
        if (semi)
          for (int ri : decl)
            scan_plan_refs(*cp.plans[ri], heads, true, refs[ri]);

        std::map<std::string, ConstRelPtr> W, delta;
        for (const auto& h : heads) W[h] = fresh_for(h);
        std::int64_t k = 0;
        for (;;) {
          ++k;
          if (k > cfg.maxIterations)
            return error(diag::NonTermination,
                         "stratum " + std::to_string(s) +
                             " did not converge within " +
                             std::to_string(cfg.maxIterations) +
                             " iterations",
                         *heads.begin());
          for (const auto& h : heads) db.install(h, W[h]->clone());

          bool changed = false;
          std::map<std::string, RelPtr> next;
          if (!semi || k == 1) {
            for (const auto& h : heads) next[h] = fresh_for(h);
            for (int ri : decl) {
              const std::string& h = cp.program.rules[ri].head.relation;
              auto r = eval_rule_internal(cp, ri, db, cfg, &rep.rules[ri],
                                          &warnings, -1, nullptr);
              if (!r) return r.errors();
              note_directives(h, r.value());
              merge_into(*next[h], *r.value().rel);
            }
            for (const auto& h : heads) {
              if (!next[h]->logically_equal(*W[h])) changed = true;
              if (semi) delta[h] = diff_new(*next[h], *W[h]);
            }
          } else {
            std::map<std::string, RelPtr> found;
            for (const auto& h : heads)
              found[h] = std::make_shared<RelationValue>(W[h]->levels(),
                                                         W[h]->semiring());
            for (int ri : decl) {
              const std::string& h = cp.program.rules[ri].head.relation;
              const RecursiveRefs& rr = refs[ri];
              if (!rr.any()) continue;  // non-recursive rule: done at round 1
              auto absorb = [&](const RelationValue& derived) {
                derived.for_each_flat([&](const Key& key, const Scalar& p) {
                  if (!contains_flat(*W[h], key)) found[h]->merge(key, p);
                });
              };
              if (rr.elsewhere) {
                auto r = eval_rule_internal(cp, ri, db, cfg, &rep.rules[ri],
                                            &warnings, -1, nullptr);
                if (!r) return r.errors();
                note_directives(h, r.value());
                absorb(*r.value().rel);
              } else {
                for (int stepIdx : rr.substitutable) {
                  const auto& ga =
                      std::get<StepGenAccess>(cp.plans[ri]->steps[stepIdx]);
                  ConstRelPtr d = delta[ga.relation];
                  if (!d || d->empty()) continue;
                  auto r = eval_rule_internal(cp, ri, db, cfg, &rep.rules[ri],
                                              &warnings, stepIdx, d);
                  if (!r) return r.errors();
                  note_directives(h, r.value());
                  absorb(*r.value().rel);
                }
              }
            }
            for (const auto& h : heads) {
              if (!found[h]->empty()) changed = true;
              next[h] = W[h]->clone();
              merge_into(*next[h], *found[h]);
              delta[h] = found[h];
            }
          }
          if (cfg.derivationCounting && allBool) {
            // Monotonicity self-check: boolean fixpoints only grow.
            for (const auto& h : heads) {
              bool mono = true;
              W[h]->for_each_flat([&](const Key& key, const Scalar&) {
                if (!contains_flat(*next[h], key)) mono = false;
              });
              if (!mono)
                return error(diag::RuntimeType,
                             "internal: fixpoint of " + h +
                                 " is not monotone");
            }
          }
          for (const auto& h : heads) W[h] = next[h];
          rep.strataIterations[s] = k;
          if (!changed) break;
        }
        for (const auto& h : heads) {
          RelPtr rel = W[h]->clone();
          const auto& d = directives[h];
          if (d.cap) rel = apply_cap(*rel, *d.cap);
          if (d.ordered) rel->set_layout(LayoutKind::Ordered);
          db.install(h, rel,
                     head_schema(cp.program.rules[headRule[h]], *rel, d));
        }
      }
    }

    for (int ri : imp) {
      const Rule& rule = cp.program.rules[ri];
      auto r = eval_rule_internal(cp, ri, db, cfg, &rep.rules[ri], &warnings,
                                  -1, nullptr);
      if (!r) return r.errors();
      RuleOutput out = r.take();
      RelPtr rel = out.rel;
      if (out.cap) rel = apply_cap(*rel, *out.cap);
      apply_action(db, rule.head.relation, *rel, rule.action);
    }

    for (int ri : strat.strata[s]) {
      auto rel = db.relation(cp.program.rules[ri].head.relation);
      rep.rules[ri].outputSize =
          rel ? static_cast<std::int64_t>(rel->entry_count()) : 0;
    }
  }

  // Declared integrity constraints re-checked over derived relations
  // (loaded data was validated before evaluation). Strict mode escalates
  // violations to runtime errors.
  for (const auto& v : check_integrity(db, cp.program.declarations)) {
    auto it = cp.env.relSchemas.find(v.relation);
    if (it == cp.env.relSchemas.end() || !it->second.definedByRule) continue;
    if (cfg.strict) return error(v.code, v.message, v.relation);
    warnings.push_back(warning(v.code, v.message, v.relation));
  }

  rep.wallSeconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  RunResult result{std::move(db), std::move(rep), std::move(warnings)};
  return result;
}

Result<RunResult> run_program(const Program& p, const Database& db,
                              EvalConfig cfg) {
  CheckOptions copts;
  copts.strict = cfg.strict;
  auto checked = check_program(p, &db, copts);
  if (!checked) return checked.errors();
  return run_checked(checked.value(), db, cfg);
}

std::string RunReport::to_json() const {
  nlohmann::json j;
  j["wallSeconds"] = wallSeconds;
  j["strataIterations"] = strataIterations;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rules) {
    nlohmann::json o;
    o["head"] = r.head;
    o["derivations"] = r.derivations;
    o["enumerations"] = r.enumerations;
    o["outputSize"] = r.outputSize;
    arr.push_back(o);
  }
  j["rules"] = arr;
  return j.dump();
}

}  // namespace hojabr
