#include "hojabr/relation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "hojabr/syntax.hpp"

namespace hojabr {

// ---------------------------------------------------------------- semiring

const char* to_string(SemiringKind k) {
  switch (k) {
    case SemiringKind::Boolean: return "boolean";
    case SemiringKind::Natural: return "natural";
    case SemiringKind::Real: return "real";
  }
  return "?";
}

std::optional<SemiringKind> semiring_from_string(const std::string& s) {
  if (s == "boolean" || s == "set") return SemiringKind::Boolean;
  if (s == "natural" || s == "bag") return SemiringKind::Natural;
  if (s == "real" || s == "tensor") return SemiringKind::Real;
  return std::nullopt;
}

Scalar semiring_zero(SemiringKind k) {
  switch (k) {
    case SemiringKind::Boolean: return false;
    case SemiringKind::Natural: return std::int64_t{0};
    case SemiringKind::Real: return 0.0;
  }
  return false;
}

Scalar semiring_one(SemiringKind k) {
  switch (k) {
    case SemiringKind::Boolean: return true;
    case SemiringKind::Natural: return std::int64_t{1};
    case SemiringKind::Real: return 1.0;
  }
  return true;
}

std::optional<Scalar> to_carrier(SemiringKind k, const Scalar& s) {
  switch (k) {
    case SemiringKind::Boolean:
      if (std::holds_alternative<bool>(s)) return s;
      return std::nullopt;
    case SemiringKind::Natural:
      if (std::holds_alternative<std::int64_t>(s)) return s;
      return std::nullopt;
    case SemiringKind::Real:
      if (std::holds_alternative<double>(s)) return s;
      if (const auto* i = std::get_if<std::int64_t>(&s))
        return static_cast<double>(*i);
      return std::nullopt;
  }
  return std::nullopt;
}

namespace {

[[noreturn]] void carrier_error(SemiringKind k, const Scalar& s) {
  throw std::invalid_argument(std::string("value ") + print_scalar(s) +
                              " is not in the " + to_string(k) + " carrier");
}

Scalar carrier(SemiringKind k, const Scalar& s) {
  auto c = to_carrier(k, s);
  if (!c) carrier_error(k, s);
  return *c;
}

}  // namespace

Scalar semiring_add(SemiringKind k, const Scalar& a, const Scalar& b) {
  Scalar x = carrier(k, a), y = carrier(k, b);
  switch (k) {
    case SemiringKind::Boolean: return std::get<bool>(x) || std::get<bool>(y);
    case SemiringKind::Natural:
      return std::get<std::int64_t>(x) + std::get<std::int64_t>(y);
    case SemiringKind::Real: return std::get<double>(x) + std::get<double>(y);
  }
  return x;
}

Scalar semiring_mul(SemiringKind k, const Scalar& a, const Scalar& b) {
  Scalar x = carrier(k, a), y = carrier(k, b);
  switch (k) {
    case SemiringKind::Boolean: return std::get<bool>(x) && std::get<bool>(y);
    case SemiringKind::Natural:
      return std::get<std::int64_t>(x) * std::get<std::int64_t>(y);
    case SemiringKind::Real: return std::get<double>(x) * std::get<double>(y);
  }
  return x;
}

Scalar semiring_sub(SemiringKind k, const Scalar& a, const Scalar& b) {
  Scalar x = carrier(k, a), y = carrier(k, b);
  switch (k) {
    case SemiringKind::Boolean:
      return std::get<bool>(x) && !std::get<bool>(y);
    case SemiringKind::Natural: {
      auto d = std::get<std::int64_t>(x) - std::get<std::int64_t>(y);
      return d < 0 ? std::int64_t{0} : d;  // monus
    }
    case SemiringKind::Real: return std::get<double>(x) - std::get<double>(y);
  }
  return x;
}

bool is_semiring_zero(SemiringKind k, const Scalar& s) {
  auto c = to_carrier(k, s);
  if (!c) return false;
  switch (k) {
    case SemiringKind::Boolean: return !std::get<bool>(*c);
    case SemiringKind::Natural: return std::get<std::int64_t>(*c) == 0;
    case SemiringKind::Real: return std::get<double>(*c) == 0.0;
  }
  return false;
}

// -------------------------------------------------------------------- keys

bool scalar_less(const Scalar& a, const Scalar& b) {
  if (a.index() != b.index()) return a.index() < b.index();
  return std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        return x < std::get<T>(b);
      },
      a);
}

bool KeyLess::operator()(const Key& a, const Key& b) const {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                      scalar_less);
}

std::string print_key(const Key& k) {
  std::string out;
  for (size_t i = 0; i < k.size(); ++i) {
    if (i) out += ", ";
    out += print_scalar(k[i]);
  }
  return out;
}

const char* to_string(LayoutKind k) {
  switch (k) {
    case LayoutKind::FlatHash: return "flat-hash";
    case LayoutKind::Trie: return "trie";
    case LayoutKind::Ordered: return "ordered";
    case LayoutKind::Dense: return "dense";
  }
  return "?";
}

// ---------------------------------------------------------------- relation

RelationValue::RelationValue(std::vector<int> levels, SemiringKind semiring,
                             LayoutKind layout)
    : levels_(std::move(levels)), semiring_(semiring), layout_(layout) {
  if (levels_.empty()) throw std::invalid_argument("relation needs >= 1 level");
}

RelPtr RelationValue::make_dense(std::vector<std::size_t> shape,
                                 std::vector<int> levels) {
  int total = std::accumulate(levels.begin(), levels.end(), 0);
  if (static_cast<std::size_t>(total) != shape.size())
    throw std::invalid_argument("dense levels do not cover the shape");
  auto r = RelPtr(new RelationValue());
  r->levels_ = std::move(levels);
  r->semiring_ = SemiringKind::Real;
  r->layout_ = LayoutKind::Dense;
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  r->dense_ = std::make_shared<std::vector<double>>(n, 0.0);
  r->shape_ = std::move(shape);
  return r;
}

int RelationValue::total_arity() const {
  return std::accumulate(levels_.begin(), levels_.end(), 0);
}

bool RelationValue::empty() const { return entry_count() == 0; }

std::size_t RelationValue::entry_count() const {
  std::size_t n = 0;
  for_each_flat([&](const Key&, const Scalar&) { ++n; });
  return n;
}

std::size_t RelationValue::level_size() const {
  if (dense_) {
    std::size_t n = 0;
    for_each([&](const Key&, ConstRelPtr, const Scalar*) { ++n; });
    return n;
  }
  return depth() > 1 ? children_.size() : payloads_.size();
}

// Row-major index of `key` within the first `arity` dimensions; throws
// std::out_of_range for non-integer or out-of-shape components.
std::size_t RelationValue::dense_index(const Key& key, int arity) const {
  std::size_t idx = 0;
  for (int d = 0; d < arity; ++d) {
    const auto* i = std::get_if<std::int64_t>(&key[d]);
    if (!i || *i < 0 || static_cast<std::size_t>(*i) >= shape_[d])
      throw std::out_of_range("dense key " + print_key(key) +
                              " outside declared shape");
    idx = idx * shape_[d] + static_cast<std::size_t>(*i);
  }
  // Scale by the remaining dimensions this index prefixes.
  for (std::size_t d = arity; d < shape_.size(); ++d) idx *= shape_[d];
  return idx;
}

void RelationValue::merge(const Key& fullKey, const Scalar& value) {
  if (static_cast<int>(fullKey.size()) != total_arity())
    throw std::invalid_argument("key arity mismatch on merge");
  if (dense_) {
    auto c = to_carrier(SemiringKind::Real, value);
    if (!c) carrier_error(SemiringKind::Real, value);
    (*dense_)[offset_ + dense_index(fullKey, total_arity())] +=
        std::get<double>(*c);
    return;
  }
  if (depth() == 1) {
    Scalar v = carrier(semiring_, value);
    auto it = payloads_.find(fullKey);
    if (it == payloads_.end()) {
      if (!is_semiring_zero(semiring_, v)) payloads_.emplace(fullKey, v);
      return;
    }
    it->second = semiring_add(semiring_, it->second, v);
    if (is_semiring_zero(semiring_, it->second)) payloads_.erase(it);
    return;
  }
  Key head(fullKey.begin(), fullKey.begin() + level_arity());
  Key tail(fullKey.begin() + level_arity(), fullKey.end());
  auto it = children_.find(head);
  if (it == children_.end()) {
    auto child = std::make_shared<RelationValue>(
        std::vector<int>(levels_.begin() + 1, levels_.end()), semiring_,
        layout_ == LayoutKind::Ordered ? LayoutKind::Ordered
                                       : LayoutKind::Trie);
    it = children_.emplace(head, std::move(child)).first;
  }
  it->second->merge(tail, value);
  if (it->second->empty()) children_.erase(it);
}

void RelationValue::subtract(const Key& fullKey, const Scalar& value) {
  if (dense_) {
    auto c = to_carrier(SemiringKind::Real, value);
    if (!c) carrier_error(SemiringKind::Real, value);
    (*dense_)[offset_ + dense_index(fullKey, total_arity())] -=
        std::get<double>(*c);
    return;
  }
  if (depth() == 1) {
    auto it = payloads_.find(fullKey);
    Scalar old =
        it == payloads_.end() ? semiring_zero(semiring_) : it->second;
    Scalar now = semiring_sub(semiring_, old, carrier(semiring_, value));
    if (is_semiring_zero(semiring_, now)) {
      if (it != payloads_.end()) payloads_.erase(it);
    } else if (it != payloads_.end()) {
      it->second = now;
    } else {
      payloads_.emplace(fullKey, now);  // e.g. 0 - v under the real semiring
    }
    return;
  }
  Key head(fullKey.begin(), fullKey.begin() + level_arity());
  Key tail(fullKey.begin() + level_arity(), fullKey.end());
  auto it = children_.find(head);
  if (it == children_.end()) {
    Scalar fromZero =
        semiring_sub(semiring_, semiring_zero(semiring_), value);
    if (is_semiring_zero(semiring_, fromZero)) return;
    auto child = std::make_shared<RelationValue>(
        std::vector<int>(levels_.begin() + 1, levels_.end()), semiring_,
        layout_ == LayoutKind::Ordered ? LayoutKind::Ordered
                                       : LayoutKind::Trie);
    it = children_.emplace(head, std::move(child)).first;
  }
  it->second->subtract(tail, value);
  if (it->second->empty()) children_.erase(it);
}

void RelationValue::erase_key(const Key& fullKey) {
  if (dense_) {
    (*dense_)[offset_ + dense_index(fullKey, total_arity())] = 0.0;
    return;
  }
  if (depth() == 1) {
    payloads_.erase(fullKey);
    return;
  }
  Key head(fullKey.begin(), fullKey.begin() + level_arity());
  Key tail(fullKey.begin() + level_arity(), fullKey.end());
  auto it = children_.find(head);
  if (it == children_.end()) return;
  it->second->erase_key(tail);
  if (it->second->empty()) children_.erase(it);
}

void RelationValue::clear() {
  children_.clear();
  payloads_.clear();
  if (dense_) {
    std::size_t n = 1;
    for (auto d : shape_) n *= d;
    std::fill(dense_->begin() + offset_, dense_->begin() + offset_ + n, 0.0);
  }
}

ConstRelPtr RelationValue::sub(const Key& levelKey) const {
  if (depth() <= 1) return nullptr;
  if (dense_) {
    std::size_t off;
    try {
      off = offset_ + dense_index(levelKey, level_arity());
    } catch (const std::out_of_range&) {
      return nullptr;
    }
    auto view = RelPtr(new RelationValue());
    view->levels_.assign(levels_.begin() + 1, levels_.end());
    view->semiring_ = SemiringKind::Real;
    view->layout_ = LayoutKind::Dense;
    view->dense_ = dense_;
    view->shape_.assign(shape_.begin() + level_arity(), shape_.end());
    view->offset_ = off;
    return view;
  }
  auto it = children_.find(levelKey);
  return it == children_.end() ? nullptr : it->second;
}

Scalar RelationValue::payload_or_zero(const Key& levelKey) const {
  if (dense_) {
    try {
      return (*dense_)[offset_ + dense_index(levelKey, level_arity())];
    } catch (const std::out_of_range&) {
      return 0.0;
    }
  }
  auto it = payloads_.find(levelKey);
  return it == payloads_.end() ? semiring_zero(semiring_) : it->second;
}

bool RelationValue::contains(const Key& levelKey) const {
  if (dense_) {
    if (depth() == 1)
      return !is_semiring_zero(SemiringKind::Real, payload_or_zero(levelKey));
    auto s = sub(levelKey);
    return s && !s->empty();
  }
  return depth() > 1 ? children_.count(levelKey) > 0
                     : payloads_.count(levelKey) > 0;
}

void RelationValue::for_each(
    const std::function<void(const Key&, ConstRelPtr, const Scalar*)>& fn)
    const {
  if (dense_) {
    // Enumerate this level's key space row-major (ascending), skipping
    // empty slices / zero cells.
    int arity = level_arity();
    Key key(arity, std::int64_t{0});
    std::function<void(int)> walk = [&](int d) {
      if (d == arity) {
        if (depth() == 1) {
          Scalar v = payload_or_zero(key);
          if (!is_semiring_zero(SemiringKind::Real, v)) fn(key, nullptr, &v);
        } else {
          auto child = sub(key);
          if (child && !child->empty()) fn(key, child, nullptr);
        }
        return;
      }
      for (std::size_t i = 0; i < shape_[d]; ++i) {
        key[d] = static_cast<std::int64_t>(i);
        walk(d + 1);
      }
    };
    walk(0);
    return;
  }
  if (depth() > 1) {
    for (const auto& [k, child] : children_) fn(k, child, nullptr);
  } else {
    for (const auto& [k, v] : payloads_) fn(k, nullptr, &v);
  }
}

bool RelationValue::for_each_while(
    const std::function<bool(const Key&, ConstRelPtr, const Scalar*)>& fn)
    const {
  if (dense_) {
    int arity = level_arity();
    Key key(arity, std::int64_t{0});
    std::function<bool(int)> walk = [&](int d) -> bool {
      if (d == arity) {
        if (depth() == 1) {
          Scalar v = payload_or_zero(key);
          if (!is_semiring_zero(SemiringKind::Real, v))
            return fn(key, nullptr, &v);
          return true;
        }
        auto child = sub(key);
        if (child && !child->empty()) return fn(key, child, nullptr);
        return true;
      }
      for (std::size_t i = 0; i < shape_[d]; ++i) {
        key[d] = static_cast<std::int64_t>(i);
        if (!walk(d + 1)) return false;
      }
      return true;
    };
    return walk(0);
  }
  if (depth() > 1) {
    for (const auto& [k, child] : children_)
      if (!fn(k, child, nullptr)) return false;
  } else {
    for (const auto& [k, v] : payloads_)
      if (!fn(k, nullptr, &v)) return false;
  }
  return true;
}

void RelationValue::for_each_flat(
    const std::function<void(const Key&, const Scalar&)>& fn) const {
  Key prefix;
  std::function<void(const RelationValue&)> walk = [&](const RelationValue& r) {
    r.for_each([&](const Key& k, ConstRelPtr child, const Scalar* payload) {
      size_t mark = prefix.size();
      prefix.insert(prefix.end(), k.begin(), k.end());
      if (payload)
        fn(prefix, *payload);
      else
        walk(*child);
      prefix.resize(mark);
    });
  };
  walk(*this);
}

std::vector<std::pair<Key, Scalar>> RelationValue::entries_flat() const {
  std::vector<std::pair<Key, Scalar>> out;
  for_each_flat([&](const Key& k, const Scalar& v) { out.emplace_back(k, v); });
  return out;
}

void RelationValue::for_each_dense(
    const std::function<void(const Key&, double)>& fn) const {
  if (!dense_) return;
  int arity = total_arity();
  Key key(arity, std::int64_t{0});
  std::function<void(int)> walk = [&](int d) {
    if (d == arity) {
      fn(key, (*dense_)[offset_ + dense_index(key, arity)]);
      return;
    }
    for (std::size_t i = 0; i < shape_[d]; ++i) {
      key[d] = static_cast<std::int64_t>(i);
      walk(d + 1);
    }
  };
  walk(0);
}

double RelationValue::dense_at(const Key& fullKey) const {
  if (!dense_) return 0.0;
  try {
    return (*dense_)[offset_ + dense_index(fullKey, total_arity())];
  } catch (const std::out_of_range&) {
    return 0.0;
  }
}

bool RelationValue::logically_equal(const RelationValue& other,
                                    double eps) const {
  auto a = entries_flat(), b = other.entries_flat();
  if (a.size() != b.size()) return false;
  KeyLess less;
  for (size_t i = 0; i < a.size(); ++i) {
    if (less(a[i].first, b[i].first) || less(b[i].first, a[i].first))
      return false;
    const Scalar &x = a[i].second, &y = b[i].second;
    const auto *dx = std::get_if<double>(&x), *dy = std::get_if<double>(&y);
    if (dx && dy) {
      if (std::abs(*dx - *dy) > eps) return false;
    } else if (!(x == y)) {
      return false;
    }
  }
  return true;
}

RelPtr RelationValue::clone() const {
  auto r = RelPtr(new RelationValue());
  r->levels_ = levels_;
  r->semiring_ = semiring_;
  r->layout_ = layout_;
  r->shape_ = shape_;
  r->offset_ = 0;
  if (dense_) {
    // Copy only the region this node covers (the whole buffer for roots).
    std::size_t n = 1;
    for (auto d : shape_) n *= d;
    r->dense_ = std::make_shared<std::vector<double>>(
        dense_->begin() + offset_, dense_->begin() + offset_ + n);
  } else {
    r->payloads_ = payloads_;
    for (const auto& [k, child] : children_) r->children_[k] = child->clone();
  }
  return r;
}

Result<RelPtr> build_layout(const RelationValue& rel,
                            const std::vector<int>& perm,
                            std::vector<int> levels, LayoutKind layout,
                            std::vector<std::size_t> shape) {
  int total = std::accumulate(levels.begin(), levels.end(), 0);
  if (perm.size() != static_cast<size_t>(rel.total_arity()) ||
      total != rel.total_arity())
    return error(diag::BadData, "layout target arity mismatch");
  RelPtr out;
  if (layout == LayoutKind::Dense) {
    if (rel.semiring() != SemiringKind::Real)
      return error(diag::BadData, "dense layout requires the real semiring");
    if (shape.size() != static_cast<size_t>(total))
      return error(diag::BadData, "dense layout requires a full shape");
    out = RelationValue::make_dense(std::move(shape), std::move(levels));
  } else {
    out = std::make_shared<RelationValue>(std::move(levels), rel.semiring(),
                                          layout);
  }
  bool failed = false;
  std::string message;
  rel.for_each_flat([&](const Key& k, const Scalar& v) {
    if (failed) return;
    Key permuted(k.size());
    for (size_t i = 0; i < perm.size(); ++i) permuted[i] = k[perm[i]];
    try {
      out->merge(permuted, v);
    } catch (const std::exception& e) {
      failed = true;
      message = e.what();
    }
  });
  if (failed) return error(diag::BadData, message);
  return out;
}

RelationSchema schema_of(const RelationValue& rel) {
  RelationSchema s;
  s.levels = rel.levels();
  s.semiring = rel.semiring();
  s.layout = rel.layout();
  s.shape = rel.shape();
  return s;
}

// ---------------------------------------------------------------- database

bool Database::has(const std::string& name) const {
  return relations_.count(name) > 0;
}

ConstRelPtr Database::relation(const std::string& name) const {
  auto it = relations_.find(name);
  return it == relations_.end() ? nullptr : it->second;
}

const RelationSchema* Database::schema(const std::string& name) const {
  auto it = schemas_.find(name);
  return it == schemas_.end() ? nullptr : &it->second;
}

void Database::install(const std::string& name, RelPtr rel,
                       RelationSchema schema) {
  relations_[name] = std::move(rel);
  schemas_[name] = std::move(schema);
}

void Database::install(const std::string& name, RelPtr rel) {
  auto s = schema_of(*rel);
  auto it = schemas_.find(name);
  if (it != schemas_.end()) s.attrs = it->second.attrs;
  install(name, std::move(rel), std::move(s));
}

void Database::drop(const std::string& name) {
  relations_.erase(name);
  schemas_.erase(name);
}

std::vector<std::string> Database::names() const {
  std::vector<std::string> out;
  out.reserve(relations_.size());
  for (const auto& [k, v] : relations_) out.push_back(k);
  return out;
}

}  // namespace hojabr
