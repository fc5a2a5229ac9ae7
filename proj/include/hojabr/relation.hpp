#pragma once

// Storage for higher-order semiring-annotated relations.
//
// A RelationValue is a nested mapping: each level consumes a fixed number
// of key components (levels()[i]) and maps key tuples either to
// sub-relations (inner levels) or to scalar payloads (last level). The
// payload semiring decides combination semantics: boolean = set, natural
// = bag, real = tensor. Zero payloads are never stored (zero-elision);
// neither are empty sub-relations.
//
// Sparse storage uses sorted maps, so every scan is deterministic and
// ordered layouts need no extra work. Dense storage is a shared row-major
// double buffer addressed by a declared rectangular shape; sub-relations
// are cheap views into the parent buffer.
//
// Values are built single-writer, then published to a Database as const
// snapshots and read concurrently.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hojabr/ast.hpp"
#include "hojabr/diagnostics.hpp"

namespace hojabr {

// ---------------------------------------------------------------- semiring

enum class SemiringKind { Boolean, Natural, Real };

const char* to_string(SemiringKind k);
std::optional<SemiringKind> semiring_from_string(const std::string& s);

Scalar semiring_zero(SemiringKind k);
Scalar semiring_one(SemiringKind k);
// add/mul require carrier-typed operands (bool/int64/double); integer
// operands are promoted to double under the real semiring. Anything else
// throws std::invalid_argument.
Scalar semiring_add(SemiringKind k, const Scalar& a, const Scalar& b);
Scalar semiring_mul(SemiringKind k, const Scalar& a, const Scalar& b);
// Subtraction used by `-=`: boolean removes, natural is saturating
// (monus), real subtracts.
Scalar semiring_sub(SemiringKind k, const Scalar& a, const Scalar& b);
bool is_semiring_zero(SemiringKind k, const Scalar& s);
// Coerce a scalar into the semiring carrier (int -> double under real);
// returns nullopt when the value cannot carry.
std::optional<Scalar> to_carrier(SemiringKind k, const Scalar& s);

// -------------------------------------------------------------------- keys

using Key = std::vector<Scalar>;

// Total order over scalars: by alternative (int < float < string < bool),
// then by value. Keys compare lexicographically.
bool scalar_less(const Scalar& a, const Scalar& b);

struct KeyLess {
  bool operator()(const Key& a, const Key& b) const;
};

std::string print_key(const Key& k);  // "1, 2" (print_scalar per component)

// ---------------------------------------------------------------- relation

enum class LayoutKind { FlatHash, Trie, Ordered, Dense };

const char* to_string(LayoutKind k);

class RelationValue;
using RelPtr = std::shared_ptr<RelationValue>;
using ConstRelPtr = std::shared_ptr<const RelationValue>;

class RelationValue {
 public:
  // Sparse relation; `levels` gives per-level key arities (>= 1 levels,
  // arities >= 0).
  RelationValue(std::vector<int> levels, SemiringKind semiring,
                LayoutKind layout = LayoutKind::FlatHash);

  // Dense real-valued relation over `shape`, split into levels of the
  // given arities (sum of levels == shape.size()); zero-initialized.
  static RelPtr make_dense(std::vector<std::size_t> shape,
                           std::vector<int> levels);

  int depth() const { return static_cast<int>(levels_.size()); }
  const std::vector<int>& levels() const { return levels_; }
  int level_arity() const { return levels_[0]; }
  int total_arity() const;
  SemiringKind semiring() const { return semiring_; }
  LayoutKind layout() const { return layout_; }
  void set_layout(LayoutKind k) { layout_ = k; }
  // Dense only: the shape of the key space from this node down.
  const std::vector<std::size_t>& shape() const { return shape_; }

  bool empty() const;
  std::size_t level_size() const;   // entries at this level (dense: nonzero)
  std::size_t entry_count() const;  // nonzero full-key entries

  // --- mutation (single-writer building phase) ---

  // add-combines `value` with the payload at `fullKey` (all levels),
  // creating intermediate sub-relations as needed; zero results are
  // elided. Throws std::invalid_argument on carrier mismatch and
  // std::out_of_range on dense shape violation.
  void merge(const Key& fullKey, const Scalar& value);
  // `-=`: removes (boolean) / monus-subtracts (natural) / subtracts (real).
  void subtract(const Key& fullKey, const Scalar& value);
  // Drops the entry at fullKey entirely regardless of payload.
  void erase_key(const Key& fullKey);
  void clear();

  // --- access ---

  // Sub-relation at a ground level key (depth > 1); null when absent.
  // Dense relations return a view sharing the parent's buffer.
  ConstRelPtr sub(const Key& levelKey) const;
  // Payload at a ground level key (depth == 1); zero when absent.
  Scalar payload_or_zero(const Key& levelKey) const;
  bool contains(const Key& levelKey) const;

  // --- iteration (sorted by key; deterministic) ---

  // Visits entries at this level: exactly one of `child`/`payload` is
  // non-null depending on depth. Dense relations skip zeros.
  void for_each(const std::function<void(const Key& key, ConstRelPtr child,
                                         const Scalar* payload)>& fn) const;
  // Same visit order, but stops (returning false) as soon as `fn` returns
  // false; returns true when every entry was visited.
  bool for_each_while(
      const std::function<bool(const Key& key, ConstRelPtr child,
                               const Scalar* payload)>& fn) const;
  // Full-key enumeration of nonzero entries, lexicographically sorted.
  void for_each_flat(
      const std::function<void(const Key& fullKey, const Scalar& payload)>& fn)
      const;
  std::vector<std::pair<Key, Scalar>> entries_flat() const;
  // Dense only: every in-shape cell including zeros, row-major.
  void for_each_dense(
      const std::function<void(const Key& fullKey, double value)>& fn) const;

  bool is_dense() const { return dense_ != nullptr; }
  double dense_at(const Key& fullKey) const;  // 0.0 outside / non-dense

  // Same key -> payload mapping (layout-independent); real payloads
  // compared within eps.
  bool logically_equal(const RelationValue& other, double eps = 0.0) const;

  RelPtr clone() const;

 private:
  RelationValue() = default;

  std::vector<int> levels_;
  SemiringKind semiring_ = SemiringKind::Boolean;
  LayoutKind layout_ = LayoutKind::FlatHash;

  // Sparse storage: children_ at inner levels, payloads_ at the last.
  std::map<Key, RelPtr, KeyLess> children_;
  std::map<Key, Scalar, KeyLess> payloads_;

  // Dense storage: shared row-major buffer; this node covers
  // buffer[offset_ .. offset_ + product(shape_)).
  std::shared_ptr<std::vector<double>> dense_;
  std::vector<std::size_t> shape_;
  std::size_t offset_ = 0;

  std::size_t dense_index(const Key& key, int arity) const;
};

// Rebuilds `rel` with columns permuted by `perm` (new column i = old
// column perm[i]) and regrouped into `levels`; `shape` required for the
// dense layout. The result holds the same key -> payload mapping modulo
// the permutation. Errors: dense key outside shape, non-integer dense
// keys.
Result<RelPtr> build_layout(const RelationValue& rel,
                            const std::vector<int>& perm,
                            std::vector<int> levels, LayoutKind layout,
                            std::vector<std::size_t> shape = {});

// ---------------------------------------------------------------- database

struct RelationSchema {
  std::vector<int> levels{1};
  SemiringKind semiring = SemiringKind::Boolean;
  LayoutKind layout = LayoutKind::FlatHash;
  std::vector<std::size_t> shape;  // dense only
  std::vector<std::string> attrs;  // flat column names when known (CSV)
};

RelationSchema schema_of(const RelationValue& rel);

class Database {
 public:
  bool has(const std::string& name) const;
  ConstRelPtr relation(const std::string& name) const;  // null when absent
  const RelationSchema* schema(const std::string& name) const;
  void install(const std::string& name, RelPtr rel, RelationSchema schema);
  void install(const std::string& name, RelPtr rel);
  void drop(const std::string& name);
  std::vector<std::string> names() const;  // sorted

  const std::vector<ConstraintPtr>& declarations() const { return decls_; }
  void add_declaration(ConstraintPtr d) { decls_.push_back(std::move(d)); }

 private:
  std::map<std::string, ConstRelPtr> relations_;
  std::map<std::string, RelationSchema> schemas_;
  std::vector<ConstraintPtr> decls_;
};

}  // namespace hojabr
