#pragma once

// Data interchange.
//
// CSV: one flat relation per file; the header row names attributes; an
// optional trailing `__val` column carries payloads (bool -> set,
// integer -> bag, float -> tensor; no `__val` -> set). Dense tensors:
// JSON {"shape": [...], "data": [...]} row-major. CSR matrices: JSON
// {"n": ..., "P": [...], "I": [...], "V": [...]}, loaded as the four
// relations n/P/I/V that the CSR decoding rule reads.
//
// A manifest bundles a database: {"relations": [{"name", "format":
// "csv"|"dense"|"csr", "path" or inline "text", optional "semiring",
// "levels"}...], "declarations": ["card(R, 2)", ...]}. Relative paths
// resolve against the manifest's directory.
//
// All dumps enumerate keys in full-key lexicographic order, so identical
// contents produce byte-identical output.

#include <string>
#include <string_view>
#include <vector>

#include "hojabr/relation.hpp"

namespace hojabr {

struct LoadedRelation {
  std::string name;
  RelPtr rel;
  RelationSchema schema;
};

// `declared` overrides the semiring / levels inferred from the data.
Result<LoadedRelation> load_csv(const std::string& name, std::string_view text,
                                const RelationSchema* declared = nullptr);
Result<LoadedRelation> load_dense_json(const std::string& name,
                                       std::string_view text,
                                       std::vector<int> levels = {});
// Produces the four CSR-component relations n, P, I, V.
Result<std::vector<LoadedRelation>> load_csr_json(std::string_view text);

Result<Database> load_manifest(std::string_view json,
                               const std::string& baseDir);
Result<Database> load_manifest_file(const std::string& path);

// "(k1, k2) -> payload" lines, sorted; debugging and test comparisons.
std::string dump_relation(const RelationValue& rel);
// Header + rows; attrs fall back to k0..kN-1; `__val` appended for
// non-boolean payloads.
std::string dump_csv(const RelationValue& rel,
                     const std::vector<std::string>& attrs = {});
std::string dump_dense_json(const RelationValue& rel);  // dense only

struct CsrArrays {
  std::int64_t n = 0;
  std::vector<std::int64_t> P, I;
  std::vector<double> V;
};

// COO view of a real-valued tensor: boolean relation whose keys are the
// tensor indices plus the value as the final column (zeros omitted).
RelPtr to_coo(const RelationValue& tensor);
// CSR arrays of a 2-d real-valued tensor (dense or sparse storage).
Result<CsrArrays> to_csr(const RelationValue& matrix);
std::vector<LoadedRelation> csr_relations(const CsrArrays& csr);
std::string csr_to_json(const CsrArrays& csr);

Result<std::string> read_file(const std::string& path);

}  // namespace hojabr
