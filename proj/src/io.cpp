#include "hojabr/io.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hojabr/syntax.hpp"

namespace hojabr {

namespace {

using nlohmann::json;

// ------------------------------------------------------------------- CSV

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

// int64 first, then float, then booleans; everything else is a string.
Scalar parse_cell(const std::string& raw) {
  if (!raw.empty()) {
    std::int64_t i;
    auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), i);
    if (ec == std::errc() && p == raw.data() + raw.size()) return i;
    char* end = nullptr;
    double d = std::strtod(raw.c_str(), &end);
    if (end == raw.c_str() + raw.size()) return d;
  }
  if (raw == "true") return true;
  if (raw == "false") return false;
  return raw;
}

std::string csv_cell(const Scalar& s) {
  if (const auto* str = std::get_if<std::string>(&s)) {
    bool needsQuote = str->find_first_of(",\"\n") != std::string::npos;
    if (!needsQuote) return *str;
    std::string out = "\"";
    for (char c : *str) {
      if (c == '"') out += "\"\"";
      else out += c;
    }
    return out + "\"";
  }
  if (const auto* d = std::get_if<double>(&s)) return print_scalar(*d);
  if (const auto* i = std::get_if<std::int64_t>(&s)) return std::to_string(*i);
  return std::get<bool>(s) ? "true" : "false";
}

}  // namespace

Result<LoadedRelation> load_csv(const std::string& name, std::string_view text,
                                const RelationSchema* declared) {
  std::vector<std::string> lines;
  {
    std::string cur;
    for (char c : text) {
      if (c == '\n') {
        if (!cur.empty() && cur.back() == '\r') cur.pop_back();
        lines.push_back(std::move(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) {
      if (cur.back() == '\r') cur.pop_back();
      lines.push_back(std::move(cur));
    }
  }
  if (lines.empty())
    return error(diag::BadData, "relation " + name + ": empty CSV (no header)");
  auto header = split_csv_line(lines[0]);
  bool hasVal = !header.empty() && header.back() == "__val";
  int keyArity = static_cast<int>(header.size()) - (hasVal ? 1 : 0);

  // Parse all rows first so the payload semiring can be inferred.
  std::vector<std::pair<Key, Scalar>> rows;
  SemiringKind semiring = SemiringKind::Boolean;
  bool sawFloat = false, sawInt = false, sawBool = false;
  for (size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    auto cells = split_csv_line(lines[ln]);
    if (static_cast<int>(cells.size()) != keyArity + (hasVal ? 1 : 0))
      return error(diag::BadData,
                   "relation " + name + ": row " + std::to_string(ln + 1) +
                       " has " + std::to_string(cells.size()) +
                       " fields, header has " + std::to_string(header.size()));
    Key key;
    for (int i = 0; i < keyArity; ++i) key.push_back(parse_cell(cells[i]));
    Scalar payload{true};
    if (hasVal) {
      payload = parse_cell(cells.back());
      if (std::holds_alternative<double>(payload)) sawFloat = true;
      else if (std::holds_alternative<std::int64_t>(payload)) sawInt = true;
      else if (std::holds_alternative<bool>(payload)) sawBool = true;
      else
        return error(diag::BadData, "relation " + name +
                                        ": __val must be numeric or boolean");
    }
    rows.emplace_back(std::move(key), std::move(payload));
  }
  if (hasVal) {
    if (sawBool && (sawFloat || sawInt))
      return error(diag::BadData,
                   "relation " + name + ": mixed boolean and numeric __val");
    semiring = sawBool ? SemiringKind::Boolean
               : sawFloat ? SemiringKind::Real
                          : SemiringKind::Natural;
  }

  RelationSchema schema;
  schema.levels = {keyArity};
  schema.semiring = semiring;
  for (int i = 0; i < keyArity; ++i) schema.attrs.push_back(header[i]);
  if (declared) {
    if (declared->semiring == SemiringKind::Real ||
        (declared->semiring == SemiringKind::Natural && !sawFloat) ||
        (declared->semiring == SemiringKind::Boolean && !hasVal))
      schema.semiring = declared->semiring;
    else if (declared->semiring != schema.semiring)
      return error(diag::BadData, "relation " + name + ": declared " +
                                      to_string(declared->semiring) +
                                      " semiring does not fit the data");
    if (!declared->levels.empty()) {
      int total = 0;
      for (int a : declared->levels) total += a;
      if (total != keyArity)
        return error(diag::BadData,
                     "relation " + name + ": declared levels cover " +
                         std::to_string(total) + " columns, data has " +
                         std::to_string(keyArity));
      schema.levels = declared->levels;
      schema.layout = declared->layout;
    }
  }

  auto rel = std::make_shared<RelationValue>(schema.levels, schema.semiring,
                                             schema.layout);
  for (auto& [key, payload] : rows) {
    auto c = to_carrier(schema.semiring,
                        schema.semiring == SemiringKind::Boolean && !hasVal
                            ? Scalar{true}
                            : payload);
    if (!c)
      return error(diag::BadData,
                   "relation " + name + ": payload " + print_scalar(payload) +
                       " does not fit the " + to_string(schema.semiring) +
                       " semiring");
    rel->merge(key, *c);
  }
  return LoadedRelation{name, std::move(rel), std::move(schema)};
}

// ------------------------------------------------------------------ JSON

Result<LoadedRelation> load_dense_json(const std::string& name,
                                       std::string_view text,
                                       std::vector<int> levels) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("shape") ||
      !j.contains("data"))
    return error(diag::BadData,
                 "tensor " + name + ": expected {\"shape\", \"data\"}");
  std::vector<std::size_t> shape;
  std::size_t total = 1;
  for (const auto& d : j["shape"]) {
    if (!d.is_number_unsigned() || d.get<std::size_t>() == 0)
      return error(diag::BadData,
                   "tensor " + name + ": shape must be positive integers");
    shape.push_back(d.get<std::size_t>());
    total *= shape.back();
  }
  if (shape.empty())
    return error(diag::BadData, "tensor " + name + ": empty shape");
  if (!j["data"].is_array() || j["data"].size() != total)
    return error(diag::BadData, "tensor " + name + ": data length " +
                                    std::to_string(j["data"].size()) +
                                    " != shape product " +
                                    std::to_string(total));
  if (levels.empty()) levels.assign(shape.size(), 1);
  RelPtr rel;
  try {
    rel = RelationValue::make_dense(shape, levels);
  } catch (const std::exception& e) {
    return error(diag::BadData, "tensor " + name + ": " + e.what());
  }
  // Fill row-major.
  std::size_t idx = 0;
  Key key(shape.size(), std::int64_t{0});
  bool bad = false;
  std::function<void(std::size_t)> walk = [&](std::size_t d) {
    if (bad) return;
    if (d == shape.size()) {
      const auto& cell = j["data"][idx++];
      if (!cell.is_number()) {
        bad = true;
        return;
      }
      double v = cell.get<double>();
      if (v != 0.0) rel->merge(key, v);
      return;
    }
    for (std::size_t i = 0; i < shape[d]; ++i) {
      key[d] = static_cast<std::int64_t>(i);
      walk(d + 1);
    }
  };
  walk(0);
  if (bad)
    return error(diag::BadData, "tensor " + name + ": non-numeric data cell");
  RelationSchema schema = schema_of(*rel);
  return LoadedRelation{name, std::move(rel), std::move(schema)};
}

std::vector<LoadedRelation> csr_relations(const CsrArrays& csr) {
  std::vector<LoadedRelation> out;
  auto scalarRel = std::make_shared<RelationValue>(std::vector<int>{0},
                                                   SemiringKind::Natural);
  scalarRel->merge({}, csr.n);
  out.push_back({"n", scalarRel, schema_of(*scalarRel)});
  auto arr = [&](const char* name, const auto& values, SemiringKind k) {
    auto rel = std::make_shared<RelationValue>(std::vector<int>{1}, k);
    for (std::size_t i = 0; i < values.size(); ++i)
      rel->merge({static_cast<std::int64_t>(i)}, Scalar{values[i]});
    RelationSchema s = schema_of(*rel);
    s.attrs = {"p"};
    out.push_back({name, std::move(rel), std::move(s)});
  };
  arr("P", csr.P, SemiringKind::Natural);
  arr("I", csr.I, SemiringKind::Natural);
  arr("V", csr.V, SemiringKind::Real);
  return out;
}

Result<std::vector<LoadedRelation>> load_csr_json(std::string_view text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("n") ||
      !j.contains("P") || !j.contains("I") || !j.contains("V"))
    return error(diag::BadData, "CSR tensor: expected {\"n\",\"P\",\"I\",\"V\"}");
  CsrArrays csr;
  if (!j["n"].is_number_integer())
    return error(diag::BadData, "CSR tensor: n must be an integer");
  csr.n = j["n"].get<std::int64_t>();
  for (const auto& v : j["P"]) {
    if (!v.is_number_integer())
      return error(diag::BadData, "CSR tensor: P must hold integers");
    csr.P.push_back(v.get<std::int64_t>());
  }
  for (const auto& v : j["I"]) {
    if (!v.is_number_integer())
      return error(diag::BadData, "CSR tensor: I must hold integers");
    csr.I.push_back(v.get<std::int64_t>());
  }
  for (const auto& v : j["V"]) {
    if (!v.is_number())
      return error(diag::BadData, "CSR tensor: V must hold numbers");
    csr.V.push_back(v.get<double>());
  }
  if (csr.P.size() != static_cast<std::size_t>(csr.n) + 1 ||
      csr.I.size() != csr.V.size() ||
      (csr.n >= 0 && csr.P.back() != static_cast<std::int64_t>(csr.I.size())))
    return error(diag::BadData, "CSR tensor: inconsistent array lengths");
  return csr_relations(csr);
}

// -------------------------------------------------------------- manifest

Result<Database> load_manifest(std::string_view text,
                               const std::string& baseDir) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    return error(diag::BadManifest, "manifest is not a JSON object");
  Database db;
  std::vector<Diagnostic> warnings;
  for (const auto& entry : j.value("relations", json::array())) {
    if (!entry.is_object())
      return error(diag::BadManifest, "relation entry is not an object");
    std::string format = entry.value("format", "csv");
    std::string name = entry.value("name", "");
    if (name.empty() && format != "csr")
      return error(diag::BadManifest, "relation entry without a name");
    std::string text2;
    if (entry.contains("text")) {
      text2 = entry["text"].get<std::string>();
    } else if (entry.contains("path")) {
      std::filesystem::path p = entry["path"].get<std::string>();
      if (p.is_relative() && !baseDir.empty())
        p = std::filesystem::path(baseDir) / p;
      auto content = read_file(p.string());
      if (!content) return content.errors();
      text2 = content.take();
    } else {
      return error(diag::BadManifest,
                   "relation entry needs \"path\" or \"text\"");
    }
    RelationSchema declared;
    bool haveDeclared = false;
    if (entry.contains("semiring")) {
      auto k = semiring_from_string(entry["semiring"].get<std::string>());
      if (!k)
        return error(diag::BadManifest,
                     "unknown semiring " + entry["semiring"].dump());
      declared.semiring = *k;
      haveDeclared = true;
    }
    std::vector<int> levels;
    if (entry.contains("levels")) {
      for (const auto& a : entry["levels"]) levels.push_back(a.get<int>());
      declared.levels = levels;
      declared.layout = levels.size() > 1 ? LayoutKind::Trie
                                          : LayoutKind::FlatHash;
      haveDeclared = true;
    } else {
      declared.levels.clear();
    }

    if (format == "csv") {
      auto loaded = load_csv(name, text2, haveDeclared ? &declared : nullptr);
      if (!loaded) return loaded.errors();
      auto lr = loaded.take();
      db.install(lr.name, lr.rel, lr.schema);
    } else if (format == "dense") {
      auto loaded = load_dense_json(name, text2, levels);
      if (!loaded) return loaded.errors();
      auto lr = loaded.take();
      db.install(lr.name, lr.rel, lr.schema);
    } else if (format == "csr") {
      auto loaded = load_csr_json(text2);
      if (!loaded) return loaded.errors();
      for (auto& lr : loaded.take()) db.install(lr.name, lr.rel, lr.schema);
    } else {
      return error(diag::BadManifest, "unknown format \"" + format + "\"");
    }
  }
  for (const auto& d : j.value("declarations", json::array())) {
    if (!d.is_string())
      return error(diag::BadManifest, "declarations must be strings");
    auto parsed = parse(d.get<std::string>());
    if (!parsed)
      return error(diag::BadManifest,
                   "bad declaration " + d.dump() + ": " +
                       parsed.errors()[0].message);
    if (!parsed.value().rules.empty())
      return error(diag::BadManifest,
                   "declaration " + d.dump() + " contains rules");
    for (const auto& decl : parsed.value().declarations)
      db.add_declaration(decl);
  }
  return db;
}

Result<Database> load_manifest_file(const std::string& path) {
  auto text = read_file(path);
  if (!text) return text.errors();
  return load_manifest(text.value(),
                       std::filesystem::path(path).parent_path().string());
}

// ----------------------------------------------------------------- dumps

std::string dump_relation(const RelationValue& rel) {
  std::ostringstream os;
  rel.for_each_flat([&](const Key& k, const Scalar& v) {
    os << "(" << print_key(k) << ") -> " << print_scalar(v) << "\n";
  });
  return os.str();
}

std::string dump_csv(const RelationValue& rel,
                     const std::vector<std::string>& attrs) {
  std::ostringstream os;
  int arity = rel.total_arity();
  for (int i = 0; i < arity; ++i) {
    if (i) os << ",";
    os << (i < static_cast<int>(attrs.size()) ? attrs[i]
                                              : "k" + std::to_string(i));
  }
  bool hasVal = rel.semiring() != SemiringKind::Boolean;
  if (hasVal) {
    if (arity) os << ",";
    os << "__val";
  }
  os << "\n";
  rel.for_each_flat([&](const Key& k, const Scalar& v) {
    for (size_t i = 0; i < k.size(); ++i) {
      if (i) os << ",";
      os << csv_cell(k[i]);
    }
    if (hasVal) {
      if (!k.empty()) os << ",";
      os << csv_cell(v);
    }
    os << "\n";
  });
  return os.str();
}

std::string dump_dense_json(const RelationValue& rel) {
  json shape = json::array();
  for (auto d : rel.shape()) shape.push_back(d);
  json data = json::array();
  rel.for_each_dense([&](const Key&, double v) { data.push_back(v); });
  return json{{"shape", shape}, {"data", data}}.dump();
}

// ----------------------------------------------------- format conversions

RelPtr to_coo(const RelationValue& tensor) {
  auto out = std::make_shared<RelationValue>(
      std::vector<int>{tensor.total_arity() + 1}, SemiringKind::Boolean);
  tensor.for_each_flat([&](const Key& k, const Scalar& v) {
    Key key = k;
    auto c = to_carrier(SemiringKind::Real, v);
    key.push_back(c ? *c : v);
    out->merge(key, true);
  });
  return out;
}

Result<CsrArrays> to_csr(const RelationValue& matrix) {
  if (matrix.total_arity() != 2)
    return error(diag::BadData, "CSR requires an order-2 tensor");
  std::int64_t rows = 0;
  if (matrix.is_dense()) {
    rows = static_cast<std::int64_t>(matrix.shape()[0]);
  } else {
    matrix.for_each_flat([&](const Key& k, const Scalar&) {
      if (const auto* i = std::get_if<std::int64_t>(&k[0]))
        rows = std::max(rows, *i + 1);
    });
  }
  CsrArrays csr;
  csr.n = rows;
  csr.P.assign(static_cast<std::size_t>(rows) + 1, 0);
  bool bad = false;
  matrix.for_each_flat([&](const Key& k, const Scalar& v) {
    const auto* i = std::get_if<std::int64_t>(&k[0]);
    const auto* jj = std::get_if<std::int64_t>(&k[1]);
    auto c = to_carrier(SemiringKind::Real, v);
    if (!i || !jj || *i < 0 || *jj < 0 || !c) {
      bad = true;
      return;
    }
    // for_each_flat is sorted by (i, j), exactly CSR order.
    csr.P[static_cast<std::size_t>(*i) + 1]++;
    csr.I.push_back(*jj);
    csr.V.push_back(std::get<double>(*c));
  });
  if (bad)
    return error(diag::BadData,
                 "CSR requires non-negative integer keys and real values");
  for (std::size_t i = 1; i < csr.P.size(); ++i) csr.P[i] += csr.P[i - 1];
  return csr;
}

std::string csr_to_json(const CsrArrays& csr) {
  return json{{"n", csr.n}, {"P", csr.P}, {"I", csr.I}, {"V", csr.V}}.dump();
}

Result<std::string> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    return error(diag::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace hojabr
