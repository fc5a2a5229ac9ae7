#pragma once

// Diagnostics carried by every fallible front-half operation (parse,
// desugar, check, lower, translate). Codes are stable strings asserted by
// tests and printable as JSON lines.

#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace hojabr {

enum class Severity { Error, Warning, Note };

const char* to_string(Severity s);

// Stable diagnostic codes.
namespace diag {
// syntax
inline constexpr const char* SyntaxError = "P001";
inline constexpr const char* ReservedKeyword = "P002";
inline constexpr const char* NestingTooDeep = "P003";
inline constexpr const char* BadLiteral = "P004";
// desugar
inline constexpr const char* DuplicateMatchCase = "D001";
// checking
inline constexpr const char* UnknownCei = "C001";
inline constexpr const char* UnknownEei = "C002";
inline constexpr const char* TypeConflict = "C003";
inline constexpr const char* KindError = "C004";
inline constexpr const char* Ungroundable = "C005";
inline constexpr const char* UnsafeNegation = "C006";
inline constexpr const char* Unstratifiable = "C007";
inline constexpr const char* ArityMismatch = "C008";
inline constexpr const char* BadAggregate = "C009";
inline constexpr const char* BadNestedRule = "C010";
inline constexpr const char* BadCeiUse = "C011";
inline constexpr const char* BadDeclaration = "C012";
inline constexpr const char* RealRecursion = "C013";
// integrity
inline constexpr const char* IntegrityFdep = "I001";
inline constexpr const char* IntegrityPkey = "I002";
inline constexpr const char* IntegrityUnique = "I003";
inline constexpr const char* IntegrityCard = "I004";
inline constexpr const char* IntegrityOrder = "I005";
// runtime
inline constexpr const char* DivisionByZero = "R001";
inline constexpr const char* NonTermination = "R002";
inline constexpr const char* RuntimeType = "R003";
inline constexpr const char* EmptyMedian = "R004";
inline constexpr const char* MissingRelation = "R005";
inline constexpr const char* ValuedDisjunctOverlap = "R006";
// slang / lowering
inline constexpr const char* SlangViolation = "S001";
inline constexpr const char* StrategyInapplicable = "S002";
inline constexpr const char* NotAnEncoding = "S003";
// frontends
inline constexpr const char* SqlUnsupported = "F001";
inline constexpr const char* SqlSyntax = "F002";
inline constexpr const char* EinsumUnsupported = "F003";
inline constexpr const char* EinsumSyntax = "F004";
inline constexpr const char* UnknownTable = "F005";
// io
inline constexpr const char* IoError = "X001";
inline constexpr const char* BadManifest = "X002";
inline constexpr const char* BadData = "X003";
}  // namespace diag

struct Diagnostic {
  Severity severity = Severity::Error;
  std::string code;
  std::string message;
  std::string rule;  // printable rule head or relation name, may be empty
  int line = 0;
  int col = 0;
};

using Diagnostics = std::vector<Diagnostic>;

Diagnostic error(std::string code, std::string message, std::string rule = "",
                 int line = 0, int col = 0);
Diagnostic warning(std::string code, std::string message, std::string rule = "",
                   int line = 0, int col = 0);

bool has_errors(const Diagnostics& diags);

// One human-readable line: `error[C005]: message (rule Q, 3:7)`.
std::string format_diagnostic(const Diagnostic& d);
// One JSON object per line: {"severity","code","message","rule","line","col"}.
std::string diagnostics_to_json_lines(const Diagnostics& diags);

// Result of a fallible operation: either a value or error diagnostics.
// Warnings may accompany a successful value.
template <typename T>
class Result {
 public:
  Result(T value) : value_(std::move(value)) {}  // NOLINT implicit
  Result(T value, Diagnostics warnings)
      : value_(std::move(value)), warnings_(std::move(warnings)) {}
  Result(Diagnostics errors) : errors_(std::move(errors)) {}  // NOLINT
  Result(Diagnostic error) { errors_.push_back(std::move(error)); }  // NOLINT

  bool ok() const { return value_.has_value(); }
  explicit operator bool() const { return ok(); }

  const T& value() const { return *value_; }
  T& value() { return *value_; }
  T take() { return std::move(*value_); }

  const Diagnostics& errors() const { return errors_; }
  const Diagnostics& warnings() const { return warnings_; }
  // All diagnostics, errors first.
  Diagnostics all_diagnostics() const {
    Diagnostics d = errors_;
    d.insert(d.end(), warnings_.begin(), warnings_.end());
    return d;
  }

 private:
  std::optional<T> value_;
  Diagnostics errors_;
  Diagnostics warnings_;
};

}  // namespace hojabr
