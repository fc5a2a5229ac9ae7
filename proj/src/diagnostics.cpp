#include "hojabr/diagnostics.hpp"

#include <sstream>

namespace hojabr {

const char* to_string(Severity s) {
  switch (s) {
    case Severity::Error: return "error";
    case Severity::Warning: return "warning";
    case Severity::Note: return "note";
  }
  return "?";
}

Diagnostic error(std::string code, std::string message, std::string rule,
                 int line, int col) {
  return Diagnostic{Severity::Error, std::move(code), std::move(message),
                    std::move(rule), line, col};
}

Diagnostic warning(std::string code, std::string message, std::string rule,
                   int line, int col) {
  return Diagnostic{Severity::Warning, std::move(code), std::move(message),
                    std::move(rule), line, col};
}

bool has_errors(const Diagnostics& diags) {
  for (const auto& d : diags)
    if (d.severity == Severity::Error) return true;
  return false;
}

std::string format_diagnostic(const Diagnostic& d) {
  std::ostringstream os;
  os << to_string(d.severity) << "[" << d.code << "]: " << d.message;
  bool haveRule = !d.rule.empty();
  bool haveLoc = d.line > 0;
  if (haveRule || haveLoc) {
    os << " (";
    if (haveRule) os << "rule " << d.rule;
    if (haveRule && haveLoc) os << ", ";
    if (haveLoc) os << d.line << ":" << d.col;
    os << ")";
  }
  return os.str();
}

namespace {
void json_escape(std::ostringstream& os, const std::string& s) {
  os << '"';
  for (char c : s) {
    switch (c) {
      case '"': os << "\\\""; break;
      case '\\': os << "\\\\"; break;
      case '\n': os << "\\n"; break;
      case '\t': os << "\\t"; break;
      case '\r': os << "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          os << buf;
        } else {
          os << c;
        }
    }
  }
  os << '"';
}
}  // namespace

std::string diagnostics_to_json_lines(const Diagnostics& diags) {
  std::ostringstream os;
  for (const auto& d : diags) {
    os << "{\"severity\":";
    json_escape(os, to_string(d.severity));
    os << ",\"code\":";
    json_escape(os, d.code);
    os << ",\"message\":";
    json_escape(os, d.message);
    os << ",\"rule\":";
    json_escape(os, d.rule);
    os << ",\"line\":" << d.line << ",\"col\":" << d.col << "}\n";
  }
  return os.str();
}

}  // namespace hojabr
