#pragma once

// Text syntax: parser and pretty-printer for `.hjb` sources.
//
// Parsing is total: any byte sequence produces either a Program or
// diagnostics (never a crash). There is no error recovery — the first
// syntax error wins. `//` line comments and `{...}` block comments are
// discarded. Newlines are insignificant; a rule ends where its constraint
// does.
//
// print() emits one rule per line in canonical spacing and reproduces the
// parenthesization recorded on constraints, so parse∘print is the
// structural identity and print∘parse changes only whitespace/comments.

#include <string>
#include <string_view>

#include "hojabr/ast.hpp"
#include "hojabr/diagnostics.hpp"

namespace hojabr {

Result<Program> parse(std::string_view source);

std::string print(const Program& program);
std::string print(const Rule& rule);
std::string print(const ConstraintPtr& constraint);
std::string print(const ExprPtr& expr);
std::string print(const Access& access);

// Scalar printing used by the printer and the data dumps: floats always
// carry a decimal point or exponent so they re-parse as floats; strings
// are quoted and escaped.
std::string print_scalar(const Scalar& value);

// Compact single-line JSON rendering of the AST (CLI `parse` output).
std::string program_to_json(const Program& program);

}  // namespace hojabr
