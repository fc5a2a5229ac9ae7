#include <cctype>
#include <charconv>
#include <cstdlib>
#include <optional>
#include <sstream>

#include "hojabr/syntax.hpp"

// Recursive-descent parser for the surface syntax.
//
// Precedence, loosest to tightest:
//   or < , < not < comparisons < + - < * / < unary minus
// `not` is call-shaped (`not(...)`), so its slot never matters in practice.
// Newlines are whitespace; a rule ends where its constraint expression
// does (conjuncts continue only after an explicit `,` / `or`).
//
// Ambiguities and how they are settled:
//  * `(` at constraint level: first try a nested rule (`(Rv := X(e))`),
//    then a parenthesized constraint, then an expression-led comparison
//    such as `(a+b) < c`. Full backtracking between attempts.
//  * `<-` lexes as one token; where a comparison operator is expected it
//    is split into `<` followed by a unary minus (`x<-3` is `x < -3`).
//  * A `match` case body parses at conjunction level and is ended by the
//    next `case`, a `;`, or the end of the enclosing constraint. Write
//    `(match ...)` to put further conjuncts after the whole block.

namespace hojabr {

namespace {

// ------------------------------------------------------------------ lexer

enum class Tok {
  End, Ident, Int, Float, String,
  // keywords with grammar productions
  KwIf, KwOr, KwNot, KwIn, KwTrue, KwFalse, KwMatch, KwCase,
  // punctuation / operators
  Define, PlusEq, MinusEq, ArrowLeft,           // := += -= <-
  Eq, Ne, Le, Ge, Lt, Gt,                       // = != <= >= < >
  Plus, Minus, Star, Slash,
  LParen, RParen, LBracket, RBracket,
  Comma, Colon, Arrow, Semi, Underscore,
};

struct Token {
  Tok kind = Tok::End;
  std::string text;     // identifier / string payload
  std::int64_t intVal = 0;
  double floatVal = 0;
  int line = 1, col = 1;
};

struct ParseError {
  Diagnostic diag;
};

[[noreturn]] void fail(std::string code, std::string msg, int line, int col) {
  throw ParseError{error(std::move(code), std::move(msg), "", line, col)};
}

// Keywords that occupy grammar productions.
std::optional<Tok> keyword_token(const std::string& s) {
  if (s == "if") return Tok::KwIf;
  if (s == "or") return Tok::KwOr;
  if (s == "not") return Tok::KwNot;
  if (s == "in") return Tok::KwIn;
  if (s == "true") return Tok::KwTrue;
  if (s == "false") return Tok::KwFalse;
  if (s == "match") return Tok::KwMatch;
  if (s == "case") return Tok::KwCase;
  return std::nullopt;
}

// Keywords reserved by the language without an implemented production.
bool is_reserved_unimplemented(const std::string& s) {
  return s == "while" || s == "limit" || s == "top" || s == "UID" ||
         s == "round" || s == "and";
}

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_trivia();
      Token t = next_token();
      out.push_back(t);
      if (t.kind == Tok::End) break;
    }
    return out;
  }

 private:
  std::string_view src_;
  size_t pos_ = 0;
  int line_ = 1, col_ = 1;

  char peek(size_t ahead = 0) const {
    return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
  }
  bool done() const { return pos_ >= src_.size(); }

  char advance() {
    char c = src_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  void skip_trivia() {
    for (;;) {
      if (done()) return;
      char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        advance();
      } else if (c == '/' && peek(1) == '/') {
        while (!done() && peek() != '\n') advance();
      } else if (c == '{') {
        int l = line_, co = col_;
        advance();
        while (!done() && peek() != '}') advance();
        if (done()) fail(diag::SyntaxError, "unterminated block comment", l, co);
        advance();  // '}'
      } else {
        return;
      }
    }
  }

  Token make(Tok kind, int line, int col) {
    Token t;
    t.kind = kind;
    t.line = line;
    t.col = col;
    return t;
  }

  Token next_token() {
    if (done()) return make(Tok::End, line_, col_);
    int line = line_, col = col_;
    char c = advance();

    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::string s(1, c);
      while (!done()) {
        char n = peek();
        if (std::isalnum(static_cast<unsigned char>(n)) || n == '_' || n == '\'') {
          s.push_back(advance());
        } else {
          break;
        }
      }
      if (auto kw = keyword_token(s)) return make(*kw, line, col);
      Token t = make(Tok::Ident, line, col);
      t.text = std::move(s);
      return t;
    }

    if (std::isdigit(static_cast<unsigned char>(c))) return lex_number(c, line, col);

    switch (c) {
      case '"': return lex_string(line, col);
      case '_': {
        char n = peek();
        if (std::isalnum(static_cast<unsigned char>(n)) || n == '_')
          fail(diag::SyntaxError, "identifiers must start with a letter", line, col);
        return make(Tok::Underscore, line, col);
      }
      case ':':
        if (peek() == '=') { advance(); return make(Tok::Define, line, col); }
        return make(Tok::Colon, line, col);
      case '+':
        if (peek() == '=') { advance(); return make(Tok::PlusEq, line, col); }
        return make(Tok::Plus, line, col);
      case '-':
        if (peek() == '=') { advance(); return make(Tok::MinusEq, line, col); }
        if (peek() == '>') { advance(); return make(Tok::Arrow, line, col); }
        return make(Tok::Minus, line, col);
      case '<':
        if (peek() == '-') { advance(); return make(Tok::ArrowLeft, line, col); }
        if (peek() == '=') { advance(); return make(Tok::Le, line, col); }
        return make(Tok::Lt, line, col);
      case '>':
        if (peek() == '=') { advance(); return make(Tok::Ge, line, col); }
        return make(Tok::Gt, line, col);
      case '!':
        if (peek() == '=') { advance(); return make(Tok::Ne, line, col); }
        fail(diag::SyntaxError, "stray '!' (use != for inequality)", line, col);
      case '=': return make(Tok::Eq, line, col);
      case '*': return make(Tok::Star, line, col);
      case '/': return make(Tok::Slash, line, col);
      case '(': return make(Tok::LParen, line, col);
      case ')': return make(Tok::RParen, line, col);
      case '[': return make(Tok::LBracket, line, col);
      case ']': return make(Tok::RBracket, line, col);
      case ',': return make(Tok::Comma, line, col);
      case ';': return make(Tok::Semi, line, col);
      default: {
        std::ostringstream os;
        os << "unexpected character '";
        if (std::isprint(static_cast<unsigned char>(c)))
          os << c;
        else
          os << "\\x" << std::hex << int(static_cast<unsigned char>(c));
        os << "'";
        fail(diag::SyntaxError, os.str(), line, col);
      }
    }
  }

  Token lex_number(char first, int line, int col) {
    std::string s(1, first);
    bool isFloat = false;
    while (std::isdigit(static_cast<unsigned char>(peek()))) s.push_back(advance());
    if (peek() == '.' && std::isdigit(static_cast<unsigned char>(peek(1)))) {
      isFloat = true;
      s.push_back(advance());
      while (std::isdigit(static_cast<unsigned char>(peek()))) s.push_back(advance());
    }
    if (peek() == 'e' || peek() == 'E') {
      size_t save = pos_;
      char e = peek();
      size_t ahead = 1;
      if (peek(1) == '+' || peek(1) == '-') ahead = 2;
      if (std::isdigit(static_cast<unsigned char>(peek(ahead)))) {
        isFloat = true;
        s.push_back(advance());  // e
        if (peek() == '+' || peek() == '-') s.push_back(advance());
        while (std::isdigit(static_cast<unsigned char>(peek()))) s.push_back(advance());
      }
      (void)save;
      (void)e;
    }
    Token t = make(isFloat ? Tok::Float : Tok::Int, line, col);
    if (isFloat) {
      t.floatVal = std::strtod(s.c_str(), nullptr);
    } else {
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), t.intVal);
      if (ec != std::errc()) fail(diag::BadLiteral, "integer literal out of range", line, col);
      (void)p;
    }
    return t;
  }

  Token lex_string(int line, int col) {
    std::string s;
    for (;;) {
      if (done() || peek() == '\n')
        fail(diag::SyntaxError, "unterminated string literal", line, col);
      char c = advance();
      if (c == '"') break;
      if (c == '\\') {
        if (done()) fail(diag::SyntaxError, "unterminated string literal", line, col);
        char e = advance();
        switch (e) {
          case 'n': s.push_back('\n'); break;
          case 't': s.push_back('\t'); break;
          case '\\': s.push_back('\\'); break;
          case '"': s.push_back('"'); break;
          default: fail(diag::BadLiteral, "unknown string escape", line_, col_);
        }
      } else {
        s.push_back(c);
      }
    }
    Token t = make(Tok::String, line, col);
    t.text = std::move(s);
    return t;
  }
};

// ----------------------------------------------------------------- parser

constexpr int kMaxDepth = 400;

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  Program run() {
    Program p;
    while (!at(Tok::End)) parse_item(p);
    return p;
  }

 private:
  std::vector<Token> toks_;
  size_t pos_ = 0;
  int depth_ = 0;
  int wildcards_ = 0;
  // Set when an ArrowLeft token was consumed as `<`; the pending `-` is
  // injected in front of the next unary expression.
  bool pendingMinus_ = false;

  struct DepthGuard {
    Parser& p;
    explicit DepthGuard(Parser& parser) : p(parser) {
      if (++p.depth_ > kMaxDepth)
        fail(diag::NestingTooDeep, "expression nesting too deep",
             p.cur().line, p.cur().col);
    }
    ~DepthGuard() { --p.depth_; }
  };

  const Token& cur() const { return toks_[pos_]; }
  const Token& peek(size_t ahead = 1) const {
    size_t i = pos_ + ahead;
    return i < toks_.size() ? toks_[i] : toks_.back();
  }
  bool at(Tok k) const { return cur().kind == k; }
  Token take() { return toks_[pos_++]; }

  Token expect(Tok k, const char* what) {
    if (!at(k))
      fail(diag::SyntaxError, std::string("expected ") + what, cur().line, cur().col);
    return take();
  }

  [[noreturn]] void fail_here(std::string msg) {
    fail(diag::SyntaxError, std::move(msg), cur().line, cur().col);
  }

  std::string take_name(const char* what) {
    if (!at(Tok::Ident)) fail_here(std::string("expected ") + what);
    Token t = take();
    if (is_reserved_unimplemented(t.text))
      fail(diag::ReservedKeyword,
           "keyword '" + t.text + "' is reserved but not implemented",
           t.line, t.col);
    if (is_cei_name(t.text) || is_eei_name(t.text))
      fail(diag::ReservedKeyword,
           "'" + t.text + "' names a builtin and cannot be used as " +
               std::string(what),
           t.line, t.col);
    return t.text;
  }

  // ---- program items ----

  void parse_item(Program& p) {
    Token start = cur();
    // A rule head is a plain access; standalone declarations are CEI facts
    // (`card(R, 2)`), so the first identifier decides which form this is.
    if (at(Tok::Ident) && !is_cei_name(cur().text)) {
      Access head = parse_access_head();
      auto act = action_token();
      if (!act)
        fail_here("expected ':=', '+=', '-=' or '<-' after rule head");
      Rule r = parse_rule_tail(std::move(head), *act);
      r.line = start.line;
      r.col = start.col;
      p.rules.push_back(std::move(r));
      return;
    }
    ConstraintPtr c = parse_constraint();
    if (!std::holds_alternative<CeiCall>(c->node))
      fail(diag::SyntaxError,
           "expected a rule (head := body) or a standalone declaration",
           start.line, start.col);
    p.declarations.push_back(std::move(c));
  }

  std::optional<Action> action_token() {
    switch (cur().kind) {
      case Tok::Define: take(); return Action::Define;
      case Tok::PlusEq: take(); return Action::Add;
      case Tok::MinusEq: take(); return Action::Remove;
      case Tok::ArrowLeft: take(); return Action::Replace;
      default: return std::nullopt;
    }
  }

  Rule parse_rule_tail(Access head, Action action) {
    Rule r;
    r.head = std::move(head);
    r.action = action;
    // `A ◁ E if C` or `A ◁ C`: try the expression form first and fall back
    // when no `if` follows.
    size_t save = pos_;
    try {
      ExprPtr e = parse_expression();
      if (at(Tok::KwIf)) {
        take();
        r.expr = std::move(e);
        r.constraint = parse_constraint();
        return r;
      }
    } catch (const ParseError&) {
      // fall through
    }
    pos_ = save;
    pendingMinus_ = false;
    r.constraint = parse_constraint();
    return r;
  }

  // Head position: identifier plus zero or more argument lists. Zero lists
  // is only meaningful for nested-rule heads; rule heads get checked later.
  Access parse_access_head() {
    Access a;
    Token t = cur();
    a.relation = take_name("a relation name");
    (void)t;
    while (at(Tok::LParen)) a.argLists.push_back(parse_arg_list());
    return a;
  }

  std::vector<ExprPtr> parse_arg_list() {
    expect(Tok::LParen, "'('");
    std::vector<ExprPtr> args;
    if (at(Tok::RParen)) {
      take();
      return args;
    }
    for (;;) {
      args.push_back(parse_expression());
      if (at(Tok::Comma)) {
        take();
        continue;
      }
      expect(Tok::RParen, "',' or ')'");
      break;
    }
    return args;
  }

  // ---- constraints ----

  ConstraintPtr parse_constraint() {
    DepthGuard g(*this);
    ConstraintPtr lhs = parse_conjunction();
    if (!at(Tok::KwOr)) return lhs;
    take();
    ConstraintPtr rhs = parse_constraint();  // right-associated
    auto c = make_disjunction(std::move(lhs), std::move(rhs));
    return c;
  }

  ConstraintPtr parse_conjunction() {
    DepthGuard g(*this);
    ConstraintPtr lhs = parse_constraint_primary();
    if (!at(Tok::Comma)) return lhs;
    take();
    ConstraintPtr rhs = parse_conjunction();  // right-associated
    return make_conjunction(std::move(lhs), std::move(rhs));
  }

  ConstraintPtr locate(ConstraintPtr c, const Token& t) {
    auto mut = std::make_shared<Constraint>(*c);
    mut->line = t.line;
    mut->col = t.col;
    return mut;
  }

  // True when a `true`/`false` here starts an expression (`true<=y`)
  // rather than standing alone as a boolean constraint.
  bool bool_starts_expression() {
    switch (peek().kind) {
      case Tok::Eq: case Tok::Ne: case Tok::Le: case Tok::Ge:
      case Tok::Lt: case Tok::Gt: case Tok::ArrowLeft:
      case Tok::Plus: case Tok::Minus: case Tok::Star: case Tok::Slash:
      case Tok::KwIn:
        return true;
      default:
        return false;
    }
  }

  ConstraintPtr parse_constraint_primary() {
    DepthGuard g(*this);
    Token start = cur();
    switch (cur().kind) {
      case Tok::KwTrue:
        if (bool_starts_expression()) break;
        take();
        return locate(make_bool(true), start);
      case Tok::KwFalse:
        if (bool_starts_expression()) break;
        take();
        return locate(make_bool(false), start);
      case Tok::KwNot: {
        take();
        expect(Tok::LParen, "'(' after not");
        ConstraintPtr inner = parse_constraint();
        expect(Tok::RParen, "')'");
        return locate(make_negation(std::move(inner)), start);
      }
      case Tok::KwMatch:
        return parse_match();
      case Tok::LParen:
        return parse_paren_constraint();
      default:
        break;
    }

    if (at(Tok::Ident) && is_cei_name(cur().text) && peek().kind == Tok::LParen)
      return parse_cei();

    // Expression-led constraint: comparison (possibly chained), `in` list,
    // type ascription, or a bare relation access used as an atom.
    ExprPtr e = parse_expression();

    if (at(Tok::KwIn)) {
      take();
      expect(Tok::LBracket, "'['");
      InList lst;
      lst.value = std::move(e);
      if (!at(Tok::RBracket)) {
        for (;;) {
          lst.items.push_back(parse_expression());
          if (at(Tok::Comma)) {
            take();
            continue;
          }
          break;
        }
      }
      expect(Tok::RBracket, "']'");
      auto c = std::make_shared<Constraint>(Constraint{std::move(lst)});
      return locate(c, start);
    }

    if (at(Tok::Colon)) {
      const auto* v = std::get_if<Variable>(&e->node);
      if (!v) fail_here("type ascription needs a variable on the left");
      take();
      if (!at(Tok::Ident)) fail_here("expected a type name");
      Token ty = take();
      auto c = std::make_shared<Constraint>(
          Constraint{TypeAscription{v->name, ty.text}});
      return locate(c, start);
    }

    if (auto op = comparison_op()) {
      std::vector<ExprPtr> operands{std::move(e)};
      std::vector<CompareOp> ops{*op};
      operands.push_back(parse_expression());
      while (auto more = comparison_op()) {
        ops.push_back(*more);
        operands.push_back(parse_expression());
      }
      if (ops.size() == 1)
        return locate(
            make_comparison(std::move(operands[0]), ops[0], std::move(operands[1])),
            start);
      auto c = std::make_shared<Constraint>(
          Constraint{ComparisonChain{std::move(operands), std::move(ops)}});
      return locate(c, start);
    }

    if (const auto* acc = std::get_if<Access>(&e->node)) {
      if (!acc->argLists.empty())
        return locate(make_atom(*acc), start);
    }
    fail(diag::SyntaxError, "expected a constraint", start.line, start.col);
  }

  std::optional<CompareOp> comparison_op() {
    switch (cur().kind) {
      case Tok::Eq: take(); return CompareOp::Eq;
      case Tok::Ne: take(); return CompareOp::Ne;
      case Tok::Lt: take(); return CompareOp::Lt;
      case Tok::Le: take(); return CompareOp::Le;
      case Tok::Gt: take(); return CompareOp::Gt;
      case Tok::Ge: take(); return CompareOp::Ge;
      case Tok::ArrowLeft:
        // `x<-3` in comparison position is `x < -3`.
        take();
        pendingMinus_ = true;
        return CompareOp::Lt;
      default: return std::nullopt;
    }
  }

  ConstraintPtr parse_match() {
    Token start = take();  // match
    MatchCase m;
    m.scrutinee = parse_expression();
    if (!at(Tok::KwCase)) fail_here("expected 'case' after match scrutinee");
    while (at(Tok::KwCase)) {
      take();
      ExprPtr pat = parse_expression();
      expect(Tok::Arrow, "'->'");
      ConstraintPtr body = parse_conjunction();
      if (at(Tok::Semi)) take();
      m.cases.emplace_back(std::move(pat), std::move(body));
    }
    auto c = std::make_shared<Constraint>(Constraint{std::move(m)});
    return locate(c, start);
  }

  ConstraintPtr parse_cei() {
    Token name = take();
    CeiCall call;
    call.name = name.text;
    while (at(Tok::LParen)) call.argLists.push_back(parse_arg_list());
    auto c = std::make_shared<Constraint>(Constraint{std::move(call)});
    return locate(c, name);
  }

  ConstraintPtr parse_paren_constraint() {
    Token open = cur();
    size_t save = pos_;
    take();  // '('

    // Attempt 1: nested rule `(Rv := X(e))`.
    if (at(Tok::Ident) && !is_cei_name(cur().text)) {
      try {
        Access head = parse_access_head();
        if (auto act = action_token()) {
          Rule r = parse_rule_tail(std::move(head), *act);
          r.line = open.line;
          r.col = open.col;
          expect(Tok::RParen, "')'");
          return locate(make_nested_rule(std::move(r)), open);
        }
      } catch (const ParseError&) {
        pendingMinus_ = false;
      }
      pos_ = save;
      take();
    }

    // Attempt 2: parenthesized constraint.
    try {
      ConstraintPtr inner = parse_constraint();
      expect(Tok::RParen, "')'");
      return with_parens(std::move(inner));
    } catch (const ParseError&) {
    }
    pos_ = save;
    pendingMinus_ = false;

    // Attempt 3: expression-led constraint whose left operand happens to be
    // parenthesized, e.g. `(a+b) < c`. Reparse from the '('.
    ExprPtr e = parse_expression();
    if (auto op = comparison_op()) {
      ExprPtr rhs = parse_expression();
      return locate(make_comparison(std::move(e), *op, std::move(rhs)), open);
    }
    fail(diag::SyntaxError, "expected a constraint", open.line, open.col);
  }

  // ---- expressions ----

  ExprPtr locate_expr(ExprPtr e, const Token& t) {
    auto mut = std::make_shared<Expression>(*e);
    mut->line = t.line;
    mut->col = t.col;
    return mut;
  }

  ExprPtr parse_expression() {
    DepthGuard g(*this);
    ExprPtr lhs = parse_multiplicative();
    for (;;) {
      if (at(Tok::Plus)) {
        take();
        lhs = make_binary(BinOp::Add, std::move(lhs), parse_multiplicative());
      } else if (at(Tok::Minus)) {
        take();
        lhs = make_binary(BinOp::Sub, std::move(lhs), parse_multiplicative());
      } else {
        return lhs;
      }
    }
  }

  ExprPtr parse_multiplicative() {
    DepthGuard g(*this);
    ExprPtr lhs = parse_unary();
    for (;;) {
      if (at(Tok::Star)) {
        take();
        lhs = make_binary(BinOp::Mul, std::move(lhs), parse_unary());
      } else if (at(Tok::Slash)) {
        take();
        lhs = make_binary(BinOp::Div, std::move(lhs), parse_unary());
      } else {
        return lhs;
      }
    }
  }

  ExprPtr parse_unary() {
    DepthGuard g(*this);
    if (pendingMinus_) {
      pendingMinus_ = false;
      return make_negate(parse_unary());
    }
    if (at(Tok::Minus)) {
      Token t = take();
      return locate_expr(make_negate(parse_unary()), t);
    }
    return parse_primary_expr();
  }

  ExprPtr parse_primary_expr() {
    DepthGuard g(*this);
    Token t = cur();
    switch (t.kind) {
      case Tok::Int:
        take();
        return locate_expr(make_literal(t.intVal), t);
      case Tok::Float:
        take();
        return locate_expr(make_literal(t.floatVal), t);
      case Tok::String:
        take();
        return locate_expr(make_literal(t.text), t);
      case Tok::KwTrue:
        take();
        return locate_expr(make_literal(true), t);
      case Tok::KwFalse:
        take();
        return locate_expr(make_literal(false), t);
      case Tok::Underscore: {
        take();
        // Each wildcard becomes a distinct anonymous variable; the `_#`
        // prefix cannot collide with user names (identifiers start with a
        // letter) and prints back as `_`.
        std::string name = "_#" + std::to_string(++wildcards_);
        return locate_expr(make_variable(std::move(name)), t);
      }
      case Tok::LParen: {
        take();
        ExprPtr e = parse_expression();
        expect(Tok::RParen, "')'");
        return e;
      }
      case Tok::Ident: {
        if (is_eei_name(t.text) && peek().kind == Tok::LParen) {
          take();
          std::vector<ExprPtr> args = parse_arg_list();
          return locate_expr(make_eei(t.text, std::move(args)), t);
        }
        if (is_cei_name(t.text))
          fail(diag::SyntaxError,
               "constraint interface '" + t.text + "' cannot appear in an expression",
               t.line, t.col);
        std::string name = take_name("a name");
        if (at(Tok::LParen)) {
          Access a;
          a.relation = std::move(name);
          while (at(Tok::LParen)) a.argLists.push_back(parse_arg_list());
          return locate_expr(make_access_expr(std::move(a)), t);
        }
        return locate_expr(make_variable(std::move(name)), t);
      }
      default:
        fail(diag::SyntaxError, "expected an expression", t.line, t.col);
    }
  }
};

}  // namespace

Result<Program> parse(std::string_view source) {
  try {
    Lexer lexer(source);
    Parser parser(lexer.run());
    return parser.run();
  } catch (const ParseError& e) {
    return e.diag;
  }
}

}  // namespace hojabr
