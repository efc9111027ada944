#include "mini_python.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

namespace repro_lens::kernel::mini {

namespace {

[[noreturn]] void raise(std::string ename, std::string evalue) {
  throw PyException{std::move(ename), std::move(evalue)};
}

[[noreturn]] void syntax_error(const std::string& msg) { raise("SyntaxError", msg); }

[[noreturn]] void unsupported(const std::string& what) {
  raise("NotImplementedError", "mock kernel does not support " + what);
}

// ---------------------------------------------------------------------------
// Lexer

enum class Tok { Name, Number, String, Op, Newline, Indent, Dedent, End };

struct Token {
  Tok type = Tok::End;
  std::string text;
  int line = 1;
  bool fstring = false;
};

const std::set<std::string>& keywords() {
  static const std::set<std::string> k = {
      "False", "None",   "True",    "and",      "as",       "assert", "async",  "await",
      "break", "class",  "continue", "def",     "del",      "elif",   "else",   "except",
      "finally", "for",  "from",    "global",   "if",       "import", "in",     "is",
      "lambda", "nonlocal", "not",  "or",       "pass",     "raise",  "return", "try",
      "while", "with",   "yield"};
  return k;
}

bool is_name_start(unsigned char c) { return std::isalpha(c) || c == '_' || c >= 0x80; }
bool is_name_char(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string decode_escapes(const std::string& body) {
  std::string out;
  for (std::size_t i = 0; i < body.size(); ++i) {
    char c = body[i];
    if (c != '\\' || i + 1 >= body.size()) {
      out.push_back(c);
      continue;
    }
    char n = body[++i];
    auto hex = [&](std::size_t digits) {
      std::uint32_t cp = 0;
      for (std::size_t k = 1; k <= digits; ++k) {
        if (i + k >= body.size() || !std::isxdigit(static_cast<unsigned char>(body[i + k]))) {
          syntax_error("truncated escape sequence");
        }
        cp = cp * 16 + static_cast<std::uint32_t>(std::stoi(std::string(1, body[i + k]), nullptr, 16));
      }
      i += digits;
      append_utf8(out, cp);
    };
    switch (n) {
      case 'n': out.push_back('\n'); break;
      case 't': out.push_back('\t'); break;
      case 'r': out.push_back('\r'); break;
      case '0': out.push_back('\0'); break;
      case 'a': out.push_back('\a'); break;
      case 'b': out.push_back('\b'); break;
      case 'f': out.push_back('\f'); break;
      case 'v': out.push_back('\v'); break;
      case '\\': out.push_back('\\'); break;
      case '\'': out.push_back('\''); break;
      case '"': out.push_back('"'); break;
      case '\n': break;
      case 'x': hex(2); break;
      case 'u': hex(4); break;
      case 'U': hex(8); break;
      case 'N': unsupported("named unicode escapes");
      default:
        out.push_back('\\');
        out.push_back(n);
    }
  }
  return out;
}

// An unclosed bracket is only reported if parsing reaches the end of input;
// an earlier parse error wins, as in CPython.
struct Lexed {
  std::vector<Token> tokens;
  std::string unclosed;
};

Lexed tokenize(const std::string& src) {
  std::vector<Token> toks;
  std::vector<int> indents = {0};
  std::vector<std::pair<char, int>> brackets;
  int line = 1;
  std::size_t i = 0;
  bool at_line_start = true;
  auto push = [&](Tok t, std::string text = {}, bool f = false) {
    toks.push_back(Token{t, std::move(text), line, f});
  };

  while (i < src.size()) {
    if (at_line_start && brackets.empty()) {
      int col = 0;
      std::size_t j = i;
      while (j < src.size() && (src[j] == ' ' || src[j] == '\t' || src[j] == '\f')) {
        col = src[j] == '\t' ? (col / 8 + 1) * 8 : col + 1;
        ++j;
      }
      if (j >= src.size()) {
        i = j;
        break;
      }
      if (src[j] == '\n' || src[j] == '#' || (src[j] == '\r')) {
        while (j < src.size() && src[j] != '\n') ++j;
        if (j < src.size()) {
          ++j;
          ++line;
        }
        i = j;
        continue;
      }
      if (col > indents.back()) {
        indents.push_back(col);
        push(Tok::Indent);
      } else {
        while (col < indents.back()) {
          indents.pop_back();
          push(Tok::Dedent);
        }
        if (col != indents.back()) {
          raise("IndentationError", "unindent does not match any outer indentation level");
        }
      }
      i = j;
      at_line_start = false;
    }

    char c = src[i];
    if (c == '\n') {
      ++line;
      ++i;
      if (brackets.empty()) {
        if (!toks.empty() && toks.back().type != Tok::Newline) push(Tok::Newline);
        at_line_start = true;
      }
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r' || c == '\f') {
      ++i;
      continue;
    }
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') ++i;
      continue;
    }
    if (c == '\\') {
      if (i + 1 < src.size() && src[i + 1] == '\n') {
        i += 2;
        ++line;
        continue;
      }
      syntax_error("unexpected character after line continuation character");
    }

    // String literal, possibly prefixed.
    std::size_t p = i;
    std::string prefix;
    while (p < src.size() && p - i < 2 && std::strchr("rRbBuUfF", src[p]) && src[p] != '\0') {
      prefix.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(src[p]))));
      ++p;
    }
    if (p < src.size() && (src[p] == '\'' || src[p] == '"') &&
        (prefix.empty() || prefix == "r" || prefix == "b" || prefix == "u" || prefix == "f" ||
         prefix == "rb" || prefix == "br" || prefix == "fr" || prefix == "rf")) {
      char q = src[p];
      bool triple = p + 2 < src.size() && src[p + 1] == q && src[p + 2] == q;
      std::size_t start = p + (triple ? 3 : 1);
      std::size_t k = start;
      int start_line = line;
      bool closed = false;
      while (k < src.size()) {
        if (src[k] == '\\' && k + 1 < src.size()) {
          if (src[k + 1] == '\n') ++line;
          k += 2;
          continue;
        }
        if (src[k] == '\n') {
          if (!triple) break;
          ++line;
        }
        if (src[k] == q) {
          if (!triple) {
            closed = true;
            break;
          }
          if (k + 2 < src.size() && src[k + 1] == q && src[k + 2] == q) {
            closed = true;
            break;
          }
        }
        ++k;
      }
      if (!closed) {
        if (triple) {
          syntax_error("unterminated triple-quoted string literal (detected at line " +
                       std::to_string(line) + ")");
        }
        syntax_error("unterminated string literal (detected at line " + std::to_string(start_line) + ")");
      }
      std::string body = src.substr(start, k - start);
      if (prefix.find('b') != std::string::npos) unsupported("bytes literals");
      bool raw = prefix.find('r') != std::string::npos;
      bool f = prefix.find('f') != std::string::npos;
      push(Tok::String, raw ? body : decode_escapes(body), f);
      toks.back().line = start_line;
      i = k + (triple ? 3 : 1);
      continue;
    }

    if (is_name_start(static_cast<unsigned char>(c))) {
      std::size_t k = i;
      while (k < src.size() && is_name_char(static_cast<unsigned char>(src[k]))) ++k;
      push(Tok::Name, src.substr(i, k - i));
      i = k;
      continue;
    }

    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      std::size_t k = i;
      if (c == '0' && k + 1 < src.size() && std::strchr("xXoObB", src[k + 1]) && src[k + 1] != '\0') {
        k += 2;
        while (k < src.size() && (std::isxdigit(static_cast<unsigned char>(src[k])) || src[k] == '_')) ++k;
      } else {
        while (k < src.size() && (std::isdigit(static_cast<unsigned char>(src[k])) || src[k] == '_')) ++k;
        if (k < src.size() && src[k] == '.') {
          ++k;
          while (k < src.size() && (std::isdigit(static_cast<unsigned char>(src[k])) || src[k] == '_')) ++k;
        }
        if (k < src.size() && (src[k] == 'e' || src[k] == 'E')) {
          std::size_t e = k + 1;
          if (e < src.size() && (src[e] == '+' || src[e] == '-')) ++e;
          if (e < src.size() && std::isdigit(static_cast<unsigned char>(src[e]))) {
            k = e;
            while (k < src.size() && (std::isdigit(static_cast<unsigned char>(src[k])) || src[k] == '_')) ++k;
          }
        }
        if (k < src.size() && (src[k] == 'j' || src[k] == 'J')) unsupported("complex literals");
      }
      if (k < src.size() && is_name_start(static_cast<unsigned char>(src[k]))) {
        syntax_error("invalid decimal literal");
      }
      push(Tok::Number, src.substr(i, k - i));
      i = k;
      continue;
    }

    static const char* three[] = {"**=", "//=", ">>=", "<<=", "..."};
    static const char* two[] = {"**", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=",
                                "->", ":=", "<<", ">>", "&=", "|=", "^=", "@="};
    std::string op;
    for (const char* t : three) {
      if (src.compare(i, 3, t) == 0) op = t;
    }
    if (op.empty()) {
      for (const char* t : two) {
        if (src.compare(i, 2, t) == 0) op = t;
      }
    }
    if (op.empty()) {
      if (!std::strchr("+-*/%@<>=()[]{},:.;~&|^!", c) || c == '\0' || c == '!') {
        syntax_error("invalid syntax");
      }
      op = std::string(1, c);
    }
    if (op == "(" || op == "[" || op == "{") brackets.emplace_back(op[0], line);
    if (op == ")" || op == "]" || op == "}") {
      if (brackets.empty()) syntax_error("unmatched '" + op + "'");
      char open = brackets.back().first;
      char want = open == '(' ? ')' : open == '[' ? ']' : '}';
      if (op[0] != want) {
        syntax_error("closing parenthesis '" + op + "' does not match opening parenthesis '" +
                     std::string(1, open) + "'");
      }
      brackets.pop_back();
    }
    push(Tok::Op, op);
    i += op.size();
  }
  if (!brackets.empty()) {
    push(Tok::End);
    return {std::move(toks), "'" + std::string(1, brackets.back().first) + "' was never closed"};
  }
  if (!toks.empty() && toks.back().type != Tok::Newline) push(Tok::Newline);
  while (indents.size() > 1) {
    indents.pop_back();
    push(Tok::Dedent);
  }
  push(Tok::End);
  return {std::move(toks), {}};
}

// ---------------------------------------------------------------------------
// AST

struct Expr;
using ExprPtr = std::shared_ptr<Expr>;

enum class EK {
  Const, Name, Bin, Unary, Not, And, Or, Compare, Call, Attr, Subscript, Slice, List, FString,
  IfExp, ListComp
};

struct Expr {
  EK kind;
  std::string op;                  // operator, name, attribute
  Value value;                     // Const
  std::vector<ExprPtr> kids;       // operands / args / items
  std::vector<std::string> ops;    // Compare operators; Call keyword names (parallel to kw kids)
  std::vector<ExprPtr> kw;         // Call keyword values
  bool tuple = false;
  // FString parts: literal text in ops[i], expression in kids[i] (may be null), spec in specs.
  std::vector<std::string> specs;
  std::vector<char> conv;
};

ExprPtr mk(EK k) {
  auto e = std::make_shared<Expr>();
  e->kind = k;
  return e;
}

enum class SK { Expr, Assign, AugAssign, Import, ImportFrom, Raise, Pass, Break, Continue, Assert, While, For, If };

struct Stmt;
using StmtPtr = std::shared_ptr<Stmt>;

struct Stmt {
  SK kind;
  std::vector<ExprPtr> targets;    // Assign targets; For target at [0]
  ExprPtr value;                   // rhs / condition / iterable / raised / assert test
  ExprPtr extra;                   // assert message
  std::string op;                  // AugAssign operator
  std::vector<std::pair<std::string, std::string>> names;  // imports: (dotted or name, alias)
  std::string module;              // ImportFrom
  int level = 0;
  bool star = false;
  std::vector<StmtPtr> body, orelse;
};

// ---------------------------------------------------------------------------
// Parser

class Parser {
 public:
  explicit Parser(Lexed lexed) : t_(std::move(lexed.tokens)), unclosed_(std::move(lexed.unclosed)) {}

  std::vector<StmtPtr> parse_file() {
    try {
      return parse_all();
    } catch (const PyException& e) {
      if (!unclosed_.empty() && e.ename == "SyntaxError" && peek().type == Tok::End) syntax_error(unclosed_);
      throw;
    }
  }

 private:
  std::vector<StmtPtr> parse_all() {
    std::vector<StmtPtr> out;
    while (peek().type != Tok::End) {
      if (peek().type == Tok::Newline) {
        ++p_;
        continue;
      }
      if (peek().type == Tok::Indent) raise("IndentationError", "unexpected indent");
      if (peek().type == Tok::Dedent) {
        ++p_;
        continue;
      }
      parse_statement(out);
    }
    return out;
  }

public:
  static ExprPtr parse_expression_text(const std::string& text) {
    Parser p(tokenize("(" + text + ")"));
    auto e = p.parse_test();
    if (p.peek().type != Tok::Newline) syntax_error("f-string: invalid syntax");
    return e;
  }

 private:

  const Token& peek(std::size_t ahead = 0) const {
    return t_[std::min(p_ + ahead, t_.size() - 1)];
  }
  bool is_op(const std::string& s, std::size_t ahead = 0) const {
    return peek(ahead).type == Tok::Op && peek(ahead).text == s;
  }
  bool is_kw(const std::string& s, std::size_t ahead = 0) const {
    return peek(ahead).type == Tok::Name && peek(ahead).text == s;
  }
  bool accept_op(const std::string& s) {
    if (!is_op(s)) return false;
    ++p_;
    return true;
  }
  bool accept_kw(const std::string& s) {
    if (!is_kw(s)) return false;
    ++p_;
    return true;
  }
  void expect_op(const std::string& s) {
    if (!accept_op(s)) {
      if (s == ":" && peek().type == Tok::Newline) syntax_error("expected ':'");
      syntax_error("invalid syntax");
    }
  }
  std::string expect_name() {
    if (peek().type != Tok::Name || keywords().count(peek().text)) syntax_error("invalid syntax");
    return t_[p_++].text;
  }

  void parse_statement(std::vector<StmtPtr>& out) {
    if (is_kw("if") || is_kw("while") || is_kw("for")) {
      out.push_back(parse_compound());
      return;
    }
    for (const char* k : {"def", "class", "with", "try", "async", "global", "nonlocal", "del"}) {
      if (is_kw(k)) unsupported(std::string("'") + k + "' statements");
    }
    if (is_op("@")) unsupported("decorators");
    for (;;) {
      out.push_back(parse_simple());
      if (accept_op(";")) {
        if (peek().type == Tok::Newline || peek().type == Tok::End) break;
        continue;
      }
      break;
    }
    if (peek().type == Tok::Newline) {
      ++p_;
    } else if (peek().type != Tok::End) {
      syntax_error("invalid syntax");
    }
  }

  std::vector<StmtPtr> parse_block(const std::string& what, int line) {
    std::vector<StmtPtr> body;
    if (peek().type == Tok::Newline) {
      ++p_;
      if (peek().type != Tok::Indent) {
        raise("IndentationError", "expected an indented block after '" + what + "' statement on line " +
                                      std::to_string(line));
      }
      ++p_;
      while (peek().type != Tok::Dedent && peek().type != Tok::End) {
        if (peek().type == Tok::Newline) {
          ++p_;
          continue;
        }
        if (peek().type == Tok::Indent) raise("IndentationError", "unexpected indent");
        parse_statement(body);
      }
      if (peek().type == Tok::Dedent) ++p_;
    } else {
      parse_statement(body);
    }
    return body;
  }

  StmtPtr parse_compound() {
    int line = peek().line;
    auto s = std::make_shared<Stmt>();
    if (accept_kw("if")) {
      s->kind = SK::If;
      s->value = parse_namedexpr();
      expect_op(":");
      s->body = parse_block("if", line);
      if (is_kw("elif")) {
        t_[p_].text = "if";
        s->orelse.push_back(parse_compound());
      } else if (is_kw("else")) {
        int eline = peek().line;
        ++p_;
        expect_op(":");
        s->orelse = parse_block("else", eline);
      }
      return s;
    }
    if (accept_kw("while")) {
      s->kind = SK::While;
      s->value = parse_namedexpr();
      expect_op(":");
      ++loop_depth_;
      s->body = parse_block("while", line);
      --loop_depth_;
      if (is_kw("else")) unsupported("loop 'else' clauses");
      return s;
    }
    accept_kw("for");
    s->kind = SK::For;
    s->targets.push_back(parse_target_list());
    if (!accept_kw("in")) syntax_error("invalid syntax");
    s->value = parse_testlist();
    expect_op(":");
    ++loop_depth_;
    s->body = parse_block("for", line);
    --loop_depth_;
    if (is_kw("else")) unsupported("loop 'else' clauses");
    return s;
  }

  ExprPtr parse_target_list() {
    std::vector<ExprPtr> items;
    items.push_back(parse_or_expr_target());
    bool tuple = false;
    while (accept_op(",")) {
      tuple = true;
      if (is_kw("in")) break;
      items.push_back(parse_or_expr_target());
    }
    if (!tuple) return items[0];
    auto e = mk(EK::List);
    e->kids = std::move(items);
    e->tuple = true;
    return e;
  }

  ExprPtr parse_or_expr_target() {
    auto e = parse_arith();
    check_target(e);
    return e;
  }

  static void check_target(const ExprPtr& e) {
    switch (e->kind) {
      case EK::Name:
      case EK::Subscript:
        return;
      case EK::Attr:
        unsupported("attribute assignment");
      case EK::List:
        for (auto& k : e->kids) check_target(k);
        return;
      case EK::Const:
        syntax_error("cannot assign to literal");
      case EK::Call:
        syntax_error("cannot assign to function call");
      default:
        syntax_error("cannot assign to expression");
    }
  }

  StmtPtr parse_simple() {
    auto s = std::make_shared<Stmt>();
    if (accept_kw("pass")) {
      s->kind = SK::Pass;
      return s;
    }
    if (accept_kw("break")) {
      if (loop_depth_ == 0) syntax_error("'break' outside loop");
      s->kind = SK::Break;
      return s;
    }
    if (accept_kw("continue")) {
      if (loop_depth_ == 0) syntax_error("'continue' not properly in loop");
      s->kind = SK::Continue;
      return s;
    }
    if (is_kw("return")) syntax_error("'return' outside function");
    if (is_kw("yield")) syntax_error("'yield' outside function");
    if (accept_kw("import")) {
      s->kind = SK::Import;
      do {
        std::string dotted = expect_name();
        while (accept_op(".")) dotted += "." + expect_name();
        std::string alias;
        if (accept_kw("as")) alias = expect_name();
        s->names.emplace_back(dotted, alias);
      } while (accept_op(","));
      return s;
    }
    if (accept_kw("from")) {
      s->kind = SK::ImportFrom;
      while (is_op(".") || is_op("...")) s->level += static_cast<int>(t_[p_++].text.size());
      if (!is_kw("import")) {
        s->module = expect_name();
        while (accept_op(".")) s->module += "." + expect_name();
      }
      if (!accept_kw("import")) syntax_error("invalid syntax");
      if (accept_op("*")) {
        s->star = true;
        return s;
      }
      bool paren = accept_op("(");
      do {
        if (paren && is_op(")")) break;
        std::string name = expect_name();
        std::string alias;
        if (accept_kw("as")) alias = expect_name();
        s->names.emplace_back(name, alias);
      } while (accept_op(","));
      if (paren) expect_op(")");
      return s;
    }
    if (accept_kw("raise")) {
      s->kind = SK::Raise;
      if (peek().type != Tok::Newline && peek().type != Tok::End && !is_op(";")) {
        s->value = parse_test();
        if (accept_kw("from")) parse_test();
      }
      return s;
    }
    if (accept_kw("assert")) {
      s->kind = SK::Assert;
      s->value = parse_test();
      if (accept_op(",")) s->extra = parse_test();
      return s;
    }

    auto first = parse_testlist();
    if (is_op("=")) {
      s->kind = SK::Assign;
      std::vector<ExprPtr> chain = {first};
      while (accept_op("=")) chain.push_back(parse_testlist());
      s->value = chain.back();
      chain.pop_back();
      for (auto& t : chain) check_target(t);
      s->targets = std::move(chain);
      return s;
    }
    for (const char* aug : {"+=", "-=", "*=", "/=", "//=", "%=", "**="}) {
      if (accept_op(aug)) {
        if (first->kind != EK::Name && first->kind != EK::Subscript) {
          syntax_error("'" + std::string("expression") + "' is an illegal expression for augmented assignment");
        }
        s->kind = SK::AugAssign;
        s->op = std::string(aug).substr(0, std::string(aug).size() - 1);
        s->targets.push_back(first);
        s->value = parse_testlist();
        return s;
      }
    }
    for (const char* aug : {"&=", "|=", "^=", ">>=", "<<=", "@="}) {
      if (is_op(aug)) unsupported("bitwise augmented assignment");
    }
    if (is_op(":")) unsupported("annotated assignment");
    s->kind = SK::Expr;
    s->value = first;
    return s;
  }

  ExprPtr parse_testlist() {
    auto first = parse_test();
    if (!is_op(",")) return first;
    auto e = mk(EK::List);
    e->tuple = true;
    e->kids.push_back(first);
    while (accept_op(",")) {
      if (peek().type == Tok::Newline || peek().type == Tok::End || is_op("=") || is_op(")") || is_op(";")) break;
      e->kids.push_back(parse_test());
    }
    return e;
  }

  ExprPtr parse_namedexpr() {
    auto e = parse_test();
    if (is_op(":=")) unsupported("assignment expressions");
    return e;
  }

  ExprPtr parse_test() {
    if (is_kw("lambda")) unsupported("lambda expressions");
    auto e = parse_or();
    if (accept_kw("if")) {
      auto cond = parse_or();
      if (!accept_kw("else")) syntax_error("expected 'else' after 'if' expression");
      auto other = parse_test();
      auto x = mk(EK::IfExp);
      x->kids = {cond, e, other};
      return x;
    }
    return e;
  }

  ExprPtr parse_or() {
    auto e = parse_and();
    while (accept_kw("or")) {
      auto x = mk(EK::Or);
      x->kids = {e, parse_and()};
      e = x;
    }
    return e;
  }

  ExprPtr parse_and() {
    auto e = parse_not();
    while (accept_kw("and")) {
      auto x = mk(EK::And);
      x->kids = {e, parse_not()};
      e = x;
    }
    return e;
  }

  ExprPtr parse_not() {
    if (accept_kw("not")) {
      auto x = mk(EK::Not);
      x->kids = {parse_not()};
      return x;
    }
    return parse_comparison();
  }

  ExprPtr parse_comparison() {
    auto e = parse_bitor();
    ExprPtr cmp;
    for (;;) {
      std::string op;
      if (peek().type == Tok::Op &&
          (peek().text == "<" || peek().text == ">" || peek().text == "==" || peek().text == ">=" ||
           peek().text == "<=" || peek().text == "!=")) {
        op = t_[p_++].text;
      } else if (is_kw("in")) {
        ++p_;
        op = "in";
      } else if (is_kw("not") && is_kw("in", 1)) {
        p_ += 2;
        op = "not in";
      } else if (is_kw("is")) {
        ++p_;
        op = accept_kw("not") ? "is not" : "is";
      } else {
        break;
      }
      if (!cmp) {
        cmp = mk(EK::Compare);
        cmp->kids.push_back(e);
      }
      cmp->ops.push_back(op);
      cmp->kids.push_back(parse_bitor());
    }
    return cmp ? cmp : e;
  }

  ExprPtr parse_bitor() {
    auto e = parse_arith();
    for (const char* op : {"|", "&", "^", "<<", ">>"}) {
      if (is_op(op)) unsupported("bitwise operators");
    }
    return e;
  }

  ExprPtr parse_arith() {
    auto e = parse_term();
    while (is_op("+") || is_op("-")) {
      auto x = mk(EK::Bin);
      x->op = t_[p_++].text;
      x->kids = {e, parse_term()};
      e = x;
    }
    return e;
  }

  ExprPtr parse_term() {
    auto e = parse_factor();
    while (is_op("*") || is_op("/") || is_op("//") || is_op("%") || is_op("@")) {
      if (is_op("@")) unsupported("matrix multiplication");
      auto x = mk(EK::Bin);
      x->op = t_[p_++].text;
      x->kids = {e, parse_factor()};
      e = x;
    }
    return e;
  }

  ExprPtr parse_factor() {
    if (is_op("-") || is_op("+")) {
      auto x = mk(EK::Unary);
      x->op = t_[p_++].text;
      x->kids = {parse_factor()};
      return x;
    }
    if (is_op("~")) unsupported("bitwise operators");
    return parse_power();
  }

  ExprPtr parse_power() {
    if (is_kw("await")) unsupported("await");
    auto e = parse_primary();
    if (accept_op("**")) {
      auto x = mk(EK::Bin);
      x->op = "**";
      x->kids = {e, parse_factor()};
      return x;
    }
    return e;
  }

  ExprPtr parse_primary() {
    auto e = parse_atom();
    for (;;) {
      if (accept_op("(")) {
        auto call = mk(EK::Call);
        call->kids.push_back(e);
        while (!is_op(")")) {
          if (is_op("*") || is_op("**")) unsupported("argument unpacking");
          if (peek().type == Tok::Name && is_op("=", 1)) {
            call->ops.push_back(expect_name());
            ++p_;
            call->kw.push_back(parse_test());
          } else {
            if (!call->kw.empty()) syntax_error("positional argument follows keyword argument");
            auto arg = parse_test();
            if (is_kw("for")) unsupported("generator expressions");
            call->kids.push_back(arg);
          }
          if (!accept_op(",")) break;
        }
        expect_op(")");
        e = call;
      } else if (accept_op(".")) {
        auto a = mk(EK::Attr);
        a->op = expect_name();
        a->kids = {e};
        e = a;
      } else if (accept_op("[")) {
        auto s = mk(EK::Subscript);
        s->kids.push_back(e);
        ExprPtr lo, hi;
        if (!is_op(":")) lo = parse_test();
        if (accept_op(":")) {
          if (!is_op("]")) hi = parse_test();
          if (is_op(":")) unsupported("extended slices");
          auto sl = mk(EK::Slice);
          sl->kids = {lo, hi};
          s->kids.push_back(sl);
        } else {
          if (is_op(",")) unsupported("tuple subscripts");
          s->kids.push_back(lo);
        }
        expect_op("]");
        e = s;
      } else {
        return e;
      }
    }
  }

  ExprPtr parse_atom() {
    const Token& tok = peek();
    if (tok.type == Tok::Number) {
      ++p_;
      auto e = mk(EK::Const);
      e->value = parse_number(tok.text);
      return e;
    }
    if (tok.type == Tok::String) {
      auto e = mk(EK::FString);
      while (peek().type == Tok::String) {
        const Token& s = t_[p_++];
        if (s.fstring) {
          add_fstring(*e, s.text);
        } else {
          e->ops.push_back(s.text);
          e->kids.push_back(nullptr);
          e->specs.emplace_back();
          e->conv.push_back(0);
        }
      }
      bool any_expr = std::any_of(e->kids.begin(), e->kids.end(), [](auto& k) { return k != nullptr; });
      if (!any_expr) {
        std::string all;
        for (auto& part : e->ops) all += part;
        auto c = mk(EK::Const);
        c->value = all;
        return c;
      }
      return e;
    }
    if (tok.type == Tok::Name) {
      if (tok.text == "True" || tok.text == "False" || tok.text == "None") {
        ++p_;
        auto e = mk(EK::Const);
        if (tok.text == "None") {
          e->value = NoneV{};
        } else {
          e->value = tok.text == "True";
        }
        return e;
      }
      if (keywords().count(tok.text)) syntax_error("invalid syntax");
      ++p_;
      auto e = mk(EK::Name);
      e->op = tok.text;
      return e;
    }
    if (accept_op("(")) {
      if (accept_op(")")) {
        auto e = mk(EK::List);
        e->tuple = true;
        return e;
      }
      auto first = parse_namedexpr();
      if (is_kw("for")) unsupported("generator expressions");
      if (accept_op(")")) return first;
      auto e = mk(EK::List);
      e->tuple = true;
      e->kids.push_back(first);
      while (accept_op(",")) {
        if (is_op(")")) break;
        e->kids.push_back(parse_test());
      }
      expect_op(")");
      return e;
    }
    if (accept_op("[")) {
      auto e = mk(EK::List);
      if (accept_op("]")) return e;
      auto first = parse_test();
      if (accept_kw("for")) {
        auto comp = mk(EK::ListComp);
        auto target = parse_target_list();
        if (!accept_kw("in")) syntax_error("invalid syntax");
        auto iter = parse_or();
        ExprPtr cond;
        if (accept_kw("if")) cond = parse_or();
        if (is_kw("for") || is_kw("if")) unsupported("nested comprehensions");
        expect_op("]");
        comp->kids = {first, target, iter, cond};
        return comp;
      }
      e->kids.push_back(first);
      while (accept_op(",")) {
        if (is_op("]")) break;
        e->kids.push_back(parse_test());
      }
      expect_op("]");
      return e;
    }
    if (is_op("{")) unsupported("dict and set displays");
    if (is_op("...")) unsupported("Ellipsis");
    syntax_error("invalid syntax");
  }

  static Value parse_number(std::string text) {
    text.erase(std::remove(text.begin(), text.end(), '_'), text.end());
    bool is_float = text.find_first_of(".eE") != std::string::npos &&
                    !(text.size() > 1 && (text[1] == 'x' || text[1] == 'X'));
    if (is_float) return std::strtod(text.c_str(), nullptr);
    int base = 10;
    std::string digits = text;
    if (text.size() > 1 && text[0] == '0' && std::isalpha(static_cast<unsigned char>(text[1]))) {
      char b = static_cast<char>(std::tolower(static_cast<unsigned char>(text[1])));
      base = b == 'x' ? 16 : b == 'o' ? 8 : 2;
      digits = text.substr(2);
    } else if (text.size() > 1 && text[0] == '0' && text.find_first_not_of('0') != std::string::npos) {
      syntax_error("leading zeros in decimal integer literals are not permitted; use an 0o prefix for octal integers");
    }
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v, base);
    if (ec == std::errc::result_out_of_range) unsupported("integers beyond 64 bits");
    if (ec != std::errc() || ptr != digits.data() + digits.size()) syntax_error("invalid syntax");
    return v;
  }

  static void add_fstring(Expr& e, const std::string& body) {
    std::string lit;
    for (std::size_t i = 0; i < body.size(); ++i) {
      char c = body[i];
      if (c == '{' && i + 1 < body.size() && body[i + 1] == '{') {
        lit.push_back('{');
        ++i;
        continue;
      }
      if (c == '}' && i + 1 < body.size() && body[i + 1] == '}') {
        lit.push_back('}');
        ++i;
        continue;
      }
      if (c == '}') syntax_error("f-string: single '}' is not allowed");
      if (c != '{') {
        lit.push_back(c);
        continue;
      }
      int depth = 0;
      std::size_t j = i + 1;
      char quote = 0;
      std::size_t conv_at = std::string::npos, spec_at = std::string::npos;
      for (; j < body.size(); ++j) {
        char d = body[j];
        if (quote) {
          if (d == quote) quote = 0;
          continue;
        }
        if (d == '\'' || d == '"') quote = d;
        else if (d == '(' || d == '[' || d == '{') ++depth;
        else if ((d == ')' || d == ']' || d == '}') && depth > 0) --depth;
        else if (depth == 0 && d == '}') break;
        else if (depth == 0 && d == '!' && j + 1 < body.size() && body[j + 1] != '=' && conv_at == std::string::npos && spec_at == std::string::npos) conv_at = j;
        else if (depth == 0 && d == ':' && spec_at == std::string::npos) spec_at = j;
      }
      if (j >= body.size()) syntax_error("f-string: expecting '}'");
      std::size_t expr_end = std::min({conv_at, spec_at, j});
      std::string expr_text = body.substr(i + 1, expr_end - i - 1);
      if (expr_text.find_first_not_of(" \t") == std::string::npos) {
        syntax_error("f-string: empty expression not allowed");
      }
      char conv = 0;
      if (conv_at != std::string::npos) {
        std::size_t end = std::min(spec_at, j);
        std::string cv = body.substr(conv_at + 1, end - conv_at - 1);
        if (cv != "r" && cv != "s" && cv != "a") syntax_error("f-string: invalid conversion character");
        conv = cv[0];
      }
      std::string spec;
      if (spec_at != std::string::npos) {
        spec = body.substr(spec_at + 1, j - spec_at - 1);
        if (spec.find('{') != std::string::npos) unsupported("nested f-string format specs");
      }
      e.ops.push_back(lit);
      e.kids.push_back(nullptr);
      e.specs.emplace_back();
      e.conv.push_back(0);
      lit.clear();
      e.ops.emplace_back();
      e.kids.push_back(parse_expression_text(expr_text));
      e.specs.push_back(spec);
      e.conv.push_back(conv);
      i = j;
    }
    e.ops.push_back(lit);
    e.kids.push_back(nullptr);
    e.specs.emplace_back();
    e.conv.push_back(0);
  }

  std::vector<Token> t_;
  std::string unclosed_;
  std::size_t p_ = 0;
  int loop_depth_ = 0;
};

// ---------------------------------------------------------------------------
// Value helpers

const char* type_name(const Value& v) {
  struct V {
    const char* operator()(const NoneV&) const { return "NoneType"; }
    const char* operator()(bool) const { return "bool"; }
    const char* operator()(std::int64_t) const { return "int"; }
    const char* operator()(double) const { return "float"; }
    const char* operator()(const std::string&) const { return "str"; }
    const char* operator()(const ListV& l) const { return l.tuple ? "tuple" : "list"; }
    const char* operator()(const ModuleV&) const { return "module"; }
    const char* operator()(const FuncV&) const { return "builtin_function_or_method"; }
    const char* operator()(const MethodV&) const { return "builtin_function_or_method"; }
    const char* operator()(const ExcTypeV&) const { return "type"; }
    const char* operator()(const ExcV& e) const { return e.ename.c_str(); }
    const char* operator()(const FileV&) const { return "_io.TextIOWrapper"; }
    const char* operator()(const RangeV&) const { return "range"; }
  };
  return std::visit(V{}, static_cast<const Value::variant&>(v));
}

bool is_number(const Value& v) {
  return std::holds_alternative<bool>(v) || std::holds_alternative<std::int64_t>(v) ||
         std::holds_alternative<double>(v);
}
bool is_int_like(const Value& v) {
  return std::holds_alternative<bool>(v) || std::holds_alternative<std::int64_t>(v);
}
std::int64_t as_int(const Value& v) {
  if (auto b = std::get_if<bool>(&v)) return *b ? 1 : 0;
  return std::get<std::int64_t>(v);
}
double as_double(const Value& v) {
  if (auto d = std::get_if<double>(&v)) return *d;
  return static_cast<double>(as_int(v));
}

bool truthy(const Value& v) {
  if (std::holds_alternative<NoneV>(v)) return false;
  if (auto b = std::get_if<bool>(&v)) return *b;
  if (auto i = std::get_if<std::int64_t>(&v)) return *i != 0;
  if (auto d = std::get_if<double>(&v)) return *d != 0.0;
  if (auto s = std::get_if<std::string>(&v)) return !s->empty();
  if (auto l = std::get_if<ListV>(&v)) return !l->items->empty();
  if (auto r = std::get_if<RangeV>(&v)) return r->step > 0 ? r->start < r->stop : r->start > r->stop;
  return true;
}

std::string str_repr(const std::string& s) {
  bool has_single = s.find('\'') != std::string::npos;
  bool has_double = s.find('"') != std::string::npos;
  char q = (has_single && !has_double) ? '"' : '\'';
  std::string out(1, q);
  for (unsigned char c : s) {
    switch (c) {
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      case '\\': out += "\\\\"; break;
      default:
        if (c == static_cast<unsigned char>(q)) {
          out.push_back('\\');
          out.push_back(static_cast<char>(c));
        } else if (c < 0x20 || c == 0x7f) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\x%02x", c);
          out += buf;
        } else {
          out.push_back(static_cast<char>(c));
        }
    }
  }
  out.push_back(q);
  return out;
}

std::size_t codepoints(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

std::vector<std::string> split_codepoints(const std::string& s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t len = 1;
    auto c = static_cast<unsigned char>(s[i]);
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<Value> iterate(const Value& v) {
  if (auto l = std::get_if<ListV>(&v)) return *l->items;
  if (auto r = std::get_if<RangeV>(&v)) {
    std::vector<Value> out;
    if (r->step > 0) {
      for (std::int64_t i = r->start; i < r->stop; i += r->step) out.emplace_back(i);
    } else {
      for (std::int64_t i = r->start; i > r->stop; i += r->step) out.emplace_back(i);
    }
    return out;
  }
  if (auto s = std::get_if<std::string>(&v)) {
    std::vector<Value> out;
    for (auto& cp : split_codepoints(*s)) out.emplace_back(cp);
    return out;
  }
  raise("TypeError", std::string("'") + type_name(v) + "' object is not iterable");
}

Value make_list(std::vector<Value> items, bool tuple = false) {
  return ListV{std::make_shared<std::vector<Value>>(std::move(items)), tuple};
}

bool equal(const Value& a, const Value& b) {
  if (is_number(a) && is_number(b)) {
    if (is_int_like(a) && is_int_like(b)) return as_int(a) == as_int(b);
    return as_double(a) == as_double(b);
  }
  if (a.index() != b.index()) return false;
  if (std::holds_alternative<NoneV>(a)) return true;
  if (auto s = std::get_if<std::string>(&a)) return *s == std::get<std::string>(b);
  if (auto l = std::get_if<ListV>(&a)) {
    const auto& r = std::get<ListV>(b);
    if (l->tuple != r.tuple || l->items->size() != r.items->size()) return false;
    for (std::size_t i = 0; i < l->items->size(); ++i) {
      if (!equal((*l->items)[i], (*r.items)[i])) return false;
    }
    return true;
  }
  if (auto m = std::get_if<ModuleV>(&a)) return m->name == std::get<ModuleV>(b).name;
  if (auto f = std::get_if<FuncV>(&a)) return f->name == std::get<FuncV>(b).name;
  if (auto t = std::get_if<ExcTypeV>(&a)) return t->name == std::get<ExcTypeV>(b).name;
  return false;
}

int compare(const Value& a, const Value& b, const std::string& op) {
  if (is_number(a) && is_number(b)) {
    if (is_int_like(a) && is_int_like(b)) {
      auto x = as_int(a), y = as_int(b);
      return x < y ? -1 : x > y ? 1 : 0;
    }
    double x = as_double(a), y = as_double(b);
    if (std::isnan(x) || std::isnan(y)) return 2;
    return x < y ? -1 : x > y ? 1 : 0;
  }
  if (std::holds_alternative<std::string>(a) && std::holds_alternative<std::string>(b)) {
    int c = std::get<std::string>(a).compare(std::get<std::string>(b));
    return c < 0 ? -1 : c > 0 ? 1 : 0;
  }
  if (std::holds_alternative<ListV>(a) && std::holds_alternative<ListV>(b) &&
      std::get<ListV>(a).tuple == std::get<ListV>(b).tuple) {
    const auto& x = *std::get<ListV>(a).items;
    const auto& y = *std::get<ListV>(b).items;
    for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i) {
      if (!equal(x[i], y[i])) return compare(x[i], y[i], op);
    }
    return x.size() < y.size() ? -1 : x.size() > y.size() ? 1 : 0;
  }
  raise("TypeError", "'" + op + "' not supported between instances of '" + type_name(a) + "' and '" +
                         type_name(b) + "'");
}

std::int64_t checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t r = 0;
  if (__builtin_add_overflow(a, b, &r)) unsupported("integers beyond 64 bits");
  return r;
}
std::int64_t checked_sub(std::int64_t a, std::int64_t b) {
  std::int64_t r = 0;
  if (__builtin_sub_overflow(a, b, &r)) unsupported("integers beyond 64 bits");
  return r;
}
std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r)) unsupported("integers beyond 64 bits");
  return r;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::int64_t floor_mod(std::int64_t a, std::int64_t b) {
  std::int64_t r = a % b;
  if (r != 0 && ((r < 0) != (b < 0))) r += b;
  return r;
}

double py_fmod(double a, double b) {
  double r = std::fmod(a, b);
  if (r != 0.0) {
    if ((b < 0) != (r < 0)) r += b;
  } else {
    r = std::copysign(0.0, b);
  }
  return r;
}

Value int_pow(std::int64_t base, std::int64_t exp) {
  if (exp < 0) {
    if (base == 0) raise("ZeroDivisionError", "0.0 cannot be raised to a negative power");
    return std::pow(static_cast<double>(base), static_cast<double>(exp));
  }
  std::int64_t result = 1;
  std::int64_t b = base;
  while (exp > 0) {
    if (exp & 1) result = checked_mul(result, b);
    exp >>= 1;
    if (exp > 0) b = checked_mul(b, b);
  }
  return result;
}

Value binary(const std::string& op, const Value& a, const Value& b) {
  auto type_error = [&]() -> Value {
    raise("TypeError", "unsupported operand type(s) for " + op + ": '" + type_name(a) + "' and '" +
                           type_name(b) + "'");
  };
  if (is_number(a) && is_number(b)) {
    bool ints = is_int_like(a) && is_int_like(b);
    if (ints) {
      std::int64_t x = as_int(a), y = as_int(b);
      if (op == "+") return checked_add(x, y);
      if (op == "-") return checked_sub(x, y);
      if (op == "*") return checked_mul(x, y);
      if (op == "/") {
        if (y == 0) raise("ZeroDivisionError", "division by zero");
        return static_cast<double>(x) / static_cast<double>(y);
      }
      if (op == "//") {
        if (y == 0) raise("ZeroDivisionError", "integer division or modulo by zero");
        return floor_div(x, y);
      }
      if (op == "%") {
        if (y == 0) raise("ZeroDivisionError", "integer division or modulo by zero");
        return floor_mod(x, y);
      }
      if (op == "**") return int_pow(x, y);
    }
    double x = as_double(a), y = as_double(b);
    if (op == "+") return x + y;
    if (op == "-") return x - y;
    if (op == "*") return x * y;
    if (op == "/") {
      if (y == 0.0) raise("ZeroDivisionError", "float division by zero");
      return x / y;
    }
    if (op == "//") {
      if (y == 0.0) raise("ZeroDivisionError", "float floor division by zero");
      return std::floor(x / y);
    }
    if (op == "%") {
      if (y == 0.0) raise("ZeroDivisionError", "float modulo");
      return py_fmod(x, y);
    }
    if (op == "**") {
      if (x == 0.0 && y < 0) raise("ZeroDivisionError", "0.0 cannot be raised to a negative power");
      if (x < 0 && std::floor(y) != y) unsupported("complex results");
      double r = std::pow(x, y);
      if (std::isinf(r) && !std::isinf(x)) raise("OverflowError", "(34, 'Numerical result out of range')");
      return r;
    }
    return type_error();
  }
  if (auto s = std::get_if<std::string>(&a)) {
    if (op == "+") {
      if (auto t = std::get_if<std::string>(&b)) return *s + *t;
      raise("TypeError", std::string("can only concatenate str (not \"") + type_name(b) + "\") to str");
    }
    if (op == "*" && is_int_like(b)) {
      std::string out;
      for (std::int64_t i = 0; i < as_int(b); ++i) out += *s;
      return out;
    }
    if (op == "%") unsupported("printf-style string formatting");
  }
  if (auto l = std::get_if<ListV>(&a)) {
    if (op == "+") {
      auto r = std::get_if<ListV>(&b);
      if (!r || r->tuple != l->tuple) {
        raise("TypeError", std::string("can only concatenate ") + (l->tuple ? "tuple" : "list") +
                               " (not \"" + type_name(b) + "\") to " + (l->tuple ? "tuple" : "list"));
      }
      auto items = *l->items;
      items.insert(items.end(), r->items->begin(), r->items->end());
      return make_list(std::move(items), l->tuple);
    }
    if (op == "*" && is_int_like(b)) {
      std::vector<Value> items;
      for (std::int64_t i = 0; i < as_int(b); ++i) items.insert(items.end(), l->items->begin(), l->items->end());
      return make_list(std::move(items), l->tuple);
    }
  }
  if (is_int_like(a) && op == "*" && (std::holds_alternative<std::string>(b) || std::holds_alternative<ListV>(b))) {
    return binary(op, b, a);
  }
  return type_error();
}

bool contains(const Value& container, const Value& item) {
  if (auto s = std::get_if<std::string>(&container)) {
    auto t = std::get_if<std::string>(&item);
    if (!t) {
      raise("TypeError", std::string("'in <string>' requires string as left operand, not ") + type_name(item));
    }
    return s->find(*t) != std::string::npos;
  }
  for (const auto& v : iterate(container)) {
    if (equal(v, item)) return true;
  }
  return false;
}

std::string apply_format_spec(const Value& v, const std::string& spec) {
  if (spec.empty()) return str(v);
  // [[fill]align][sign][width][,][.precision][type]
  std::size_t i = 0;
  char fill = ' ', align = 0;
  if (spec.size() >= 2 && std::strchr("<>^=", spec[1]) && spec[1] != '\0') {
    fill = spec[0];
    align = spec[1];
    i = 2;
  } else if (!spec.empty() && std::strchr("<>^=", spec[0]) && spec[0] != '\0') {
    align = spec[0];
    i = 1;
  }
  char sign = '-';
  if (i < spec.size() && (spec[i] == '+' || spec[i] == ' ' || spec[i] == '-')) sign = spec[i++];
  if (i < spec.size() && spec[i] == '0' && !align) {
    fill = '0';
    align = '=';
    ++i;
  }
  std::size_t width = 0;
  while (i < spec.size() && std::isdigit(static_cast<unsigned char>(spec[i]))) width = width * 10 + (spec[i++] - '0');
  bool comma = false;
  if (i < spec.size() && spec[i] == ',') {
    comma = true;
    ++i;
  }
  int precision = -1;
  if (i < spec.size() && spec[i] == '.') {
    ++i;
    precision = 0;
    while (i < spec.size() && std::isdigit(static_cast<unsigned char>(spec[i]))) precision = precision * 10 + (spec[i++] - '0');
  }
  char type = 0;
  if (i < spec.size()) type = spec[i++];
  if (i != spec.size()) raise("ValueError", "Invalid format specifier");

  std::string body;
  bool numeric = is_number(v) && !std::holds_alternative<bool>(v);
  if (type == 0 && numeric && precision < 0) {
    body = str(v);
  } else if (type == 0 || type == 's') {
    if (type == 's' && !std::holds_alternative<std::string>(v)) {
      raise("ValueError", std::string("Unknown format code 's' for object of type '") + type_name(v) + "'");
    }
    body = str(v);
    if (precision >= 0 && !numeric) body = body.substr(0, static_cast<std::size_t>(precision));
    if (type == 0 && numeric && precision >= 0) {
      unsupported("general float formatting");
    }
  } else if (type == 'd') {
    if (!is_int_like(v)) {
      raise("ValueError", std::string("Unknown format code 'd' for object of type '") + type_name(v) + "'");
    }
    body = std::to_string(as_int(v));
  } else if (type == 'f' || type == 'F' || type == 'e' || type == 'E' || type == '%') {
    if (!is_number(v)) {
      raise("ValueError", std::string("Unknown format code '") + type + "' for object of type '" + type_name(v) + "'");
    }
    double d = as_double(v);
    if (type == '%') d *= 100.0;
    int prec = precision < 0 ? 6 : precision;
    char conv = type == '%' ? 'f' : type;
    char buf[512];
    std::string fmt = std::string("%.*") + conv;
    std::snprintf(buf, sizeof buf, fmt.c_str(), prec, d);
    body = buf;
    if (type == '%') body += "%";
  } else {
    unsupported(std::string("format code '") + type + "'");
  }
  if (comma) {
    std::size_t start = (!body.empty() && body[0] == '-') ? 1 : 0;
    std::size_t end = body.find_first_not_of("0123456789", start);
    if (end == std::string::npos) end = body.size();
    std::string digits = body.substr(start, end - start);
    std::string grouped;
    for (std::size_t k = 0; k < digits.size(); ++k) {
      if (k > 0 && (digits.size() - k) % 3 == 0) grouped.push_back(',');
      grouped.push_back(digits[k]);
    }
    body = body.substr(0, start) + grouped + body.substr(end);
  }
  if (numeric && sign != '-' && !body.empty() && body[0] != '-') body.insert(body.begin(), sign);
  std::size_t len = codepoints(body);
  if (len < width) {
    std::size_t pad = width - len;
    if (!align) align = numeric ? '>' : '<';
    if (align == '<') {
      body += std::string(pad, fill);
    } else if (align == '>') {
      body = std::string(pad, fill) + body;
    } else if (align == '^') {
      body = std::string(pad / 2, fill) + body + std::string(pad - pad / 2, fill);
    } else {
      std::size_t at = (!body.empty() && (body[0] == '-' || body[0] == '+' || body[0] == ' ')) ? 1 : 0;
      body.insert(at, std::string(pad, fill));
    }
  }
  return body;
}

struct BreakSignal {};
struct ContinueSignal {};

}  // namespace

std::string float_repr(double d) {
  if (std::isnan(d)) return "nan";
  if (std::isinf(d)) return d < 0 ? "-inf" : "inf";
  if (d == 0.0) return std::signbit(d) ? "-0.0" : "0.0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, d, std::chars_format::scientific);
  std::string sci(buf, res.ptr);
  bool neg = sci[0] == '-';
  if (neg) sci.erase(0, 1);
  auto epos = sci.find('e');
  std::string mant = sci.substr(0, epos);
  int exp = std::stoi(sci.substr(epos + 1));
  std::string digits;
  for (char c : mant) {
    if (c != '.') digits.push_back(c);
  }
  int decpt = exp + 1;
  std::string out;
  if (decpt <= -4 || decpt > 16) {
    out = digits.substr(0, 1);
    if (digits.size() > 1) out += "." + digits.substr(1);
    char eb[16];
    std::snprintf(eb, sizeof eb, "e%c%02d", exp < 0 ? '-' : '+', std::abs(exp));
    out += eb;
  } else if (decpt <= 0) {
    out = "0." + std::string(static_cast<std::size_t>(-decpt), '0') + digits;
  } else if (static_cast<std::size_t>(decpt) >= digits.size()) {
    out = digits + std::string(static_cast<std::size_t>(decpt) - digits.size(), '0') + ".0";
  } else {
    out = digits.substr(0, static_cast<std::size_t>(decpt)) + "." + digits.substr(static_cast<std::size_t>(decpt));
  }
  return neg ? "-" + out : out;
}

std::string repr(const Value& v) {
  if (std::holds_alternative<NoneV>(v)) return "None";
  if (auto b = std::get_if<bool>(&v)) return *b ? "True" : "False";
  if (auto i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  if (auto d = std::get_if<double>(&v)) return float_repr(*d);
  if (auto s = std::get_if<std::string>(&v)) return str_repr(*s);
  if (auto l = std::get_if<ListV>(&v)) {
    std::string out = l->tuple ? "(" : "[";
    for (std::size_t i = 0; i < l->items->size(); ++i) {
      if (i) out += ", ";
      out += repr((*l->items)[i]);
    }
    if (l->tuple && l->items->size() == 1) out += ",";
    out += l->tuple ? ")" : "]";
    return out;
  }
  if (auto m = std::get_if<ModuleV>(&v)) return "<module '" + m->name + "'>";
  if (auto f = std::get_if<FuncV>(&v)) {
    auto dot = f->name.rfind('.');
    return "<built-in function " + (dot == std::string::npos ? f->name : f->name.substr(dot + 1)) + ">";
  }
  if (auto m = std::get_if<MethodV>(&v)) {
    return "<built-in method " + m->name + " of " + type_name(*m->self) + " object>";
  }
  if (auto t = std::get_if<ExcTypeV>(&v)) return "<class '" + t->name + "'>";
  if (auto e = std::get_if<ExcV>(&v)) {
    return e->ename + "(" + (e->evalue.empty() ? std::string{} : str_repr(e->evalue)) + ")";
  }
  if (auto r = std::get_if<RangeV>(&v)) {
    return "range(" + std::to_string(r->start) + ", " + std::to_string(r->stop) +
           (r->step != 1 ? ", " + std::to_string(r->step) : std::string{}) + ")";
  }
  return "<_io.TextIOWrapper>";
}

std::string str(const Value& v) {
  if (auto s = std::get_if<std::string>(&v)) return *s;
  if (auto e = std::get_if<ExcV>(&v)) return e->evalue;
  return repr(v);
}

const std::set<std::string>& Interpreter::stdlib_modules() {
  static const std::set<std::string> names = {
      "abc",       "argparse",  "array",     "ast",        "asyncio",   "base64",   "bisect",
      "calendar",  "collections", "contextlib", "copy",     "csv",       "dataclasses", "datetime",
      "decimal",   "difflib",   "enum",      "errno",      "fractions", "functools", "gc",
      "glob",      "gzip",      "hashlib",   "heapq",      "html",      "http",     "inspect",
      "io",        "itertools", "json",      "logging",    "math",      "multiprocessing", "operator",
      "os",        "pathlib",   "pickle",    "platform",   "pprint",    "queue",    "random",
      "re",        "shutil",    "signal",    "socket",     "sqlite3",   "statistics", "string",
      "struct",    "subprocess", "sys",      "tempfile",   "textwrap",  "threading", "time",
      "timeit",    "traceback", "types",     "typing",     "unittest",  "urllib",   "uuid",
      "warnings",  "weakref",   "xml",       "zipfile",    "zlib",      "__future__"};
  return names;
}

namespace {

// Modules whose attributes the interpreter models.
const std::map<std::string, std::set<std::string>>& modeled_modules() {
  static const std::map<std::string, std::set<std::string>> m = {
      {"time", {"time", "sleep", "perf_counter", "monotonic"}},
      {"random", {"random", "randint", "seed", "choice", "uniform"}},
      {"math", {"sqrt", "floor", "ceil", "pi", "e", "fabs", "isclose"}},
      {"sys", {"stdout", "stderr"}},
      {"os", {"getcwd", "path", "listdir"}},
      {"os.path", {"exists", "join", "isfile", "isdir", "basename"}},
      {"sys.stdout", {"write", "flush"}},
      {"sys.stderr", {"write", "flush"}},
  };
  return m;
}

const std::set<std::string>& builtin_functions() {
  static const std::set<std::string> f = {"print", "len",   "str",    "int",   "float",  "repr",
                                          "abs",   "min",   "max",    "sum",   "range",  "list",
                                          "tuple", "bool",  "input",  "open",  "round",  "sorted",
                                          "isinstance", "type", "enumerate", "zip"};
  return f;
}

const std::map<std::string, std::string>& builtin_exceptions() {
  // name -> reported class name (IOError and EnvironmentError are aliases of OSError).
  static const std::map<std::string, std::string> e = {
      {"BaseException", "BaseException"},
      {"Exception", "Exception"},
      {"ArithmeticError", "ArithmeticError"},
      {"AssertionError", "AssertionError"},
      {"AttributeError", "AttributeError"},
      {"EOFError", "EOFError"},
      {"EnvironmentError", "OSError"},
      {"FileExistsError", "FileExistsError"},
      {"FileNotFoundError", "FileNotFoundError"},
      {"ImportError", "ImportError"},
      {"IndentationError", "IndentationError"},
      {"IndexError", "IndexError"},
      {"IOError", "OSError"},
      {"IsADirectoryError", "IsADirectoryError"},
      {"KeyError", "KeyError"},
      {"KeyboardInterrupt", "KeyboardInterrupt"},
      {"LookupError", "LookupError"},
      {"MemoryError", "MemoryError"},
      {"ModuleNotFoundError", "ModuleNotFoundError"},
      {"NameError", "NameError"},
      {"NotImplementedError", "NotImplementedError"},
      {"OSError", "OSError"},
      {"OverflowError", "OverflowError"},
      {"PermissionError", "PermissionError"},
      {"RecursionError", "RecursionError"},
      {"RuntimeError", "RuntimeError"},
      {"StopIteration", "StopIteration"},
      {"SyntaxError", "SyntaxError"},
      {"SystemError", "SystemError"},
      {"TimeoutError", "TimeoutError"},
      {"TypeError", "TypeError"},
      {"UnicodeError", "UnicodeError"},
      {"ValueError", "ValueError"},
      {"ZeroDivisionError", "ZeroDivisionError"},
  };
  return e;
}

}  // namespace

class Evaluator {
 public:
  Evaluator(Interpreter& in, Host& host) : in_(in), host_(host) {}

  void exec_block(const std::vector<StmtPtr>& body) {
    for (const auto& s : body) exec(*s);
  }

  void exec(const Stmt& s) {
    check_interrupt();
    switch (s.kind) {
      case SK::Expr:
        last_value_ = eval(*s.value);
        return;
      case SK::Assign: {
        Value v = eval(*s.value);
        for (auto& t : s.targets) assign(*t, v);
        return;
      }
      case SK::AugAssign: {
        Value cur = eval(*s.targets[0]);
        assign(*s.targets[0], binary(s.op, cur, eval(*s.value)));
        return;
      }
      case SK::Import:
        for (const auto& [dotted, alias] : s.names) {
          import_module(dotted);
          if (!alias.empty()) {
            in_.globals_[alias] = ModuleV{dotted};
          } else {
            auto top = dotted.substr(0, dotted.find('.'));
            in_.globals_[top] = ModuleV{top};
          }
        }
        return;
      case SK::ImportFrom: {
        if (s.level > 0) raise("ImportError", "attempted relative import with no known parent package");
        import_module(s.module);
        if (s.star) {
          auto it = modeled_modules().find(s.module);
          if (it == modeled_modules().end()) unsupported("star imports from '" + s.module + "'");
          for (const auto& name : it->second) in_.globals_[name] = attribute(ModuleV{s.module}, name);
          return;
        }
        for (const auto& [name, alias] : s.names) {
          Value v;
          if (modeled_modules().count(s.module)) {
            if (!modeled_modules().at(s.module).count(name)) {
              raise("ImportError", "cannot import name '" + name + "' from '" + s.module + "' (unknown location)");
            }
            v = attribute(ModuleV{s.module}, name);
          } else {
            v = ModuleV{s.module + "." + name};
          }
          in_.globals_[alias.empty() ? name : alias] = v;
        }
        return;
      }
      case SK::Raise: {
        if (!s.value) raise("RuntimeError", "No active exception to reraise");
        Value v = eval(*s.value);
        if (auto t = std::get_if<ExcTypeV>(&v)) raise(t->name, "");
        if (auto e = std::get_if<ExcV>(&v)) raise(e->ename, e->evalue);
        raise("TypeError", "exceptions must derive from BaseException");
      }
      case SK::Pass:
        return;
      case SK::Break:
        throw BreakSignal{};
      case SK::Continue:
        throw ContinueSignal{};
      case SK::Assert:
        if (!truthy(eval(*s.value))) raise("AssertionError", s.extra ? str(eval(*s.extra)) : "");
        return;
      case SK::If:
        if (truthy(eval(*s.value))) {
          exec_block(s.body);
        } else {
          exec_block(s.orelse);
        }
        return;
      case SK::While: {
        std::uint64_t spins = 0;
        while (truthy(eval(*s.value))) {
          if (++spins % 4096 == 0) std::this_thread::sleep_for(std::chrono::microseconds(200));
          check_interrupt();
          try {
            exec_block(s.body);
          } catch (const BreakSignal&) {
            break;
          } catch (const ContinueSignal&) {
          }
        }
        return;
      }
      case SK::For: {
        for (const auto& item : iterate(eval(*s.value))) {
          check_interrupt();
          assign(*s.targets[0], item);
          try {
            exec_block(s.body);
          } catch (const BreakSignal&) {
            break;
          } catch (const ContinueSignal&) {
          }
        }
        return;
      }
    }
  }

  Value last_value_ = NoneV{};

 private:
  void check_interrupt() {
    if (host_.interrupted && host_.interrupted()) throw Interrupted{};
  }

  void import_module(const std::string& dotted) {
    std::string top = dotted.substr(0, dotted.find('.'));
    if (!Interpreter::stdlib_modules().count(top) && !in_.importable_.count(top)) {
      raise("ModuleNotFoundError", "No module named '" + top + "'");
    }
    if (dotted != top && modeled_modules().count(top) && !modeled_modules().count(dotted)) {
      raise("ModuleNotFoundError", "No module named '" + dotted + "'");
    }
  }

  void assign(const Expr& target, const Value& v) {
    if (target.kind == EK::Name) {
      in_.globals_[target.op] = v;
      return;
    }
    if (target.kind == EK::List) {
      auto items = iterate(v);
      if (items.size() != target.kids.size()) {
        if (items.size() > target.kids.size()) {
          raise("ValueError", "too many values to unpack (expected " + std::to_string(target.kids.size()) + ")");
        }
        raise("ValueError", "not enough values to unpack (expected " + std::to_string(target.kids.size()) +
                                ", got " + std::to_string(items.size()) + ")");
      }
      for (std::size_t i = 0; i < items.size(); ++i) assign(*target.kids[i], items[i]);
      return;
    }
    if (target.kind == EK::Subscript) {
      Value container = eval(*target.kids[0]);
      auto l = std::get_if<ListV>(&container);
      if (!l || l->tuple) {
        raise("TypeError", std::string("'") + type_name(container) + "' object does not support item assignment");
      }
      if (target.kids[1]->kind == EK::Slice) unsupported("slice assignment");
      std::size_t idx = index_of(eval(*target.kids[1]), l->items->size(), "list assignment");
      (*l->items)[idx] = v;
      return;
    }
    unsupported("this assignment target");
  }

  static std::size_t index_of(const Value& idx, std::size_t size, const std::string& what) {
    if (!is_int_like(idx)) {
      raise("TypeError", what + " indices must be integers or slices, not " + type_name(idx));
    }
    std::int64_t i = as_int(idx);
    if (i < 0) i += static_cast<std::int64_t>(size);
    if (i < 0 || i >= static_cast<std::int64_t>(size)) raise("IndexError", what + " index out of range");
    return static_cast<std::size_t>(i);
  }

  Value lookup(const std::string& name) {
    auto it = in_.globals_.find(name);
    if (it != in_.globals_.end()) return it->second;
    if (builtin_functions().count(name)) return FuncV{name};
    auto ex = builtin_exceptions().find(name);
    if (ex != builtin_exceptions().end()) return ExcTypeV{ex->second};
    raise("NameError", "name '" + name + "' is not defined");
  }

  Value attribute(const Value& obj, const std::string& name) {
    if (auto m = std::get_if<ModuleV>(&obj)) {
      auto it = modeled_modules().find(m->name);
      if (it == modeled_modules().end()) unsupported("attributes of module '" + m->name + "'");
      if (!it->second.count(name)) {
        raise("AttributeError", "module '" + m->name + "' has no attribute '" + name + "'");
      }
      std::string full = m->name + "." + name;
      if (full == "math.pi") return M_PI;
      if (full == "math.e") return M_E;
      if (modeled_modules().count(full)) return ModuleV{full};
      return FuncV{full};
    }
    static const std::map<std::string, std::set<std::string>> methods = {
        {"str", {"upper", "lower", "strip", "lstrip", "rstrip", "split", "join", "replace", "startswith",
                 "endswith", "format", "count", "find"}},
        {"list", {"append", "extend", "pop", "index", "count"}},
        {"tuple", {"index", "count"}},
        {"_io.TextIOWrapper", {"read", "close", "readlines"}},
    };
    std::string tn = type_name(obj);
    auto it = methods.find(tn);
    if (it != methods.end() && it->second.count(name)) {
      return MethodV{std::make_shared<Value>(obj), name};
    }
    if (std::holds_alternative<ExcV>(obj) && name == "args") {
      const auto& e = std::get<ExcV>(obj);
      return make_list(e.evalue.empty() ? std::vector<Value>{} : std::vector<Value>{e.evalue}, true);
    }
    raise("AttributeError", "'" + tn + "' object has no attribute '" + name + "'");
  }

  Value eval(const Expr& e) {
    switch (e.kind) {
      case EK::Const:
        return e.value;
      case EK::Name:
        return lookup(e.op);
      case EK::Bin:
        return binary(e.op, eval(*e.kids[0]), eval(*e.kids[1]));
      case EK::Unary: {
        Value v = eval(*e.kids[0]);
        if (!is_number(v)) {
          raise("TypeError", std::string("bad operand type for unary ") + e.op + ": '" + type_name(v) + "'");
        }
        if (e.op == "+") return is_int_like(v) ? Value(as_int(v)) : v;
        if (is_int_like(v)) return checked_sub(0, as_int(v));
        return -as_double(v);
      }
      case EK::Not:
        return !truthy(eval(*e.kids[0]));
      case EK::And: {
        Value l = eval(*e.kids[0]);
        return truthy(l) ? eval(*e.kids[1]) : l;
      }
      case EK::Or: {
        Value l = eval(*e.kids[0]);
        return truthy(l) ? l : eval(*e.kids[1]);
      }
      case EK::IfExp:
        return truthy(eval(*e.kids[0])) ? eval(*e.kids[1]) : eval(*e.kids[2]);
      case EK::Compare: {
        Value left = eval(*e.kids[0]);
        for (std::size_t i = 0; i < e.ops.size(); ++i) {
          Value right = eval(*e.kids[i + 1]);
          const std::string& op = e.ops[i];
          bool ok;
          if (op == "==") ok = equal(left, right);
          else if (op == "!=") ok = !equal(left, right);
          else if (op == "in") ok = contains(right, left);
          else if (op == "not in") ok = !contains(right, left);
          else if (op == "is" || op == "is not") {
            bool same = (std::holds_alternative<NoneV>(left) && std::holds_alternative<NoneV>(right)) ||
                        (std::holds_alternative<bool>(left) && std::holds_alternative<bool>(right) &&
                         std::get<bool>(left) == std::get<bool>(right));
            ok = op == "is" ? same : !same;
          } else {
            int c = compare(left, right, op);
            if (c == 2) ok = false;
            else if (op == "<") ok = c < 0;
            else if (op == ">") ok = c > 0;
            else if (op == "<=") ok = c <= 0;
            else ok = c >= 0;
          }
          if (!ok) return false;
          left = right;
        }
        return true;
      }
      case EK::Attr:
        return attribute(eval(*e.kids[0]), e.op);
      case EK::Subscript: {
        Value obj = eval(*e.kids[0]);
        const Expr& idx = *e.kids[1];
        if (idx.kind == EK::Slice) return slice(obj, idx);
        Value i = eval(idx);
        if (auto l = std::get_if<ListV>(&obj)) {
          return (*l->items)[index_of(i, l->items->size(), l->tuple ? "tuple" : "list")];
        }
        if (auto s = std::get_if<std::string>(&obj)) {
          auto cps = split_codepoints(*s);
          return cps[index_of(i, cps.size(), "string")];
        }
        if (std::holds_alternative<RangeV>(obj)) {
          auto items = iterate(obj);
          return items[index_of(i, items.size(), "range object")];
        }
        raise("TypeError", std::string("'") + type_name(obj) + "' object is not subscriptable");
      }
      case EK::List: {
        std::vector<Value> items;
        for (auto& k : e.kids) items.push_back(eval(*k));
        return make_list(std::move(items), e.tuple);
      }
      case EK::ListComp: {
        std::vector<Value> items;
        const Expr& target = *e.kids[1];
        std::map<std::string, Value> saved;
        collect_names(target, saved);
        for (const auto& item : iterate(eval(*e.kids[2]))) {
          check_interrupt();
          assign(target, item);
          if (e.kids[3] && !truthy(eval(*e.kids[3]))) continue;
          items.push_back(eval(*e.kids[0]));
        }
        for (auto& [name, v] : saved) {
          if (std::holds_alternative<ExcTypeV>(v) && std::get<ExcTypeV>(v).name == "\x01unbound") {
            in_.globals_.erase(name);
          } else {
            in_.globals_[name] = v;
          }
        }
        return make_list(std::move(items));
      }
      case EK::FString: {
        std::string out;
        for (std::size_t i = 0; i < e.kids.size(); ++i) {
          out += e.ops[i];
          if (!e.kids[i]) continue;
          Value v = eval(*e.kids[i]);
          if (e.conv[i] == 'r' || e.conv[i] == 'a') v = repr(v);
          else if (e.conv[i] == 's') v = str(v);
          out += apply_format_spec(v, e.specs[i]);
        }
        return out;
      }
      case EK::Call:
        return call(e);
      case EK::Slice:
        break;
    }
    syntax_error("invalid syntax");
  }

  void collect_names(const Expr& target, std::map<std::string, Value>& saved) {
    if (target.kind == EK::Name) {
      auto it = in_.globals_.find(target.op);
      saved[target.op] = it != in_.globals_.end() ? it->second : Value(ExcTypeV{"\x01unbound"});
    } else if (target.kind == EK::List) {
      for (auto& k : target.kids) collect_names(*k, saved);
    }
  }

  Value slice(const Value& obj, const Expr& sl) {
    auto bound = [&](const ExprPtr& p, std::int64_t dflt, std::int64_t size) {
      if (!p) return dflt;
      Value v = eval(*p);
      if (std::holds_alternative<NoneV>(v)) return dflt;
      if (!is_int_like(v)) raise("TypeError", "slice indices must be integers or None or have an __index__ method");
      std::int64_t i = as_int(v);
      if (i < 0) i += size;
      return std::clamp<std::int64_t>(i, 0, size);
    };
    if (auto l = std::get_if<ListV>(&obj)) {
      auto n = static_cast<std::int64_t>(l->items->size());
      auto lo = bound(sl.kids[0], 0, n), hi = bound(sl.kids[1], n, n);
      std::vector<Value> items;
      for (auto i = lo; i < hi; ++i) items.push_back((*l->items)[static_cast<std::size_t>(i)]);
      return make_list(std::move(items), l->tuple);
    }
    if (auto s = std::get_if<std::string>(&obj)) {
      auto cps = split_codepoints(*s);
      auto n = static_cast<std::int64_t>(cps.size());
      auto lo = bound(sl.kids[0], 0, n), hi = bound(sl.kids[1], n, n);
      std::string out;
      for (auto i = lo; i < hi; ++i) out += cps[static_cast<std::size_t>(i)];
      return out;
    }
    raise("TypeError", std::string("'") + type_name(obj) + "' object is not subscriptable");
  }

  Value call(const Expr& e) {
    Value fn = eval(*e.kids[0]);
    std::vector<Value> args;
    for (std::size_t i = 1; i < e.kids.size(); ++i) args.push_back(eval(*e.kids[i]));
    std::map<std::string, Value> kwargs;
    for (std::size_t i = 0; i < e.kw.size(); ++i) kwargs[e.ops[i]] = eval(*e.kw[i]);

    if (auto t = std::get_if<ExcTypeV>(&fn)) {
      if (!kwargs.empty()) raise("TypeError", t->name + "() takes no keyword arguments");
      std::string evalue;
      if (args.size() == 1) {
        evalue = str(args[0]);
      } else if (args.size() > 1) {
        evalue = repr(make_list(args, true));
      }
      return ExcV{t->name, evalue};
    }
    if (auto m = std::get_if<MethodV>(&fn)) return call_method(*m->self, m->name, args);
    auto f = std::get_if<FuncV>(&fn);
    if (!f) raise("TypeError", std::string("'") + type_name(fn) + "' object is not callable");
    return call_builtin(f->name, args, kwargs);
  }

  static void arity(const std::string& name, const std::vector<Value>& args, std::size_t lo, std::size_t hi) {
    if (args.size() < lo || args.size() > hi) {
      std::string want = lo == hi ? "exactly " + std::to_string(lo) : "at most " + std::to_string(hi);
      if (args.size() < lo && lo != hi) want = "at least " + std::to_string(lo);
      raise("TypeError", name + "() takes " + want + " argument" + (hi == 1 && lo == hi ? "" : "s") + " (" +
                             std::to_string(args.size()) + " given)");
    }
  }

  Value call_builtin(const std::string& name, std::vector<Value>& args, std::map<std::string, Value>& kwargs) {
    auto kw_only = [&](std::initializer_list<const char*> allowed) {
      for (auto& [k, v] : kwargs) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || k == a;
        if (!ok) raise("TypeError", "'" + k + "' is an invalid keyword argument for " + name + "()");
      }
    };
    if (name == "print") {
      kw_only({"sep", "end", "file", "flush"});
      std::string sep = " ", end = "\n";
      if (kwargs.count("sep") && !std::holds_alternative<NoneV>(kwargs["sep"])) sep = str(kwargs["sep"]);
      if (kwargs.count("end") && !std::holds_alternative<NoneV>(kwargs["end"])) end = str(kwargs["end"]);
      bool to_stderr = false;
      if (kwargs.count("file")) {
        auto m = std::get_if<ModuleV>(&kwargs["file"]);
        if (!m || (m->name != "sys.stdout" && m->name != "sys.stderr")) unsupported("printing to files");
        to_stderr = m->name == "sys.stderr";
      }
      std::string out;
      for (std::size_t i = 0; i < args.size(); ++i) {
        if (i) out += sep;
        out += str(args[i]);
      }
      out += end;
      if (!out.empty()) host_.write(to_stderr, out);
      return NoneV{};
    }
    if (!kwargs.empty() && name != "sorted" && name != "sum" && name != "open" && name != "round") {
      raise("TypeError", name + "() takes no keyword arguments");
    }
    if (name == "len") {
      arity(name, args, 1, 1);
      if (auto s = std::get_if<std::string>(&args[0])) return static_cast<std::int64_t>(codepoints(*s));
      if (auto l = std::get_if<ListV>(&args[0])) return static_cast<std::int64_t>(l->items->size());
      if (std::holds_alternative<RangeV>(args[0])) return static_cast<std::int64_t>(iterate(args[0]).size());
      raise("TypeError", std::string("object of type '") + type_name(args[0]) + "' has no len()");
    }
    if (name == "str") {
      arity(name, args, 0, 1);
      return args.empty() ? std::string{} : str(args[0]);
    }
    if (name == "repr") {
      arity(name, args, 1, 1);
      return repr(args[0]);
    }
    if (name == "bool") {
      arity(name, args, 0, 1);
      return !args.empty() && truthy(args[0]);
    }
    if (name == "int") {
      arity(name, args, 0, 1);
      if (args.empty()) return std::int64_t{0};
      if (is_int_like(args[0])) return as_int(args[0]);
      if (auto d = std::get_if<double>(&args[0])) {
        if (std::isnan(*d)) raise("ValueError", "cannot convert float NaN to integer");
        if (std::isinf(*d)) raise("OverflowError", "cannot convert float infinity to integer");
        if (std::fabs(*d) >= 9.2e18) unsupported("integers beyond 64 bits");
        return static_cast<std::int64_t>(std::trunc(*d));
      }
      if (auto s = std::get_if<std::string>(&args[0])) {
        std::string t = *s;
        t.erase(0, t.find_first_not_of(" \t\n"));
        t.erase(t.find_last_not_of(" \t\n") + 1);
        std::string digits = t;
        if (!digits.empty() && (digits[0] == '+' || digits[0] == '-')) digits.erase(0, 1);
        bool ok = !digits.empty() && std::all_of(digits.begin(), digits.end(), [](char c) {
          return std::isdigit(static_cast<unsigned char>(c));
        });
        if (!ok) raise("ValueError", "invalid literal for int() with base 10: " + str_repr(*s));
        std::int64_t v = 0;
        const char* b = t.c_str() + (t[0] == '+' ? 1 : 0);
        auto [ptr, ec] = std::from_chars(b, t.c_str() + t.size(), v);
        if (ec != std::errc()) unsupported("integers beyond 64 bits");
        return v;
      }
      raise("TypeError", std::string("int() argument must be a string, a bytes-like object or a real number, not '") +
                             type_name(args[0]) + "'");
    }
    if (name == "float") {
      arity(name, args, 0, 1);
      if (args.empty()) return 0.0;
      if (is_number(args[0])) return as_double(args[0]);
      if (auto s = std::get_if<std::string>(&args[0])) {
        std::string t = *s;
        t.erase(0, t.find_first_not_of(" \t\n"));
        t.erase(t.find_last_not_of(" \t\n") + 1);
        std::string lower = t;
        std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
        std::string body = lower;
        if (!body.empty() && (body[0] == '+' || body[0] == '-')) body.erase(0, 1);
        if (body == "inf" || body == "infinity" || body == "nan") {
          double v = body == "nan" ? std::nan("") : HUGE_VAL;
          return lower[0] == '-' ? -v : v;
        }
        char* end = nullptr;
        double v = std::strtod(t.c_str(), &end);
        bool ok = !t.empty() && end == t.c_str() + t.size() &&
                  t.find_first_of("xXpP") == std::string::npos;
        if (!ok) raise("ValueError", "could not convert string to float: " + str_repr(*s));
        return v;
      }
      raise("TypeError", std::string("float() argument must be a string or a real number, not '") +
                             type_name(args[0]) + "'");
    }
    if (name == "abs") {
      arity(name, args, 1, 1);
      if (is_int_like(args[0])) return as_int(args[0]) < 0 ? binary("-", std::int64_t{0}, args[0]) : Value(as_int(args[0]));
      if (auto d = std::get_if<double>(&args[0])) return std::fabs(*d);
      raise("TypeError", std::string("bad operand type for abs(): '") + type_name(args[0]) + "'");
    }
    if (name == "min" || name == "max") {
      if (args.empty()) raise("TypeError", name + " expected at least 1 argument, got 0");
      std::vector<Value> items = args.size() == 1 ? iterate(args[0]) : args;
      if (items.empty()) raise("ValueError", name + "() arg is an empty sequence");
      Value best = items[0];
      for (std::size_t i = 1; i < items.size(); ++i) {
        int c = compare(items[i], best, name == "min" ? "<" : ">");
        if ((name == "min" && c < 0) || (name == "max" && c > 0 && c != 2)) best = items[i];
      }
      return best;
    }
    if (name == "sum") {
      arity(name, args, 1, 2);
      Value acc = args.size() == 2 ? args[1] : kwargs.count("start") ? kwargs["start"] : Value(std::int64_t{0});
      if (std::holds_alternative<std::string>(acc)) {
        raise("TypeError", "sum() can't sum strings [use ''.join(seq) instead]");
      }
      for (const auto& v : iterate(args[0])) acc = binary("+", acc, v);
      return acc;
    }
    if (name == "range") {
      arity(name, args, 1, 3);
      for (auto& a : args) {
        if (!is_int_like(a)) {
          raise("TypeError", std::string("'") + type_name(a) + "' object cannot be interpreted as an integer");
        }
      }
      RangeV r{0, 0, 1};
      if (args.size() == 1) {
        r.stop = as_int(args[0]);
      } else {
        r.start = as_int(args[0]);
        r.stop = as_int(args[1]);
        if (args.size() == 3) r.step = as_int(args[2]);
      }
      if (r.step == 0) raise("ValueError", "range() arg 3 must not be zero");
      return r;
    }
    if (name == "list" || name == "tuple") {
      arity(name, args, 0, 1);
      return make_list(args.empty() ? std::vector<Value>{} : iterate(args[0]), name == "tuple");
    }
    if (name == "sorted") {
      arity(name, args, 1, 1);
      auto items = iterate(args[0]);
      bool reverse = kwargs.count("reverse") && truthy(kwargs["reverse"]);
      if (kwargs.count("key")) unsupported("sorted(key=...)");
      std::stable_sort(items.begin(), items.end(), [](const Value& a, const Value& b) { return compare(a, b, "<") < 0; });
      if (reverse) std::reverse(items.begin(), items.end());
      return make_list(std::move(items));
    }
    if (name == "enumerate") {
      arity(name, args, 1, 2);
      std::int64_t start = args.size() == 2 ? as_int(args[1]) : 0;
      std::vector<Value> out;
      for (auto& v : iterate(args[0])) out.push_back(make_list({Value(start++), v}, true));
      return make_list(std::move(out));
    }
    if (name == "zip") {
      std::vector<std::vector<Value>> lists;
      std::size_t n = SIZE_MAX;
      for (auto& a : args) {
        lists.push_back(iterate(a));
        n = std::min(n, lists.back().size());
      }
      if (lists.empty()) n = 0;
      std::vector<Value> out;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<Value> row;
        for (auto& l : lists) row.push_back(l[i]);
        out.push_back(make_list(std::move(row), true));
      }
      return make_list(std::move(out));
    }
    if (name == "round") {
      arity(name, args, 1, 2);
      if (args.size() == 2 && !std::holds_alternative<NoneV>(args[1])) {
        if (is_int_like(args[0])) return as_int(args[0]);
        unsupported("round() with ndigits on floats");
      }
      if (is_int_like(args[0])) return as_int(args[0]);
      double d = as_double(args[0]);
      if (std::isnan(d)) raise("ValueError", "cannot convert float NaN to integer");
      if (std::isinf(d)) raise("OverflowError", "cannot convert float infinity to integer");
      return static_cast<std::int64_t>(std::nearbyint(d));
    }
    if (name == "isinstance" || name == "type") unsupported(name + "()");
    if (name == "input") {
      arity(name, args, 0, 1);
      return host_.input(args.empty() ? std::string{} : str(args[0]));
    }
    if (name == "open") {
      arity(name, args, 1, 3);
      std::string mode = args.size() >= 2 ? str(args[1]) : kwargs.count("mode") ? str(kwargs["mode"]) : "r";
      if (mode.find_first_of("wax+") != std::string::npos) unsupported("opening files for writing");
      if (mode.find('b') != std::string::npos) unsupported("binary file mode");
      auto p = std::get_if<std::string>(&args[0]);
      if (!p) unsupported("opening non-path objects");
      std::filesystem::path path = std::filesystem::path(*p).is_absolute() ? std::filesystem::path(*p) : in_.cwd_ / *p;
      std::error_code ec;
      if (std::filesystem::is_directory(path, ec)) {
        raise("IsADirectoryError", "[Errno 21] Is a directory: " + str_repr(*p));
      }
      std::ifstream in(path, std::ios::binary);
      if (!in) raise("FileNotFoundError", "[Errno 2] No such file or directory: " + str_repr(*p));
      std::ostringstream ss;
      ss << in.rdbuf();
      return FileV{ss.str()};
    }
    if (name == "time.time") {
      arity(name, args, 0, 0);
      return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
    }
    if (name == "time.perf_counter" || name == "time.monotonic") {
      arity(name, args, 0, 0);
      return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
    }
    if (name == "time.sleep") {
      arity(name, args, 1, 1);
      if (!is_number(args[0])) {
        raise("TypeError", std::string("'") + type_name(args[0]) + "' object cannot be interpreted as an integer");
      }
      double secs = as_double(args[0]);
      if (secs < 0) raise("ValueError", "sleep length must be non-negative");
      host_.sleep(std::chrono::milliseconds(static_cast<std::int64_t>(secs * 1000.0)));
      return NoneV{};
    }
    if (name == "random.random") {
      arity(name, args, 0, 0);
      return std::uniform_real_distribution<double>(0.0, 1.0)(in_.rng_);
    }
    if (name == "random.uniform") {
      arity(name, args, 2, 2);
      double a = as_double(args[0]), b = as_double(args[1]);
      return a + (b - a) * std::uniform_real_distribution<double>(0.0, 1.0)(in_.rng_);
    }
    if (name == "random.randint") {
      arity(name, args, 2, 2);
      std::int64_t a = as_int(args[0]), b = as_int(args[1]);
      if (b < a) raise("ValueError", "empty range for randrange()");
      return std::uniform_int_distribution<std::int64_t>(a, b)(in_.rng_);
    }
    if (name == "random.choice") {
      arity(name, args, 1, 1);
      auto items = iterate(args[0]);
      if (items.empty()) raise("IndexError", "Cannot choose from an empty sequence");
      return items[std::uniform_int_distribution<std::size_t>(0, items.size() - 1)(in_.rng_)];
    }
    if (name == "random.seed") {
      arity(name, args, 0, 1);
      in_.rng_.seed(args.empty() ? std::random_device{}() : static_cast<std::uint64_t>(as_int(args[0])));
      return NoneV{};
    }
    if (name == "math.sqrt") {
      arity(name, args, 1, 1);
      double d = as_double(args[0]);
      if (d < 0) raise("ValueError", "math domain error");
      return std::sqrt(d);
    }
    if (name == "math.fabs") {
      arity(name, args, 1, 1);
      return std::fabs(as_double(args[0]));
    }
    if (name == "math.floor" || name == "math.ceil") {
      arity(name, args, 1, 1);
      if (is_int_like(args[0])) return as_int(args[0]);
      double d = name == "math.floor" ? std::floor(as_double(args[0])) : std::ceil(as_double(args[0]));
      return static_cast<std::int64_t>(d);
    }
    if (name == "math.isclose") {
      arity(name, args, 2, 2);
      double a = as_double(args[0]), b = as_double(args[1]);
      return std::fabs(a - b) <= std::max(1e-9 * std::max(std::fabs(a), std::fabs(b)), 0.0);
    }
    if (name == "os.getcwd") {
      arity(name, args, 0, 0);
      return in_.cwd_.string();
    }
    if (name == "os.listdir") {
      arity(name, args, 0, 1);
      auto dir = args.empty() ? in_.cwd_ : in_.cwd_ / str(args[0]);
      std::error_code ec;
      if (!std::filesystem::is_directory(dir, ec)) {
        raise("FileNotFoundError", "[Errno 2] No such file or directory: " + str_repr(args.empty() ? "." : str(args[0])));
      }
      std::vector<Value> out;
      for (auto& entry : std::filesystem::directory_iterator(dir)) out.emplace_back(entry.path().filename().string());
      return make_list(std::move(out));
    }
    if (name == "os.path.exists" || name == "os.path.isfile" || name == "os.path.isdir") {
      arity(name, args, 1, 1);
      auto p = in_.cwd_ / str(args[0]);
      std::error_code ec;
      if (name == "os.path.isfile") return std::filesystem::is_regular_file(p, ec);
      if (name == "os.path.isdir") return std::filesystem::is_directory(p, ec);
      return std::filesystem::exists(p, ec);
    }
    if (name == "os.path.join") {
      if (args.empty()) raise("TypeError", "join() missing 1 required positional argument: 'a'");
      std::filesystem::path p = str(args[0]);
      for (std::size_t i = 1; i < args.size(); ++i) p /= str(args[i]);
      return p.string();
    }
    if (name == "os.path.basename") {
      arity(name, args, 1, 1);
      std::string s = str(args[0]);
      auto slash = s.rfind('/');
      return slash == std::string::npos ? s : s.substr(slash + 1);
    }
    if (name == "sys.stdout.write" || name == "sys.stderr.write") {
      arity("write", args, 1, 1);
      auto s = std::get_if<std::string>(&args[0]);
      if (!s) raise("TypeError", std::string("write() argument must be str, not ") + type_name(args[0]));
      if (!s->empty()) host_.write(name == "sys.stderr.write", *s);
      return static_cast<std::int64_t>(codepoints(*s));
    }
    if (name == "sys.stdout.flush" || name == "sys.stderr.flush") return NoneV{};
    unsupported("calling '" + name + "'");
  }

  Value call_method(Value& self, const std::string& name, std::vector<Value>& args) {
    if (auto f = std::get_if<FileV>(&self)) {
      if (name == "read") return f->content;
      if (name == "close") return NoneV{};
      std::vector<Value> lines;
      std::size_t start = 0;
      while (start < f->content.size()) {
        auto nl = f->content.find('\n', start);
        std::size_t end = nl == std::string::npos ? f->content.size() : nl + 1;
        lines.emplace_back(f->content.substr(start, end - start));
        start = end;
      }
      return make_list(std::move(lines));
    }
    if (auto l = std::get_if<ListV>(&self)) {
      auto& items = *l->items;
      if (name == "append") {
        arity("append", args, 1, 1);
        items.push_back(args[0]);
        return NoneV{};
      }
      if (name == "extend") {
        arity("extend", args, 1, 1);
        for (auto& v : iterate(args[0])) items.push_back(v);
        return NoneV{};
      }
      if (name == "pop") {
        arity("pop", args, 0, 1);
        if (items.empty()) raise("IndexError", "pop from empty list");
        std::size_t idx = args.empty() ? items.size() - 1 : index_of(args[0], items.size(), "pop");
        Value v = items[idx];
        items.erase(items.begin() + static_cast<std::ptrdiff_t>(idx));
        return v;
      }
      if (name == "count") {
        arity("count", args, 1, 1);
        return static_cast<std::int64_t>(std::count_if(items.begin(), items.end(), [&](const Value& v) { return equal(v, args[0]); }));
      }
      arity("index", args, 1, 1);
      for (std::size_t i = 0; i < items.size(); ++i) {
        if (equal(items[i], args[0])) return static_cast<std::int64_t>(i);
      }
      raise("ValueError", repr(args[0]) + " is not in list");
    }
    const std::string& s = std::get<std::string>(self);
    auto want_str = [&](std::size_t i) -> const std::string& {
      auto p = std::get_if<std::string>(&args[i]);
      if (!p) raise("TypeError", std::string("must be str, not ") + type_name(args[i]));
      return *p;
    };
    if (name == "upper" || name == "lower") {
      std::string out = s;
      for (auto& c : out) {
        c = static_cast<char>(name == "upper" ? std::toupper(static_cast<unsigned char>(c))
                                              : std::tolower(static_cast<unsigned char>(c)));
      }
      return out;
    }
    if (name == "strip" || name == "lstrip" || name == "rstrip") {
      arity(name, args, 0, 1);
      std::string chars = args.empty() || std::holds_alternative<NoneV>(args[0]) ? " \t\n\r\f\v" : want_str(0);
      std::size_t b = 0, e = s.size();
      if (name != "rstrip") {
        while (b < e && chars.find(s[b]) != std::string::npos) ++b;
      }
      if (name != "lstrip") {
        while (e > b && chars.find(s[e - 1]) != std::string::npos) --e;
      }
      return s.substr(b, e - b);
    }
    if (name == "split") {
      arity(name, args, 0, 1);
      std::vector<Value> out;
      if (args.empty() || std::holds_alternative<NoneV>(args[0])) {
        std::istringstream ss(s);
        std::string w;
        while (ss >> w) out.emplace_back(w);
      } else {
        const std::string& sep = want_str(0);
        if (sep.empty()) raise("ValueError", "empty separator");
        std::size_t start = 0;
        for (;;) {
          auto at = s.find(sep, start);
          if (at == std::string::npos) {
            out.emplace_back(s.substr(start));
            break;
          }
          out.emplace_back(s.substr(start, at - start));
          start = at + sep.size();
        }
      }
      return make_list(std::move(out));
    }
    if (name == "join") {
      arity(name, args, 1, 1);
      std::string out;
      auto items = iterate(args[0]);
      for (std::size_t i = 0; i < items.size(); ++i) {
        auto p = std::get_if<std::string>(&items[i]);
        if (!p) {
          raise("TypeError", "sequence item " + std::to_string(i) + ": expected str instance, " +
                                 type_name(items[i]) + " found");
        }
        if (i) out += s;
        out += *p;
      }
      return out;
    }
    if (name == "replace") {
      arity(name, args, 2, 2);
      const std::string& from = want_str(0);
      const std::string& to = want_str(1);
      if (from.empty()) unsupported("replace with an empty pattern");
      std::string out;
      std::size_t start = 0;
      for (;;) {
        auto at = s.find(from, start);
        if (at == std::string::npos) break;
        out += s.substr(start, at - start) + to;
        start = at + from.size();
      }
      return out + s.substr(start);
    }
    if (name == "startswith" || name == "endswith") {
      arity(name, args, 1, 1);
      const std::string& x = want_str(0);
      if (x.size() > s.size()) return false;
      return name == "startswith" ? s.compare(0, x.size(), x) == 0 : s.compare(s.size() - x.size(), x.size(), x) == 0;
    }
    if (name == "count") {
      arity(name, args, 1, 1);
      const std::string& x = want_str(0);
      if (x.empty()) return static_cast<std::int64_t>(codepoints(s) + 1);
      std::int64_t n = 0;
      for (auto at = s.find(x); at != std::string::npos; at = s.find(x, at + x.size())) ++n;
      return n;
    }
    if (name == "find") {
      arity(name, args, 1, 1);
      auto at = s.find(want_str(0));
      return at == std::string::npos ? std::int64_t{-1} : static_cast<std::int64_t>(codepoints(s.substr(0, at)));
    }
    // format: positional {} / {N} fields with optional specs.
    std::string out;
    std::size_t auto_idx = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '{' && i + 1 < s.size() && s[i + 1] == '{') {
        out.push_back('{');
        ++i;
        continue;
      }
      if (s[i] == '}' && i + 1 < s.size() && s[i + 1] == '}') {
        out.push_back('}');
        ++i;
        continue;
      }
      if (s[i] != '{') {
        out.push_back(s[i]);
        continue;
      }
      auto close = s.find('}', i);
      if (close == std::string::npos) raise("ValueError", "Single '{' encountered in format string");
      std::string field = s.substr(i + 1, close - i - 1);
      std::string spec;
      if (auto colon = field.find(':'); colon != std::string::npos) {
        spec = field.substr(colon + 1);
        field = field.substr(0, colon);
      }
      std::size_t idx = auto_idx++;
      if (!field.empty()) {
        if (!std::all_of(field.begin(), field.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
          unsupported("named format fields");
        }
        idx = std::stoul(field);
      }
      if (idx >= args.size()) {
        raise("IndexError", "Replacement index " + std::to_string(idx) + " out of range for positional args tuple");
      }
      out += apply_format_spec(args[idx], spec);
      i = close;
    }
    return out;
  }

  Interpreter& in_;
  Host& host_;
};

Interpreter::Interpreter(std::filesystem::path cwd, std::set<std::string> importable, std::uint64_t seed)
    : cwd_(std::move(cwd)), importable_(std::move(importable)), rng_(seed) {}

std::optional<std::string> Interpreter::run(const std::string& code, Host& host) {
  Parser parser(tokenize(code));
  auto program = parser.parse_file();
  Evaluator ev(*this, host);
  for (std::size_t i = 0; i < program.size(); ++i) {
    ev.last_value_ = NoneV{};
    ev.exec(*program[i]);
    if (i + 1 == program.size() && program[i]->kind == SK::Expr &&
        !std::holds_alternative<NoneV>(ev.last_value_)) {
      return repr(ev.last_value_);
    }
  }
  return std::nullopt;
}

}  // namespace repro_lens::kernel::mini
