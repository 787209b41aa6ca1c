// Inequality-constraint language over loading cells. Statements compare two
// terms, where a term is a possibly negated cell L[j,k], a possibly negated
// absolute value abs(L[j,k]) / abs(-L[j,k]), or a numeric literal:
//
//   model     := statement (";" | newline)*
//   statement := expr cmp expr
//   cmp       := "<" | ">"
//   expr      := ["-"] primary
//   primary   := cell | "abs(" ["-"] cell ")" | number
//   cell      := "L[" int "," int "]"
//
// '#' starts a line comment. Model files group statements under
// "[model NAME]" section headers. All comparisons are strict; expansion
// rewrites every statement into atoms (linear combination + constant) > 0.
#pragma once

#include <Eigen/Dense>
#include <cctype>
#include <charconv>
#include <cmath>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bayesfa/types.hpp"

namespace bayesfa {

enum class Cmp { less, greater };

struct CellTerm {
  CellRef cell;
  bool negated = false;
  int line = 0, col = 0;
  friend bool operator==(const CellTerm& a, const CellTerm& b) {
    return a.cell == b.cell && a.negated == b.negated;
  }
};

struct AbsTerm {
  CellRef cell;
  bool inner_negated = false;  // abs(-L[j,k])
  bool negated = false;        // -abs(...)
  int line = 0, col = 0;
  friend bool operator==(const AbsTerm& a, const AbsTerm& b) {
    return a.cell == b.cell && a.inner_negated == b.inner_negated &&
           a.negated == b.negated;
  }
};

struct NumberTerm {
  double value = 0.0;  // leading '-' folded into the value
  friend bool operator==(const NumberTerm& a, const NumberTerm& b) {
    return a.value == b.value;
  }
};

using Expr = std::variant<CellTerm, AbsTerm, NumberTerm>;

struct Statement {
  Expr lhs;
  Cmp cmp = Cmp::less;
  Expr rhs;
  int line = 0, col = 0;
  friend bool operator==(const Statement& a, const Statement& b) {
    return a.lhs == b.lhs && a.cmp == b.cmp && a.rhs == b.rhs;
  }
};

struct ConstraintModel {
  std::string name;
  std::vector<Statement> statements;
  friend bool operator==(const ConstraintModel& a, const ConstraintModel& b) {
    return a.name == b.name && a.statements == b.statements;
  }
};

// One conjunctive atom: sum of coeff * L[cell] + constant > 0.
struct ConstraintAtom {
  std::vector<std::pair<CellRef, double>> terms;
  double constant = 0.0;
};

struct ConstraintSet {
  int p = 0;
  int m = 0;
  std::vector<ConstraintAtom> atoms;
};

namespace dsl_detail {

enum class Tok { ident, number, lbracket, rbracket, lparen, rparen, comma,
                 less, greater, minus, semicolon, newline, end };

struct Token {
  Tok kind = Tok::end;
  std::string text;
  double value = 0.0;
  bool integral = false;
  int line = 1, col = 1;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Token next() {
    for (;;) {
      if (at_ >= src_.size()) return make(Tok::end, "");
      const char c = src_[at_];
      if (c == '#') {
        while (at_ < src_.size() && src_[at_] != '\n') advance();
        continue;
      }
      if (c == ' ' || c == '\t' || c == '\r') {
        advance();
        continue;
      }
      break;
    }
    const char c = src_[at_];
    if (c == '\n') {
      Token t = make(Tok::newline, "\n");
      advance();
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return lex_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return lex_ident();
    Tok kind;
    switch (c) {
      case '[': kind = Tok::lbracket; break;
      case ']': kind = Tok::rbracket; break;
      case '(': kind = Tok::lparen; break;
      case ')': kind = Tok::rparen; break;
      case ',': kind = Tok::comma; break;
      case '<': kind = Tok::less; break;
      case '>': kind = Tok::greater; break;
      case '-': kind = Tok::minus; break;
      case ';': kind = Tok::semicolon; break;
      default:
        throw ParseError(std::string("unexpected character '") + c + "'", line_, col_);
    }
    Token t = make(kind, std::string(1, c));
    advance();
    return t;
  }

 private:
  Token make(Tok kind, std::string text) const {
    Token t;
    t.kind = kind;
    t.text = std::move(text);
    t.line = line_;
    t.col = col_;
    return t;
  }
  void advance() {
    if (src_[at_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++at_;
  }
  Token lex_number() {
    Token t = make(Tok::number, "");
    const std::size_t start = at_;
    bool integral = true;
    while (at_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[at_])))
      advance();
    if (at_ < src_.size() && src_[at_] == '.') {
      integral = false;
      advance();
      while (at_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[at_])))
        advance();
    }
    if (at_ < src_.size() && (src_[at_] == 'e' || src_[at_] == 'E')) {
      integral = false;
      advance();
      if (at_ < src_.size() && (src_[at_] == '+' || src_[at_] == '-')) advance();
      while (at_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[at_])))
        advance();
    }
    t.text = std::string(src_.substr(start, at_ - start));
    const auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.value);
    if (res.ec != std::errc{} || res.ptr != t.text.data() + t.text.size())
      throw ParseError("malformed number '" + t.text + "'", t.line, t.col);
    t.integral = integral;
    return t;
  }
  Token lex_ident() {
    Token t = make(Tok::ident, "");
    const std::size_t start = at_;
    while (at_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[at_])) || src_[at_] == '_'))
      advance();
    t.text = std::string(src_.substr(start, at_ - start));
    return t;
  }

  std::string_view src_;
  std::size_t at_ = 0;
  int line_ = 1, col_ = 1;
};

class Parser {
 public:
  explicit Parser(std::string_view src) : lexer_(src) { shift(); }

  std::vector<Statement> statements_only() {
    std::vector<Statement> out;
    skip_separators();
    while (cur_.kind != Tok::end) {
      if (cur_.kind == Tok::lbracket)
        throw ParseError("section header not allowed here", cur_.line, cur_.col);
      out.push_back(statement());
      expect_separator();
    }
    return out;
  }

  std::vector<ConstraintModel> model_file() {
    std::vector<ConstraintModel> out;
    skip_separators();
    while (cur_.kind != Tok::end) {
      if (cur_.kind == Tok::lbracket) {
        out.push_back({section_header(), {}});
        skip_separators();
        continue;
      }
      if (out.empty())
        throw ParseError("statement outside a [model NAME] section", cur_.line,
                         cur_.col);
      out.back().statements.push_back(statement());
      expect_separator();
    }
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t j = i + 1; j < out.size(); ++j)
        if (out[i].name == out[j].name)
          throw ParseError("duplicate model name '" + out[i].name + "'", 1, 1);
    return out;
  }

 private:
  void shift() { cur_ = lexer_.next(); }

  void skip_separators() {
    while (cur_.kind == Tok::newline || cur_.kind == Tok::semicolon) shift();
  }

  void expect_separator() {
    if (cur_.kind == Tok::end) return;
    if (cur_.kind != Tok::newline && cur_.kind != Tok::semicolon)
      throw ParseError("expected end of statement, got '" + cur_.text + "'",
                       cur_.line, cur_.col);
    skip_separators();
  }

  std::string section_header() {
    shift();  // '['
    if (cur_.kind != Tok::ident || cur_.text != "model")
      throw ParseError("expected 'model' after '['", cur_.line, cur_.col);
    shift();
    if (cur_.kind != Tok::ident)
      throw ParseError("expected model name", cur_.line, cur_.col);
    const std::string name = cur_.text;
    shift();
    if (cur_.kind != Tok::rbracket)
      throw ParseError("expected ']' after model name", cur_.line, cur_.col);
    shift();
    return name;
  }

  Statement statement() {
    Statement st;
    st.line = cur_.line;
    st.col = cur_.col;
    st.lhs = expr();
    if (cur_.kind == Tok::less)
      st.cmp = Cmp::less;
    else if (cur_.kind == Tok::greater)
      st.cmp = Cmp::greater;
    else
      throw ParseError("expected '<' or '>', got '" +
                           (cur_.kind == Tok::end ? "end of input" : cur_.text) + "'",
                       cur_.line, cur_.col);
    shift();
    st.rhs = expr();
    const bool lhs_cell = !std::holds_alternative<NumberTerm>(st.lhs);
    const bool rhs_cell = !std::holds_alternative<NumberTerm>(st.rhs);
    if (!lhs_cell && !rhs_cell)
      throw ParseError("statement references no loading cell", st.line, st.col);
    return st;
  }

  Expr expr() {
    bool negated = false;
    int line = cur_.line, col = cur_.col;
    if (cur_.kind == Tok::minus) {
      negated = true;
      shift();
    }
    if (cur_.kind == Tok::number) {
      NumberTerm n{negated ? -cur_.value : cur_.value};
      shift();
      return n;
    }
    if (cur_.kind == Tok::ident && cur_.text == "L") {
      CellTerm t;
      t.negated = negated;
      t.line = line;
      t.col = col;
      t.cell = cell();
      return t;
    }
    if (cur_.kind == Tok::ident && cur_.text == "abs") {
      AbsTerm t;
      t.negated = negated;
      t.line = line;
      t.col = col;
      shift();
      if (cur_.kind != Tok::lparen)
        throw ParseError("expected '(' after abs", cur_.line, cur_.col);
      shift();
      if (cur_.kind == Tok::minus) {
        t.inner_negated = true;
        shift();
      }
      if (!(cur_.kind == Tok::ident && cur_.text == "L"))
        throw ParseError("abs() applies only to a single loading cell", cur_.line,
                         cur_.col);
      t.cell = cell();
      if (cur_.kind != Tok::rparen)
        throw ParseError("expected ')' to close abs(", cur_.line, cur_.col);
      shift();
      return t;
    }
    throw ParseError("expected a loading cell, abs(...), or number, got '" +
                         (cur_.kind == Tok::end ? "end of input" : cur_.text) + "'",
                     cur_.line, cur_.col);
  }

  CellRef cell() {
    shift();  // 'L'
    if (cur_.kind != Tok::lbracket)
      throw ParseError("expected '[' after L", cur_.line, cur_.col);
    shift();
    const int row = cell_index("row");
    if (cur_.kind != Tok::comma)
      throw ParseError("expected ',' inside L[...]", cur_.line, cur_.col);
    shift();
    const int col = cell_index("column");
    if (cur_.kind != Tok::rbracket)
      throw ParseError("expected ']' to close L[", cur_.line, cur_.col);
    shift();
    return {row, col};
  }

  int cell_index(const char* which) {
    if (cur_.kind != Tok::number || !cur_.integral)
      throw ParseError(std::string("expected integer ") + which + " index",
                       cur_.line, cur_.col);
    const int v = static_cast<int>(cur_.value);
    if (v < 1)
      throw ParseError(std::string("cell index out of range: ") + which +
                           " index must be at least 1",
                       cur_.line, cur_.col);
    shift();
    return v;
  }

  Lexer lexer_;
  Token cur_;
};

inline std::string format_number(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline std::string render_expr(const Expr& e) {
  if (const auto* c = std::get_if<CellTerm>(&e))
    return std::string(c->negated ? "-" : "") + "L[" + std::to_string(c->cell.row) +
           "," + std::to_string(c->cell.col) + "]";
  if (const auto* a = std::get_if<AbsTerm>(&e))
    return std::string(a->negated ? "-" : "") + "abs(" +
           (a->inner_negated ? "-" : "") + "L[" + std::to_string(a->cell.row) + "," +
           std::to_string(a->cell.col) + "])";
  return format_number(std::get<NumberTerm>(e).value);
}

}  // namespace dsl_detail

inline std::vector<Statement> parse_statements(std::string_view text) {
  return dsl_detail::Parser(text).statements_only();
}

inline std::vector<ConstraintModel> parse_model_file(std::string_view text) {
  return dsl_detail::Parser(text).model_file();
}

inline std::string render(const std::vector<Statement>& statements) {
  std::string out;
  for (const auto& st : statements) {
    out += dsl_detail::render_expr(st.lhs);
    out += (st.cmp == Cmp::less) ? " < " : " > ";
    out += dsl_detail::render_expr(st.rhs);
    out += "\n";
  }
  return out;
}

inline std::string render(const std::vector<ConstraintModel>& models) {
  std::string out;
  for (const auto& model : models) {
    if (!out.empty()) out += "\n";
    out += "[model " + model.name + "]\n";
    out += render(model.statements);
  }
  return out;
}

// Rewrites statements into conjunctive atoms against a concrete pattern.
// A statement A cmp B becomes (greater - lesser) > 0; an absolute-value
// term is admissible only where it is bounded above (net negative sign in
// that difference), in which case it splits into both sign substitutions.
inline ConstraintSet expand(const std::vector<Statement>& statements,
                            const UcfmSpec& spec) {
  ConstraintSet out;
  out.p = spec.p;
  out.m = spec.m;
  for (const auto& st : statements) {
    const Expr& greater = (st.cmp == Cmp::greater) ? st.lhs : st.rhs;
    const Expr& lesser = (st.cmp == Cmp::greater) ? st.rhs : st.lhs;

    struct Signed {
      const Expr* e;
      double sign;
    };
    const Signed sides[2] = {{&greater, +1.0}, {&lesser, -1.0}};

    auto check_cell = [&](const CellRef& cell, int line, int col) {
      if (cell.row > spec.p || cell.col > spec.m)
        throw ParseError("cell out of range: L[" + std::to_string(cell.row) + "," +
                             std::to_string(cell.col) + "] with p = " +
                             std::to_string(spec.p) + ", m = " +
                             std::to_string(spec.m),
                         line, col);
      if (spec.is_zero(cell.row, cell.col))
        throw ParseError("constraint references zero cell L[" +
                             std::to_string(cell.row) + "," +
                             std::to_string(cell.col) + "]",
                         line, col);
    };

    // Base atom from non-abs terms; abs terms collected for branching.
    ConstraintAtom base;
    struct AbsPiece {
      CellRef cell;
    };
    std::vector<AbsPiece> abs_pieces;
    for (const auto& side : sides) {
      if (const auto* c = std::get_if<CellTerm>(side.e)) {
        check_cell(c->cell, c->line, c->col);
        base.terms.emplace_back(c->cell, side.sign * (c->negated ? -1.0 : 1.0));
      } else if (const auto* a = std::get_if<AbsTerm>(side.e)) {
        check_cell(a->cell, a->line, a->col);
        const double net = side.sign * (a->negated ? -1.0 : 1.0);
        if (net > 0.0)
          throw ParseError(
              "absolute value is bounded below here, which is a disjunction; "
              "place abs() on the lesser side",
              a->line, a->col);
        abs_pieces.push_back({a->cell});
      } else {
        base.constant += side.sign * std::get<NumberTerm>(*side.e).value;
      }
    }

    // Reject statements that cancel before abs branching (self-comparison).
    {
      ConstraintAtom probe = base;
      std::erase_if(probe.terms, [&](const auto& t) {
        double sum = 0.0;
        for (const auto& [cell, coeff] : base.terms)
          if (cell == t.first) sum += coeff;
        return sum == 0.0;
      });
      if (probe.terms.empty() && abs_pieces.empty())
        throw ParseError("degenerate constraint: no loading cell survives "
                         "simplification",
                         st.line, st.col);
    }

    const std::size_t branches = std::size_t{1} << abs_pieces.size();
    for (std::size_t mask = 0; mask < branches; ++mask) {
      ConstraintAtom atom = base;
      for (std::size_t i = 0; i < abs_pieces.size(); ++i) {
        const double sub = (mask >> i) & 1 ? 1.0 : -1.0;
        atom.terms.emplace_back(abs_pieces[i].cell, -sub);
      }
      // Merge duplicate cells.
      ConstraintAtom merged;
      merged.constant = atom.constant;
      for (const auto& [cell, coeff] : atom.terms) {
        bool found = false;
        for (auto& [mc, mcoeff] : merged.terms)
          if (mc == cell) {
            mcoeff += coeff;
            found = true;
            break;
          }
        if (!found) merged.terms.emplace_back(cell, coeff);
      }
      std::erase_if(merged.terms, [](const auto& t) { return t.second == 0.0; });
      if (merged.terms.empty()) {
        // A branch whose cells cancel is a constant comparison: vacuous if
        // it holds, otherwise an infeasibility marker the atom keeps.
        if (merged.constant > 0.0) continue;
        out.atoms.push_back(std::move(merged));
        continue;
      }
      out.atoms.push_back(std::move(merged));
    }
  }
  return out;
}

inline ConstraintSet expand(const ConstraintModel& model, const UcfmSpec& spec) {
  return expand(model.statements, spec);
}

// Conjunction of two sets over the same pattern.
inline ConstraintSet constraint_union(const ConstraintSet& a, const ConstraintSet& b) {
  if (a.p != b.p || a.m != b.m)
    throw ConfigError("constraint union: mismatched pattern dimensions");
  ConstraintSet out = a;
  out.atoms.insert(out.atoms.end(), b.atoms.begin(), b.atoms.end());
  return out;
}

// Strict satisfaction: every atom strictly positive; boundary ties fail.
inline bool satisfies(const Eigen::MatrixXd& lambda, const ConstraintSet& cs) {
  for (const auto& atom : cs.atoms) {
    double s = atom.constant;
    for (const auto& [cell, coeff] : atom.terms)
      s += coeff * lambda(cell.row - 1, cell.col - 1);
    if (!(s > 0.0)) return false;
  }
  return true;
}

}  // namespace bayesfa
