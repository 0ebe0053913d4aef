#include "fuzzydx/dsl.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "fuzzydx/error.hpp"

namespace fdx {

namespace {

enum class Tok { Ident, Wildcard, Number, LParen, RParen, Comma, Dot, Neck, Naf, At, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  double number = 0.0;
  std::size_t line = 1;
  std::size_t column = 1;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Token next() {
    skip_space();
    Token t;
    t.line = line_;
    t.column = col_;
    if (pos_ >= src_.size()) return t;
    char c = src_[pos_];
    if (c >= 'a' && c <= 'z') {
      std::size_t start = pos_;
      while (pos_ < src_.size() && is_ident_char(src_[pos_])) advance();
      t.kind = Tok::Ident;
      t.text = std::string(src_.substr(start, pos_ - start));
      return t;
    }
    if (c == '_') {
      advance();
      if (pos_ < src_.size() && is_ident_char(src_[pos_])) fail(t, "'_' or identifier");
      t.kind = Tok::Wildcard;
      t.text = "_";
      return t;
    }
    if ((c >= '0' && c <= '9') || c == '-') {
      std::size_t start = pos_;
      if (c == '-') advance();
      if (pos_ >= src_.size() || !is_digit(src_[pos_])) fail(t, "number");
      while (pos_ < src_.size() && is_digit(src_[pos_])) advance();
      if (pos_ + 1 < src_.size() && src_[pos_] == '.' && is_digit(src_[pos_ + 1])) {
        advance();
        while (pos_ < src_.size() && is_digit(src_[pos_])) advance();
      }
      if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
        Token bad{Tok::End, "", 0, line_, col_};
        fail(bad, "decimal number without exponent");
      }
      t.kind = Tok::Number;
      t.text = std::string(src_.substr(start, pos_ - start));
      auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
      if (res.ec != std::errc{}) fail(t, "number");
      return t;
    }
    advance();
    switch (c) {
      case '(': t.kind = Tok::LParen; break;
      case ')': t.kind = Tok::RParen; break;
      case ',': t.kind = Tok::Comma; break;
      case '.': t.kind = Tok::Dot; break;
      case '@': t.kind = Tok::At; break;
      case ':':
        if (pos_ < src_.size() && src_[pos_] == '-') {
          advance();
          t.kind = Tok::Neck;
          break;
        }
        fail(t, "':-'");
      case '\\':
        if (pos_ < src_.size() && src_[pos_] == '+') {
          advance();
          t.kind = Tok::Naf;
          break;
        }
        fail(t, "'\\+'");
      default:
        fail(t, "clause");
    }
    t.text = std::string(1, c);
    return t;
  }

  [[noreturn]] static void fail(const Token& at, const std::string& expected) {
    throw SyntaxError(at.line, at.column, expected);
  }

 private:
  static bool is_digit(char c) { return c >= '0' && c <= '9'; }
  static bool is_ident_char(char c) {
    return (c >= 'a' && c <= 'z') || is_digit(c) || c == '_';
  }

  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_space() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '%') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        advance();
      } else {
        break;
      }
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

class Parser {
 public:
  explicit Parser(std::string_view src) : lex_(src) { tok_ = lex_.next(); }

  Program program() {
    Program p;
    std::set<std::string> rule_ids, fact_keys;
    while (tok_.kind != Tok::End) clause(p, rule_ids, fact_keys);
    return p;
  }

  Rule single_rule() {
    Token start = tok_;
    if (tok_.kind != Tok::Ident) Lexer::fail(tok_, "rule");
    Literal head = literal(Polarity::Positive);
    if (tok_.kind != Tok::Neck) Lexer::fail(tok_, "':-'");
    Rule r = rule_tail(std::move(head), start);
    if (tok_.kind == Tok::Dot) shift();
    if (tok_.kind != Tok::End) Lexer::fail(tok_, "end of rule");
    return r;
  }

 private:
  void shift() { tok_ = lex_.next(); }

  void expect(Tok kind, const char* what) {
    if (tok_.kind != kind) Lexer::fail(tok_, what);
    shift();
  }

  Symbol ident(const char* what) {
    if (tok_.kind != Tok::Ident) Lexer::fail(tok_, what);
    Symbol s(tok_.text);
    shift();
    return s;
  }

  Term term() {
    if (tok_.kind == Tok::Wildcard) {
      shift();
      return Term::wildcard();
    }
    return Term::of(ident("term"));
  }

  double number(const char* what) {
    if (tok_.kind != Tok::Number) Lexer::fail(tok_, what);
    double v = tok_.number;
    shift();
    return v;
  }

  Literal literal(Polarity polarity) {
    Literal lit;
    lit.polarity = polarity;
    lit.predicate = ident("predicate");
    if (tok_.kind == Tok::LParen) {
      shift();
      lit.args.push_back(term());
      while (tok_.kind == Tok::Comma) {
        shift();
        lit.args.push_back(term());
      }
      expect(Tok::RParen, "')'");
    }
    return lit;
  }

  static void check_weight(double w, double lo, bool lo_open, const Token& at,
                           const std::string& what) {
    bool ok = (lo_open ? w > lo : w >= lo) && w <= 1.0;
    if (!ok) {
      throw WeightOutOfRange(std::to_string(at.line) + ":" + std::to_string(at.column) + ": " +
                             what + " " + at.text + " outside " + (lo_open ? "(" : "[") +
                             format_weight(lo) + ",1]");
    }
  }

  Rule rule_tail(Literal head, const Token& head_tok) {
    if (head.predicate.str() != "diagnosis" || head.args.size() != 1 ||
        head.args[0].is_wildcard()) {
      Lexer::fail(head_tok, "diagnosis(<atom>) rule head");
    }
    shift();  // ':-'
    std::vector<BodyLiteral> body;
    std::set<std::string> seen;
    for (;;) {
      Polarity pol = Polarity::Positive;
      if (tok_.kind == Tok::Naf) {
        pol = Polarity::NegatedAsFailure;
        shift();
      }
      Token lit_tok = tok_;
      BodyLiteral b{literal(pol), 1.0};
      if (tok_.kind == Tok::At) {
        shift();
        Token wt = tok_;
        b.edge_weight = number("weight");
        check_weight(b.edge_weight, 0.0, false, wt, "edge weight");
      }
      if (!seen.insert(b.literal.to_string()).second) {
        throw DuplicateClause(std::to_string(lit_tok.line) + ":" + std::to_string(lit_tok.column) +
                              ": duplicate body literal " + b.literal.to_string());
      }
      body.push_back(std::move(b));
      if (tok_.kind != Tok::Comma) break;
      shift();
    }
    Rule r;
    r.head = std::move(head);
    r.body = std::move(body);
    refresh_rule_id(r);
    return r;
  }

  void clause(Program& p, std::set<std::string>& rule_ids, std::set<std::string>& fact_keys) {
    Token start = tok_;
    if (tok_.kind != Tok::Ident) Lexer::fail(tok_, "clause");
    std::string name = tok_.text;

    if (name == "fuzzy_symptom" || name == "prior") {
      shift();
      if (tok_.kind == Tok::LParen) {
        shift();
        if (name == "fuzzy_symptom") {
          FuzzyFact f;
          f.literal = Literal{Symbol("symptom"), {Term::of(ident("symptom name"))}};
          expect(Tok::Comma, "','");
          Token wt = tok_;
          f.weight = number("weight");
          check_weight(f.weight, 0.0, false, wt, "fact weight");
          expect(Tok::RParen, "')'");
          expect(Tok::Dot, "'.'");
          add_fact(p, fact_keys, std::move(f), start);
        } else {
          PriorEntry e;
          e.disease = ident("disease");
          expect(Tok::Comma, "','");
          e.age_band = term();
          expect(Tok::Comma, "','");
          e.sex = term();
          expect(Tok::Comma, "','");
          e.region = term();
          expect(Tok::Comma, "','");
          Token wt = tok_;
          e.prevalence = number("prevalence");
          check_weight(e.prevalence, 0.0, true, wt, "prevalence");
          expect(Tok::RParen, "')'");
          expect(Tok::Dot, "'.'");
          for (const auto& other : p.priors) {
            if (other.same_stratum(e)) {
              throw DuplicateClause(std::to_string(start.line) + ":" +
                                    std::to_string(start.column) + ": duplicate prior " +
                                    e.to_string());
            }
          }
          p.priors.push_back(std::move(e));
        }
        return;
      }
      Lexer::fail(tok_, "'('");
    }

    Literal lit = literal(Polarity::Positive);
    if (tok_.kind == Tok::Neck) {
      Rule r = rule_tail(std::move(lit), start);
      expect(Tok::Dot, "',' or '.'");
      if (!rule_ids.insert(r.id).second) {
        throw DuplicateClause(std::to_string(start.line) + ":" + std::to_string(start.column) +
                              ": duplicate rule " + print_rule(r));
      }
      p.rules.push_back(std::move(r));
      return;
    }
    if (!lit.is_ground()) Lexer::fail(start, "ground fact");
    FuzzyFact f{std::move(lit), 1.0, Temporal::Untagged, std::nullopt};
    if (tok_.kind == Tok::At) {
      shift();
      Token wt = tok_;
      f.weight = number("weight");
      check_weight(f.weight, 0.0, false, wt, "fact weight");
    }
    expect(Tok::Dot, "'.' or ':-'");
    add_fact(p, fact_keys, std::move(f), start);
  }

  static void add_fact(Program& p, std::set<std::string>& keys, FuzzyFact f, const Token& at) {
    if (!keys.insert(f.literal.to_string()).second) {
      throw DuplicateClause(std::to_string(at.line) + ":" + std::to_string(at.column) +
                            ": duplicate fact " + f.literal.to_string());
    }
    p.facts.push_back(std::move(f));
  }

  Lexer lex_;
  Token tok_;
};

}  // namespace

Program parse_program(std::string_view text) { return Parser(text).program(); }

Rule parse_rule(std::string_view text) { return Parser(text).single_rule(); }

std::string print_rule(const Rule& rule) {
  std::string out = rule.head.to_string() + " :- ";
  for (std::size_t i = 0; i < rule.body.size(); ++i) {
    if (i) out += ", ";
    out += rule.body[i].literal.to_string();
    if (rule.body[i].edge_weight != 1.0) out += "@" + format_weight(rule.body[i].edge_weight);
  }
  return out + ".";
}

std::string print_fact(const FuzzyFact& fact) {
  const auto& lit = fact.literal;
  if (lit.predicate.str() == "symptom" && lit.args.size() == 1) {
    return "fuzzy_symptom(" + lit.args[0].to_string() + ", " + format_weight(fact.weight) + ").";
  }
  std::string out = lit.atom_text();
  if (fact.weight != 1.0) out += "@" + format_weight(fact.weight);
  return out + ".";
}

std::string print_prior(const PriorEntry& prior) { return prior.to_string() + "."; }

std::string print_program(const Program& program) {
  std::string out;
  for (const auto& r : program.rules) out += print_rule(r) + "\n";
  for (const auto& f : program.facts) out += print_fact(f) + "\n";
  for (const auto& p : program.priors) out += print_prior(p) + "\n";
  return out;
}

Lexicon parse_lexicon(std::string_view tsv) {
  Lexicon lex;
  std::size_t line_no = 0;
  std::istringstream in{std::string(tsv)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError(line_no, "expected term<TAB>weight");
    }
    std::string term = line.substr(0, tab);
    std::string wtext = line.substr(tab + 1);
    double w = 0;
    auto res = std::from_chars(wtext.data(), wtext.data() + wtext.size(), w);
    if (term.empty() || res.ec != std::errc{} || res.ptr != wtext.data() + wtext.size()) {
      throw ParseError(line_no, "expected term<TAB>weight");
    }
    if (!(w >= 0.0 && w <= 1.0)) {
      throw WeightOutOfRange("lexicon line " + std::to_string(line_no) + ": weight " + wtext +
                             " outside [0,1]");
    }
    lex[term] = w;
  }
  return lex;
}

std::string print_lexicon(const Lexicon& lexicon) {
  std::string out;
  for (const auto& [term, w] : lexicon) out += term + "\t" + format_weight(w) + "\n";
  return out;
}

Lexicon default_hedge_lexicon() {
  return {{"mild", 0.3},         {"moderate", 0.6},     {"severe", 0.9},
          {"on-and-off", 0.5},   {"intermittent", 0.5}, {"occasional", 0.4}};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace fdx
