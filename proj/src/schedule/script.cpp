#include "scriptdrive/schedule/script.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace scriptdrive::schedule {

const std::string_view kGrammarText = R"grammar(script   := statement (NEWLINE statement)*      # one statement per line
statement:= stage | fallback
stage    := "stage" behavior ["target" number] ["when" "(" pred ")"]
            ["until" "(" pred ")"] ["timeout" number] ["on_timeout" ("skip" | "fail")]
fallback := "fallback" behavior "when" "(" pred ")" ["clear_after" integer]
behavior := "lane_keeping" | "left_lane_change" | "right_lane_change"
          | "accelerate" | "decelerate"
pred     := conj ("or" conj)*
conj     := unary ("and" unary)*
unary    := "not" unary | "(" pred ")" | flag | operand cmp operand
operand  := number | "speed" | "lane" | "elapsed" | "total_elapsed"
          | "gap_front" | "gap_rear" | "gap_left_front" | "gap_left_rear"
          | "gap_right_front" | "gap_right_rear" | "ttc_front" | "dist_traveled"
flag     := "at_leftmost" | "at_rightmost" | "stopped"
cmp      := "<" | "<=" | ">" | ">=" | "=="
Comments start with "#" and run to the end of the line. Units: meters, seconds, m/s.
A stage without "until" completes when its behavior's goal is reached
(lane changes: centered in the target lane; speed changes: within 0.5 m/s of
the target; lane_keeping: held for 5 s). "when" delays the stage (lane keeping
meanwhile); the stage clock and the timeout start when the stage is entered.
The default timeout is 15 s and the default on_timeout policy is skip.
Fallback behaviors are limited to decelerate and lane_keeping; the first
matching fallback preempts the stage until its condition has been false for
clear_after ticks (default 5, one tick = 0.1 s).
)grammar";

ScriptError::ScriptError(const std::string& message, int line, int column)
    : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) +
                         ": " + message),
      detail_(message),
      line_(line),
      column_(column) {}

namespace {

struct AtomName {
  Atom atom;
  std::string_view name;
};

constexpr AtomName kAtomNames[] = {
    {Atom::speed, "speed"},
    {Atom::lane, "lane"},
    {Atom::elapsed, "elapsed"},
    {Atom::total_elapsed, "total_elapsed"},
    {Atom::gap_front, "gap_front"},
    {Atom::gap_rear, "gap_rear"},
    {Atom::gap_left_front, "gap_left_front"},
    {Atom::gap_left_rear, "gap_left_rear"},
    {Atom::gap_right_front, "gap_right_front"},
    {Atom::gap_right_rear, "gap_right_rear"},
    {Atom::ttc_front, "ttc_front"},
    {Atom::dist_traveled, "dist_traveled"},
    {Atom::at_leftmost, "at_leftmost"},
    {Atom::at_rightmost, "at_rightmost"},
    {Atom::stopped, "stopped"},
};

enum class Tok { ident, number, lparen, rparen, cmp, newline, end };

struct Token {
  Tok kind = Tok::end;
  std::string text;
  double number = 0.0;
  CompareOp op = CompareOp::lt;
  int line = 1;
  int column = 1;
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    int depth = 0;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') {
          advance();
        }
        continue;
      }
      if (c == '\n') {
        if (depth == 0 && !out.empty() && out.back().kind != Tok::newline) {
          out.push_back(make(Tok::newline));
        }
        advance();
        continue;
      }
      if (c == ' ' || c == '\t' || c == '\r') {
        advance();
        continue;
      }
      if (c == '(') {
        out.push_back(make(Tok::lparen));
        ++depth;
        advance();
        continue;
      }
      if (c == ')') {
        out.push_back(make(Tok::rparen));
        depth = std::max(0, depth - 1);
        advance();
        continue;
      }
      if (c == '<' || c == '>' || c == '=') {
        out.push_back(lex_compare());
        continue;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' ||
          (c == '-' && pos_ + 1 < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])) || text_[pos_ + 1] == '.'))) {
        out.push_back(lex_number());
        continue;
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        Token t = make(Tok::ident);
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
          t.text.push_back(text_[pos_]);
          advance();
        }
        out.push_back(std::move(t));
        continue;
      }
      throw ParseError(std::string("unexpected character '") + c + "'", line_, column_);
    }
    if (!out.empty() && out.back().kind != Tok::newline) {
      out.push_back(make(Tok::newline));
    }
    out.push_back(make(Tok::end));
    return out;
  }

 private:
  Token make(Tok kind) const {
    Token t;
    t.kind = kind;
    t.line = line_;
    t.column = column_;
    return t;
  }

  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      column_ = 1;
    } else {
      ++column_;
    }
    ++pos_;
  }

  Token lex_compare() {
    Token t = make(Tok::cmp);
    const char c = text_[pos_];
    const bool eq_next = pos_ + 1 < text_.size() && text_[pos_ + 1] == '=';
    if (c == '=') {
      if (!eq_next) {
        throw ParseError("expected '==' (single '=' is not an operator)", line_, column_);
      }
      t.op = CompareOp::eq;
    } else if (c == '<') {
      t.op = eq_next ? CompareOp::le : CompareOp::lt;
    } else {
      t.op = eq_next ? CompareOp::ge : CompareOp::gt;
    }
    advance();
    if (eq_next) {
      advance();
    }
    return t;
  }

  Token lex_number() {
    Token t = make(Tok::number);
    const std::size_t start = pos_;
    if (text_[pos_] == '-') {
      advance();
    }
    auto digits = [&] {
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        advance();
      }
    };
    digits();
    if (pos_ < text_.size() && text_[pos_] == '.') {
      advance();
      digits();
    }
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      advance();
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) {
        advance();
      }
      digits();
    }
    t.text = std::string(text_.substr(start, pos_ - start));
    const auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
    if (res.ec != std::errc() || res.ptr != t.text.data() + t.text.size()) {
      throw ParseError("malformed number '" + t.text + "'", t.line, t.column);
    }
    return t;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int column_ = 1;
};

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

  ScheduleScript run() {
    ScheduleScript script;
    while (peek().kind != Tok::end) {
      const Token& head = peek();
      if (head.kind != Tok::ident) {
        throw ParseError("expected 'stage' or 'fallback'", head.line, head.column);
      }
      if (head.text == "stage") {
        next();
        script.stages.push_back(parse_stage());
      } else if (head.text == "fallback") {
        next();
        script.fallbacks.push_back(parse_fallback());
      } else {
        throw ParseError("expected 'stage' or 'fallback', found '" + head.text + "'", head.line,
                         head.column);
      }
      const Token& eol = peek();
      if (eol.kind != Tok::newline) {
        throw ParseError("expected end of line, found " + describe(eol), eol.line, eol.column);
      }
      next();
    }
    if (script.stages.empty()) {
      const Token& t = peek();
      throw ValidationError("script must contain at least one stage", t.line, t.column);
    }
    return script;
  }

 private:
  static std::string describe(const Token& t) {
    switch (t.kind) {
      case Tok::ident: return "'" + t.text + "'";
      case Tok::number: return "number " + t.text;
      case Tok::lparen: return "'('";
      case Tok::rparen: return "')'";
      case Tok::cmp: return "comparison operator";
      case Tok::newline: return "end of line";
      case Tok::end: return "end of script";
    }
    return "token";
  }

  const Token& peek() const { return tokens_[pos_]; }
  const Token& next() { return tokens_[pos_++]; }

  const Token& expect(Tok kind, std::string_view what) {
    const Token& t = peek();
    if (t.kind != kind) {
      throw ParseError("expected " + std::string(what) + ", found " + describe(t), t.line,
                       t.column);
    }
    return next();
  }

  bool accept_keyword(std::string_view word) {
    if (peek().kind == Tok::ident && peek().text == word) {
      next();
      return true;
    }
    return false;
  }

  AtomicBehavior parse_behavior() {
    const Token& t = expect(Tok::ident, "a behavior name");
    const auto b = planners::behavior_from_string(t.text);
    if (!b) {
      throw ValidationError("unknown behavior '" + t.text + "'", t.line, t.column);
    }
    return *b;
  }

  Predicate parse_group() {
    expect(Tok::lparen, "'('");
    Predicate p = parse_or();
    expect(Tok::rparen, "')'");
    return p;
  }

  Stage parse_stage() {
    Stage stage;
    stage.behavior = parse_behavior();
    bool seen_target = false;
    bool seen_when = false;
    bool seen_until = false;
    bool seen_timeout = false;
    bool seen_policy = false;
    auto once = [&](bool& seen, const Token& t) {
      if (seen) {
        throw ParseError("duplicate '" + t.text + "' clause", t.line, t.column);
      }
      seen = true;
    };
    while (peek().kind == Tok::ident) {
      const Token& kw = peek();
      if (kw.text == "target") {
        once(seen_target, kw);
        next();
        const Token& num = expect(Tok::number, "a target speed");
        if (!(num.number >= 0.0)) {
          throw ValidationError("target speed must be >= 0", num.line, num.column);
        }
        stage.target_speed = num.number;
      } else if (kw.text == "when") {
        once(seen_when, kw);
        next();
        stage.when = parse_group();
      } else if (kw.text == "until") {
        once(seen_until, kw);
        next();
        stage.until = parse_group();
      } else if (kw.text == "timeout") {
        once(seen_timeout, kw);
        next();
        const Token& num = expect(Tok::number, "a timeout in seconds");
        if (!(num.number > 0.0) || !std::isfinite(num.number)) {
          throw ValidationError("timeout must be a positive number of seconds", num.line,
                                num.column);
        }
        stage.timeout = num.number;
      } else if (kw.text == "on_timeout") {
        once(seen_policy, kw);
        next();
        const Token& policy = expect(Tok::ident, "'skip' or 'fail'");
        if (policy.text == "skip") {
          stage.on_timeout = TimeoutPolicy::skip;
        } else if (policy.text == "fail") {
          stage.on_timeout = TimeoutPolicy::fail;
        } else {
          throw ParseError("expected 'skip' or 'fail'", policy.line, policy.column);
        }
      } else {
        throw ParseError("unexpected '" + kw.text + "' in stage", kw.line, kw.column);
      }
    }
    return stage;
  }

  FallbackRule parse_fallback() {
    FallbackRule rule;
    const Token& bt = peek();
    rule.behavior = parse_behavior();
    if (rule.behavior != AtomicBehavior::decelerate &&
        rule.behavior != AtomicBehavior::lane_keeping) {
      throw ValidationError("fallback behavior must be decelerate or lane_keeping", bt.line,
                            bt.column);
    }
    const Token& kw = peek();
    if (!accept_keyword("when")) {
      throw ParseError("fallback requires a 'when' trigger", kw.line, kw.column);
    }
    rule.when = parse_group();
    if (accept_keyword("clear_after")) {
      const Token& num = expect(Tok::number, "a tick count");
      if (num.number < 1.0 || num.number != std::floor(num.number) || num.number > 1e6) {
        throw ValidationError("clear_after must be a positive integer", num.line, num.column);
      }
      rule.clear_after = static_cast<int>(num.number);
    }
    return rule;
  }

  Predicate parse_or() {
    std::vector<Predicate> parts;
    parts.push_back(parse_and());
    while (accept_keyword("or")) {
      parts.push_back(parse_and());
    }
    return parts.size() == 1 ? std::move(parts.front()) : Predicate::any(std::move(parts));
  }

  Predicate parse_and() {
    std::vector<Predicate> parts;
    parts.push_back(parse_unary());
    while (accept_keyword("and")) {
      parts.push_back(parse_unary());
    }
    return parts.size() == 1 ? std::move(parts.front()) : Predicate::all(std::move(parts));
  }

  Predicate parse_unary() {
    if (accept_keyword("not")) {
      return Predicate::negation(parse_unary());
    }
    if (peek().kind == Tok::lparen) {
      return parse_group();
    }
    const Token& t = peek();
    if (t.kind == Tok::ident) {
      const auto atom = atom_from_string(t.text);
      if (!atom) {
        throw ValidationError("unknown atom '" + t.text + "'", t.line, t.column);
      }
      if (is_boolean_atom(*atom)) {
        next();
        return Predicate::boolean(*atom);
      }
    }
    const Operand lhs = parse_operand();
    const Token& op = expect(Tok::cmp, "a comparison operator");
    const Operand rhs = parse_operand();
    return Predicate::compare(lhs, op.op, rhs);
  }

  Operand parse_operand() {
    const Token& t = peek();
    if (t.kind == Tok::number) {
      next();
      return Operand{false, Atom::speed, t.number};
    }
    if (t.kind == Tok::ident) {
      const auto atom = atom_from_string(t.text);
      if (!atom) {
        throw ValidationError("unknown atom '" + t.text + "'", t.line, t.column);
      }
      if (is_boolean_atom(*atom)) {
        throw ValidationError("'" + t.text + "' is a condition, not a number", t.line, t.column);
      }
      next();
      return Operand{true, *atom, 0.0};
    }
    throw ParseError("expected a number or an atom, found " + describe(t), t.line, t.column);
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

std::string render_operand(const Operand& o) {
  return o.is_atom ? std::string(to_string(o.atom)) : format_number(o.number);
}

std::string render_child(const Predicate& p) {
  const bool compound =
      p.kind == Predicate::Kind::all_of || p.kind == Predicate::Kind::any_of;
  return compound ? "(" + render(p) + ")" : render(p);
}

}  // namespace

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  std::string out(buf, res.ptr);
  if (out.find_first_of(".eEn") == std::string::npos) {
    out += ".0";
  }
  return out;
}

std::string_view to_string(Atom atom) {
  for (const auto& a : kAtomNames) {
    if (a.atom == atom) {
      return a.name;
    }
  }
  return "?";
}

std::optional<Atom> atom_from_string(std::string_view text) {
  for (const auto& a : kAtomNames) {
    if (a.name == text) {
      return a.atom;
    }
  }
  return std::nullopt;
}

bool is_boolean_atom(Atom atom) {
  return atom == Atom::at_leftmost || atom == Atom::at_rightmost || atom == Atom::stopped;
}

std::string_view to_string(CompareOp op) {
  switch (op) {
    case CompareOp::lt: return "<";
    case CompareOp::le: return "<=";
    case CompareOp::gt: return ">";
    case CompareOp::ge: return ">=";
    case CompareOp::eq: return "==";
  }
  return "?";
}

Predicate Predicate::compare(Operand lhs, CompareOp op, Operand rhs) {
  Predicate p;
  p.kind = Kind::compare;
  p.lhs = lhs;
  p.op = op;
  p.rhs = rhs;
  return p;
}

Predicate Predicate::boolean(Atom atom) {
  Predicate p;
  p.kind = Kind::flag;
  p.flag = atom;
  return p;
}

Predicate Predicate::all(std::vector<Predicate> parts) {
  Predicate p;
  p.kind = Kind::all_of;
  p.children = std::move(parts);
  return p;
}

Predicate Predicate::any(std::vector<Predicate> parts) {
  Predicate p;
  p.kind = Kind::any_of;
  p.children = std::move(parts);
  return p;
}

Predicate Predicate::negation(Predicate inner) {
  Predicate p;
  p.kind = Kind::negate;
  p.children.push_back(std::move(inner));
  return p;
}

ScheduleScript parse_script(std::string_view text) {
  Parser parser(Lexer(text).run());
  ScheduleScript script = parser.run();
  script.source_text = std::string(text);
  return script;
}

std::string render(const Predicate& p) {
  switch (p.kind) {
    case Predicate::Kind::compare:
      return render_operand(p.lhs) + " " + std::string(to_string(p.op)) + " " +
             render_operand(p.rhs);
    case Predicate::Kind::flag:
      return std::string(to_string(p.flag));
    case Predicate::Kind::negate:
      return "not " + render_child(p.children.front());
    case Predicate::Kind::all_of:
    case Predicate::Kind::any_of: {
      const char* sep = p.kind == Predicate::Kind::all_of ? " and " : " or ";
      std::string out;
      for (std::size_t i = 0; i < p.children.size(); ++i) {
        if (i > 0) {
          out += sep;
        }
        out += render_child(p.children[i]);
      }
      return out;
    }
  }
  return {};
}

std::string render(const ScheduleScript& script) {
  std::ostringstream out;
  for (const Stage& s : script.stages) {
    out << "stage " << planners::to_string(s.behavior);
    if (s.target_speed) {
      out << " target " << format_number(*s.target_speed);
    }
    if (s.when) {
      out << " when (" << render(*s.when) << ")";
    }
    if (s.until) {
      out << " until (" << render(*s.until) << ")";
    }
    out << " timeout " << format_number(s.timeout);
    if (s.on_timeout == TimeoutPolicy::fail) {
      out << " on_timeout fail";
    }
    out << "\n";
  }
  for (const FallbackRule& f : script.fallbacks) {
    out << "fallback " << planners::to_string(f.behavior) << " when (" << render(f.when) << ")";
    if (f.clear_after != kDefaultClearAfter) {
      out << " clear_after " << f.clear_after;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace scriptdrive::schedule
