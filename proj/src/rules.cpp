#include "matchlike/rules.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "matchlike/error.hpp"

namespace matchlike::rules {

std::string_view to_string(Namespace ns) {
  switch (ns) {
    case Namespace::Input: return "input";
    case Namespace::Output: return "output";
    case Namespace::Attribution: return "attribution";
  }
  return "input";
}

std::string_view to_string(CompareOp op) {
  switch (op) {
    case CompareOp::Eq: return "==";
    case CompareOp::Ne: return "!=";
    case CompareOp::Lt: return "<";
    case CompareOp::Le: return "<=";
    case CompareOp::Gt: return ">";
    case CompareOp::Ge: return ">=";
  }
  return "==";
}

TermPtr field(Namespace ns, std::string name) {
  return std::make_shared<const Term>(Term{FieldRef{ns, std::move(name)}});
}
TermPtr number(double value) { return std::make_shared<const Term>(Term{NumberLit{value}}); }
TermPtr text(std::string value) { return std::make_shared<const Term>(Term{TextLit{std::move(value)}}); }
TermPtr abs(TermPtr arg) { return std::make_shared<const Term>(Term{Abs{std::move(arg)}}); }
TermPtr total_attribution() { return std::make_shared<const Term>(Term{TotalAttribution{}}); }
TermPtr mul(TermPtr lhs, TermPtr rhs) {
  return std::make_shared<const Term>(Term{Mul{std::move(lhs), std::move(rhs)}});
}
ExprPtr compare(TermPtr lhs, CompareOp op, TermPtr rhs) {
  return std::make_shared<const Expr>(Expr{Comparison{std::move(lhs), op, std::move(rhs)}});
}
ExprPtr all_of(ExprPtr lhs, ExprPtr rhs) {
  return std::make_shared<const Expr>(Expr{And{std::move(lhs), std::move(rhs)}});
}
ExprPtr any_of(ExprPtr lhs, ExprPtr rhs) {
  return std::make_shared<const Expr>(Expr{Or{std::move(lhs), std::move(rhs)}});
}
ExprPtr negate(ExprPtr arg) { return std::make_shared<const Expr>(Expr{Not{std::move(arg)}}); }

// ---------------------------------------------------------------------------
// Structural equality

bool operator==(const Term& a, const Term& b) {
  if (a.node.index() != b.node.index()) return false;
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        const auto& y = std::get<T>(b.node);
        if constexpr (std::is_same_v<T, FieldRef>) return x.ns == y.ns && x.field == y.field;
        if constexpr (std::is_same_v<T, NumberLit>) return x.value == y.value;
        if constexpr (std::is_same_v<T, TextLit>) return x.value == y.value;
        if constexpr (std::is_same_v<T, Abs>) return *x.arg == *y.arg;
        if constexpr (std::is_same_v<T, TotalAttribution>) return true;
        if constexpr (std::is_same_v<T, Mul>) return *x.lhs == *y.lhs && *x.rhs == *y.rhs;
      },
      a.node);
}

bool operator==(const Expr& a, const Expr& b) {
  if (a.node.index() != b.node.index()) return false;
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        const auto& y = std::get<T>(b.node);
        if constexpr (std::is_same_v<T, Comparison>) {
          return x.op == y.op && *x.lhs == *y.lhs && *x.rhs == *y.rhs;
        } else if constexpr (std::is_same_v<T, Not>) {
          return *x.arg == *y.arg;
        } else {
          return *x.lhs == *y.lhs && *x.rhs == *y.rhs;
        }
      },
      a.node);
}

bool operator==(const Action& a, const Action& b) {
  if (a.index() != b.index()) return false;
  if (const auto* o = std::get_if<Override>(&a)) return o->label == std::get<Override>(b).label;
  if (const auto* r = std::get_if<Reject>(&a)) return r->message == std::get<Reject>(b).message;
  return true;
}

bool operator==(const RuleAst& a, const RuleAst& b) {
  return *a.condition == *b.condition && a.action == b.action;
}

// ---------------------------------------------------------------------------
// Lexer

namespace {

enum class Tok { Ident, Number, String, LParen, RParen, Dot, Star, Minus, Cmp, End };

struct Token {
  Tok kind;
  std::string text;  // identifier / decoded string / operator
  double number = 0;
  std::size_t pos = 0;
};

bool ieq(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

[[noreturn]] void fail(std::size_t pos, std::vector<std::string> expected, std::string_view found) {
  std::string joined;
  for (const auto& e : expected) {
    if (!joined.empty()) joined += ", ";
    joined += e;
  }
  throw Error(ErrorCode::ParseError,
              "parse error at offset " + std::to_string(pos) + ": expected " + joined + ", found " +
                  std::string(found),
              joined, pos);
}

std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (i < src.size() && (std::isalnum(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
      out.push_back({Tok::Ident, std::string(src.substr(start, i - start)), 0, start});
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
      if (i < src.size() && src[i] == '.') {
        ++i;
        while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
      }
      if (i < src.size() && (src[i] == 'e' || src[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < src.size() && (src[j] == '+' || src[j] == '-')) ++j;
        if (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) {
          i = j;
          while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
        }
      }
      double v = 0;
      auto [ptr, ec] = std::from_chars(src.data() + start, src.data() + i, v);
      if (ec != std::errc{} || ptr != src.data() + i) fail(start, {"number"}, src.substr(start, i - start));
      out.push_back({Tok::Number, std::string(src.substr(start, i - start)), v, start});
      continue;
    }
    if (c == '\'' || c == '"') {
      const char quote = c;
      std::string value;
      ++i;
      bool closed = false;
      while (i < src.size()) {
        if (src[i] == '\\' && i + 1 < src.size()) {
          value.push_back(src[i + 1]);
          i += 2;
          continue;
        }
        if (src[i] == quote) {
          closed = true;
          ++i;
          break;
        }
        value.push_back(src[i++]);
      }
      if (!closed) fail(src.size(), {"closing quote"}, "end of input");
      out.push_back({Tok::String, std::move(value), 0, start});
      continue;
    }
    auto two = src.substr(i, 2);
    if (two == "==" || two == "!=" || two == "<=" || two == ">=") {
      out.push_back({Tok::Cmp, std::string(two), 0, start});
      i += 2;
      continue;
    }
    switch (c) {
      case '<':
      case '>':
        out.push_back({Tok::Cmp, std::string(1, c), 0, start});
        break;
      case '(': out.push_back({Tok::LParen, "(", 0, start}); break;
      case ')': out.push_back({Tok::RParen, ")", 0, start}); break;
      case '.': out.push_back({Tok::Dot, ".", 0, start}); break;
      case '*': out.push_back({Tok::Star, "*", 0, start}); break;
      case '-': out.push_back({Tok::Minus, "-", 0, start}); break;
      default: fail(start, {"token"}, std::string("'") + c + "'");
    }
    ++i;
  }
  out.push_back({Tok::End, "", 0, src.size()});
  return out;
}

class Parser {
 public:
  explicit Parser(std::string_view src) : tokens_(lex(src)) {}

  RuleAst rule() {
    expect_keyword("WHEN");
    ExprPtr cond = expr();
    expect_keyword("THEN");
    Action act = action();
    expect_end();
    return {std::move(cond), std::move(act)};
  }

  ExprPtr condition_only() {
    ExprPtr e = expr();
    expect_end();
    return e;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& next() { return tokens_[pos_++]; }

  std::string describe(const Token& t) const {
    if (t.kind == Tok::End) return "end of input";
    return "'" + t.text + "'";
  }

  bool at_keyword(std::string_view kw) const {
    return peek().kind == Tok::Ident && ieq(peek().text, kw);
  }

  void expect_keyword(std::string_view kw) {
    if (!at_keyword(kw)) fail(peek().pos, {std::string(kw)}, describe(peek()));
    ++pos_;
  }

  void expect(Tok kind, std::string_view what) {
    if (peek().kind != kind) fail(peek().pos, {std::string(what)}, describe(peek()));
    ++pos_;
  }

  void expect_end() {
    if (peek().kind != Tok::End) fail(peek().pos, {"end of input"}, describe(peek()));
  }

  ExprPtr expr() {
    ExprPtr lhs = conj();
    while (at_keyword("OR")) {
      ++pos_;
      lhs = any_of(lhs, conj());
    }
    return lhs;
  }

  ExprPtr conj() {
    ExprPtr lhs = unary();
    while (at_keyword("AND")) {
      ++pos_;
      lhs = all_of(lhs, unary());
    }
    return lhs;
  }

  ExprPtr unary() {
    if (at_keyword("NOT")) {
      ++pos_;
      return negate(unary());
    }
    if (peek().kind == Tok::LParen) {
      // "(" may open a grouped expression or a parenthesized term.
      const std::size_t saved = pos_;
      try {
        ++pos_;
        ExprPtr inner = expr();
        expect(Tok::RParen, "')'");
        if (peek().kind != Tok::Cmp && peek().kind != Tok::Star) return inner;
      } catch (const Error& grouped) {
        pos_ = saved;
        try {
          return comparison();
        } catch (const Error& as_term) {
          // report whichever reading got further
          if (grouped.position() > as_term.position()) throw grouped;
          throw;
        }
      }
      pos_ = saved;
    }
    return comparison();
  }

  ExprPtr comparison() {
    TermPtr lhs = term();
    if (peek().kind != Tok::Cmp) fail(peek().pos, {"comparison operator"}, describe(peek()));
    const std::string op = next().text;
    CompareOp cop = op == "==" ? CompareOp::Eq
                    : op == "!=" ? CompareOp::Ne
                    : op == "<"  ? CompareOp::Lt
                    : op == "<=" ? CompareOp::Le
                    : op == ">"  ? CompareOp::Gt
                                 : CompareOp::Ge;
    TermPtr rhs = term();
    return compare(lhs, cop, rhs);
  }

  TermPtr term() {
    TermPtr lhs = factor();
    while (peek().kind == Tok::Star) {
      ++pos_;
      lhs = mul(lhs, factor());
    }
    return lhs;
  }

  TermPtr factor() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::Number:
        ++pos_;
        return number(t.number);
      case Tok::Minus: {
        ++pos_;
        if (peek().kind != Tok::Number) fail(peek().pos, {"number"}, describe(peek()));
        return number(-next().number);
      }
      case Tok::String:
        ++pos_;
        return text(t.text);
      case Tok::LParen: {
        ++pos_;
        TermPtr inner = term();
        expect(Tok::RParen, "')'");
        return inner;
      }
      case Tok::Ident: {
        if (ieq(t.text, "abs")) {
          ++pos_;
          expect(Tok::LParen, "'('");
          TermPtr inner = term();
          expect(Tok::RParen, "')'");
          return abs(inner);
        }
        if (ieq(t.text, "total_attribution")) {
          ++pos_;
          return total_attribution();
        }
        std::optional<Namespace> ns;
        if (ieq(t.text, "input")) ns = Namespace::Input;
        if (ieq(t.text, "output")) ns = Namespace::Output;
        if (ieq(t.text, "attribution")) ns = Namespace::Attribution;
        if (ns) {
          ++pos_;
          expect(Tok::Dot, "'.'");
          if (peek().kind != Tok::Ident) fail(peek().pos, {"field name"}, describe(peek()));
          return field(*ns, next().text);
        }
        break;
      }
      default:
        break;
    }
    fail(t.pos, {"term"}, describe(t));
  }

  Action action() {
    const Token& t = peek();
    if (t.kind == Tok::Ident) {
      if (ieq(t.text, "OVERRIDE") || ieq(t.text, "REJECT")) {
        const bool is_override = ieq(t.text, "OVERRIDE");
        ++pos_;
        expect(Tok::LParen, "'('");
        if (peek().kind != Tok::String) fail(peek().pos, {"quoted text"}, describe(peek()));
        std::string value = next().text;
        expect(Tok::RParen, "')'");
        if (is_override) return Override{std::move(value)};
        return Reject{std::move(value)};
      }
      if (ieq(t.text, "SHUTDOWN")) {
        ++pos_;
        return Shutdown{};
      }
      if (ieq(t.text, "RESET")) {
        ++pos_;
        return Reset{};
      }
    }
    fail(t.pos, {"OVERRIDE", "REJECT", "SHUTDOWN", "RESET"}, describe(t));
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

}  // namespace

RuleAst parse_rule(std::string_view text) { return Parser(text).rule(); }
ExprPtr parse_condition(std::string_view text) { return Parser(text).condition_only(); }

// ---------------------------------------------------------------------------
// Formatting

std::string format_number(double value) {
  if (std::floor(value) == value && std::fabs(value) < 1e15) {
    std::array<char, 32> buf{};
    std::snprintf(buf.data(), buf.size(), "%.0f", value);
    return buf.data();
  }
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), end);
}

namespace {

std::string quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('\'');
  return out;
}

}  // namespace

std::string format_term(const Term& term) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, FieldRef>) {
          return std::string(to_string(x.ns)) + "." + x.field;
        } else if constexpr (std::is_same_v<T, NumberLit>) {
          return format_number(x.value);
        } else if constexpr (std::is_same_v<T, TextLit>) {
          return quote(x.value);
        } else if constexpr (std::is_same_v<T, Abs>) {
          return "abs(" + format_term(*x.arg) + ")";
        } else if constexpr (std::is_same_v<T, TotalAttribution>) {
          return "total_attribution";
        } else {
          std::string rhs = format_term(*x.rhs);
          if (std::holds_alternative<Mul>(x.rhs->node)) rhs = "(" + rhs + ")";
          return format_term(*x.lhs) + " * " + rhs;
        }
      },
      term.node);
}

std::string format_expr(const Expr& expr) {
  auto wrap_if = [](const Expr& e, bool cond) {
    return cond ? "(" + format_expr(e) + ")" : format_expr(e);
  };
  return std::visit(
      [&](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Comparison>) {
          return format_term(*x.lhs) + " " + std::string(to_string(x.op)) + " " + format_term(*x.rhs);
        } else if constexpr (std::is_same_v<T, Or>) {
          return format_expr(*x.lhs) + " OR " + wrap_if(*x.rhs, std::holds_alternative<Or>(x.rhs->node));
        } else if constexpr (std::is_same_v<T, And>) {
          const bool rhs_binary = std::holds_alternative<Or>(x.rhs->node) ||
                                  std::holds_alternative<And>(x.rhs->node);
          return wrap_if(*x.lhs, std::holds_alternative<Or>(x.lhs->node)) + " AND " +
                 wrap_if(*x.rhs, rhs_binary);
        } else {
          const bool simple = std::holds_alternative<Comparison>(x.arg->node) ||
                              std::holds_alternative<Not>(x.arg->node);
          return "NOT " + wrap_if(*x.arg, !simple);
        }
      },
      expr.node);
}

std::string format_action(const Action& action) {
  if (const auto* o = std::get_if<Override>(&action)) return "OVERRIDE(" + quote(o->label) + ")";
  if (const auto* r = std::get_if<Reject>(&action)) return "REJECT(" + quote(r->message) + ")";
  if (std::holds_alternative<Shutdown>(action)) return "SHUTDOWN";
  return "RESET";
}

std::string format_rule(const RuleAst& rule) {
  return "WHEN " + format_expr(*rule.condition) + " THEN " + format_action(rule.action);
}

std::string_view action_name(const Action& action) {
  if (std::holds_alternative<Override>(action)) return "override";
  if (std::holds_alternative<Reject>(action)) return "reject";
  if (std::holds_alternative<Shutdown>(action)) return "shutdown";
  return "reset";
}

// ---------------------------------------------------------------------------
// Binding

namespace {

enum class ValueKind { Number, Text };

ValueKind bind_term(const Term& term, const BindSchema& schema) {
  return std::visit(
      [&](const auto& x) -> ValueKind {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, FieldRef>) {
          const std::string ref = std::string(to_string(x.ns)) + "." + x.field;
          switch (x.ns) {
            case Namespace::Input: {
              auto it = schema.input_fields.find(x.field);
              if (it == schema.input_fields.end()) {
                throw Error(ErrorCode::UnboundField, "unknown input field '" + x.field + "'", ref);
              }
              return it->second ? ValueKind::Text : ValueKind::Number;
            }
            case Namespace::Output:
              if (!schema.output_available) {
                throw Error(ErrorCode::UnboundField, "output is not available to this block", ref);
              }
              if (x.field == "label") return ValueKind::Text;
              if (x.field == "probability") return ValueKind::Number;
              throw Error(ErrorCode::UnboundField, "unknown output field '" + x.field + "'", ref);
            case Namespace::Attribution:
              if (!schema.attribution_allowed) {
                throw Error(ErrorCode::UnboundField,
                            "attribution terms are only valid in explanation-aware blocks", ref);
              }
              if (!schema.attribution_fields.empty() && !schema.attribution_fields.count(x.field)) {
                throw Error(ErrorCode::UnboundField, "unknown attribution field '" + x.field + "'", ref);
              }
              return ValueKind::Number;
          }
          return ValueKind::Number;
        } else if constexpr (std::is_same_v<T, NumberLit>) {
          return ValueKind::Number;
        } else if constexpr (std::is_same_v<T, TextLit>) {
          return ValueKind::Text;
        } else if constexpr (std::is_same_v<T, Abs>) {
          if (bind_term(*x.arg, schema) != ValueKind::Number) {
            throw Error(ErrorCode::TypeMismatch, "abs() needs a numeric argument");
          }
          return ValueKind::Number;
        } else if constexpr (std::is_same_v<T, TotalAttribution>) {
          if (!schema.attribution_allowed) {
            throw Error(ErrorCode::UnboundField,
                        "total_attribution is only valid in explanation-aware blocks",
                        "total_attribution");
          }
          return ValueKind::Number;
        } else {
          if (bind_term(*x.lhs, schema) != ValueKind::Number ||
              bind_term(*x.rhs, schema) != ValueKind::Number) {
            throw Error(ErrorCode::TypeMismatch, "'*' needs numeric operands");
          }
          return ValueKind::Number;
        }
      },
      term.node);
}

}  // namespace

void bind_condition(const Expr& expr, const BindSchema& schema) {
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Comparison>) {
          const ValueKind l = bind_term(*x.lhs, schema);
          const ValueKind r = bind_term(*x.rhs, schema);
          if (l != r) {
            throw Error(ErrorCode::TypeMismatch,
                        "cannot compare text with a number: " + format_expr(expr));
          }
          if (l == ValueKind::Text && x.op != CompareOp::Eq && x.op != CompareOp::Ne) {
            throw Error(ErrorCode::TypeMismatch,
                        "text comparisons only support == and !=: " + format_expr(expr));
          }
        } else if constexpr (std::is_same_v<T, Not>) {
          bind_condition(*x.arg, schema);
        } else {
          bind_condition(*x.lhs, schema);
          bind_condition(*x.rhs, schema);
        }
      },
      expr.node);
}

void bind(const RuleAst& rule, const BindSchema& schema) {
  bind_condition(*rule.condition, schema);
  const std::string name(action_name(rule.action));
  if (!schema.allowed_actions.empty() && !schema.allowed_actions.count(name)) {
    throw Error(ErrorCode::TypeMismatch, "action " + format_action(rule.action) +
                                             " is not allowed in this block", name);
  }
  if (const auto* o = std::get_if<Override>(&rule.action)) {
    if (std::find(schema.labels.begin(), schema.labels.end(), o->label) == schema.labels.end()) {
      throw Error(ErrorCode::UnknownLabel, "unknown override label '" + o->label + "'", o->label);
    }
  }
}

bool needs_attribution(const Expr& expr) {
  struct TermScan {
    bool operator()(const Term& t) const {
      return std::visit(
          [this](const auto& x) -> bool {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, FieldRef>) return x.ns == Namespace::Attribution;
            if constexpr (std::is_same_v<T, TotalAttribution>) return true;
            if constexpr (std::is_same_v<T, Abs>) return (*this)(*x.arg);
            if constexpr (std::is_same_v<T, Mul>) return (*this)(*x.lhs) || (*this)(*x.rhs);
            return false;
          },
          t.node);
    }
  };
  return std::visit(
      [](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Comparison>) return TermScan{}(*x.lhs) || TermScan{}(*x.rhs);
        if constexpr (std::is_same_v<T, Not>) return needs_attribution(*x.arg);
        if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
          return needs_attribution(*x.lhs) || needs_attribution(*x.rhs);
        }
      },
      expr.node);
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

using Value = std::variant<double, std::string>;

const std::map<std::string, double>& attributions(const EvalContext& ctx) {
  if (!ctx.attribution) {
    throw Error(ErrorCode::AttributionUnavailable, "rule needs attributions but none were supplied");
  }
  return *ctx.attribution;
}

double as_number(const Value& v) {
  if (const double* d = std::get_if<double>(&v)) return *d;
  throw Error(ErrorCode::TypeMismatch, "expected a number, found text");
}

Value eval_term(const Term& term, const EvalContext& ctx) {
  return std::visit(
      [&](const auto& x) -> Value {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, FieldRef>) {
          const std::string ref = std::string(to_string(x.ns)) + "." + x.field;
          switch (x.ns) {
            case Namespace::Input: {
              auto it = ctx.input.find(x.field);
              if (it == ctx.input.end()) {
                throw Error(ErrorCode::UnboundField, "input has no field '" + x.field + "'", ref);
              }
              if (it->is_string()) return it->template get<std::string>();
              if (it->is_boolean()) return it->template get<bool>() ? 1.0 : 0.0;
              if (it->is_number()) return it->template get<double>();
              throw Error(ErrorCode::UnboundField, "input field '" + x.field + "' is not a value", ref);
            }
            case Namespace::Output:
              if (x.field == "label" && ctx.label) return *ctx.label;
              if (x.field == "probability" && ctx.probability) return *ctx.probability;
              throw Error(ErrorCode::UnboundField, "output has no field '" + x.field + "'", ref);
            case Namespace::Attribution: {
              const auto& attr = attributions(ctx);
              auto it = attr.find(x.field);
              if (it == attr.end()) {
                throw Error(ErrorCode::UnboundField, "no attribution for '" + x.field + "'", ref);
              }
              return it->second;
            }
          }
          return 0.0;
        } else if constexpr (std::is_same_v<T, NumberLit>) {
          return x.value;
        } else if constexpr (std::is_same_v<T, TextLit>) {
          return x.value;
        } else if constexpr (std::is_same_v<T, Abs>) {
          return std::fabs(as_number(eval_term(*x.arg, ctx)));
        } else if constexpr (std::is_same_v<T, TotalAttribution>) {
          double total = 0;
          for (const auto& [_, v] : attributions(ctx)) total += std::fabs(v);
          return total;
        } else {
          return as_number(eval_term(*x.lhs, ctx)) * as_number(eval_term(*x.rhs, ctx));
        }
      },
      term.node);
}

template <typename T>
bool apply(CompareOp op, const T& a, const T& b) {
  switch (op) {
    case CompareOp::Eq: return a == b;
    case CompareOp::Ne: return a != b;
    case CompareOp::Lt: return a < b;
    case CompareOp::Le: return a <= b;
    case CompareOp::Gt: return a > b;
    case CompareOp::Ge: return a >= b;
  }
  return false;
}

}  // namespace

bool evaluate_condition(const Expr& expr, const EvalContext& ctx) {
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Comparison>) {
          const Value l = eval_term(*x.lhs, ctx);
          const Value r = eval_term(*x.rhs, ctx);
          if (l.index() != r.index()) {
            throw Error(ErrorCode::TypeMismatch, "cannot compare text with a number");
          }
          if (const auto* ls = std::get_if<std::string>(&l)) {
            if (x.op != CompareOp::Eq && x.op != CompareOp::Ne) {
              throw Error(ErrorCode::TypeMismatch, "text comparisons only support == and !=");
            }
            return apply(x.op, *ls, std::get<std::string>(r));
          }
          return apply(x.op, std::get<double>(l), std::get<double>(r));
        } else if constexpr (std::is_same_v<T, Not>) {
          return !evaluate_condition(*x.arg, ctx);
        } else if constexpr (std::is_same_v<T, And>) {
          // both sides evaluated so that unbound references always surface
          const bool a = evaluate_condition(*x.lhs, ctx);
          const bool b = evaluate_condition(*x.rhs, ctx);
          return a && b;
        } else {
          const bool a = evaluate_condition(*x.lhs, ctx);
          const bool b = evaluate_condition(*x.rhs, ctx);
          return a || b;
        }
      },
      expr.node);
}

std::optional<Action> evaluate(const RuleAst& rule, const EvalContext& ctx) {
  if (evaluate_condition(*rule.condition, ctx)) return rule.action;
  return std::nullopt;
}

}  // namespace matchlike::rules
