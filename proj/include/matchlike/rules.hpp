#pragma once

// Rule language shared by every control block:
//
//   rule   := "WHEN" expr "THEN" action
//   expr   := and ("OR" and)*
//   and    := unary ("AND" unary)*
//   unary  := "NOT" unary | "(" expr ")" | term cmp term
//   term   := factor ("*" factor)*
//   factor := number | "-" number | 'text' | "abs" "(" term ")"
//           | "total_attribution" | ns "." name | "(" term ")"
//   ns     := "input" | "output" | "attribution"
//   action := "OVERRIDE" "(" 'label' ")" | "REJECT" "(" 'message' ")"
//           | "SHUTDOWN" | "RESET"
//
// Keywords are case-insensitive.

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "matchlike/value.hpp"

namespace matchlike::rules {

enum class Namespace { Input, Output, Attribution };
enum class CompareOp { Eq, Ne, Lt, Le, Gt, Ge };

std::string_view to_string(Namespace ns);
std::string_view to_string(CompareOp op);

struct Term;
using TermPtr = std::shared_ptr<const Term>;

struct FieldRef {
  Namespace ns = Namespace::Input;
  std::string field;
};
struct NumberLit {
  double value = 0;
};
struct TextLit {
  std::string value;
};
struct Abs {
  TermPtr arg;
};
struct TotalAttribution {};
struct Mul {
  TermPtr lhs;
  TermPtr rhs;
};

struct Term {
  std::variant<FieldRef, NumberLit, TextLit, Abs, TotalAttribution, Mul> node;
};

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Comparison {
  TermPtr lhs;
  CompareOp op = CompareOp::Eq;
  TermPtr rhs;
};
struct And {
  ExprPtr lhs;
  ExprPtr rhs;
};
struct Or {
  ExprPtr lhs;
  ExprPtr rhs;
};
struct Not {
  ExprPtr arg;
};

struct Expr {
  std::variant<Comparison, And, Or, Not> node;
};

struct Override {
  std::string label;
};
struct Reject {
  std::string message;
};
struct Shutdown {};
struct Reset {};

using Action = std::variant<Override, Reject, Shutdown, Reset>;

struct RuleAst {
  ExprPtr condition;
  Action action;
};

// Construction helpers.
TermPtr field(Namespace ns, std::string name);
TermPtr number(double value);
TermPtr text(std::string value);
TermPtr abs(TermPtr arg);
TermPtr total_attribution();
TermPtr mul(TermPtr lhs, TermPtr rhs);
ExprPtr compare(TermPtr lhs, CompareOp op, TermPtr rhs);
ExprPtr all_of(ExprPtr lhs, ExprPtr rhs);
ExprPtr any_of(ExprPtr lhs, ExprPtr rhs);
ExprPtr negate(ExprPtr arg);

bool operator==(const Term& a, const Term& b);
bool operator==(const Expr& a, const Expr& b);
bool operator==(const Action& a, const Action& b);
bool operator==(const RuleAst& a, const RuleAst& b);

/// Throws Error(ParseError) with the 0-based byte offset in position() and
/// the expected-token set, comma separated, in detail().
RuleAst parse_rule(std::string_view text);
ExprPtr parse_condition(std::string_view text);

std::string format_rule(const RuleAst& rule);
std::string format_expr(const Expr& expr);
std::string format_term(const Term& term);
std::string format_action(const Action& action);
std::string format_number(double value);

struct EvalContext {
  Json input = Json::object();            // feature -> number | text
  std::optional<std::string> label;       // output.label
  std::optional<double> probability;      // output.probability
  std::optional<std::map<std::string, double>> attribution;
};

/// What a block declares about the context its rules will see.
struct BindSchema {
  std::map<std::string, bool> input_fields;  // name -> is text
  bool output_available = false;
  std::vector<std::string> labels;           // valid OVERRIDE labels
  bool attribution_allowed = false;
  std::set<std::string> attribution_fields;  // empty: any name accepted
  std::set<std::string> allowed_actions;     // "override", "reject", "shutdown", "reset"
};

/// Throws UnboundField, TypeMismatch or UnknownLabel.
void bind(const RuleAst& rule, const BindSchema& schema);
void bind_condition(const Expr& expr, const BindSchema& schema);

/// Pure. Throws UnboundField or AttributionUnavailable when the context cannot
/// answer a reference.
bool evaluate_condition(const Expr& expr, const EvalContext& ctx);
std::optional<Action> evaluate(const RuleAst& rule, const EvalContext& ctx);

std::string_view action_name(const Action& action);

/// Set of attribution-namespace references (empty when the rule needs none).
bool needs_attribution(const Expr& expr);

}  // namespace matchlike::rules
