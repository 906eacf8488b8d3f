#include "matchlike/rules.hpp"

#include <gtest/gtest.h>

#include "matchlike/error.hpp"
#include "rule_gen.hpp"

namespace matchlike::rules {
namespace {

const char* kGuardRule =
    "WHEN input.credit_history == 1 AND input.applicant_income >= 50000 THEN OVERRIDE('approve')";

TEST(ParseRule, GuardExample) {
  RuleAst ast = parse_rule(kGuardRule);
  ASSERT_TRUE(std::holds_alternative<And>(ast.condition->node));
  const auto& conj = std::get<And>(ast.condition->node);
  EXPECT_TRUE(*conj.lhs == *compare(field(Namespace::Input, "credit_history"), CompareOp::Eq, number(1)));
  EXPECT_TRUE(*conj.rhs ==
              *compare(field(Namespace::Input, "applicant_income"), CompareOp::Ge, number(50000)));
  ASSERT_TRUE(std::holds_alternative<Override>(ast.action));
  EXPECT_EQ(std::get<Override>(ast.action).label, "approve");
}

TEST(ParseRule, AttributionRatioRule) {
  RuleAst ast = parse_rule("WHEN abs(attribution.gender) > 0.5 * total_attribution THEN SHUTDOWN");
  const auto& cmp = std::get<Comparison>(ast.condition->node);
  EXPECT_TRUE(*cmp.lhs == *abs(field(Namespace::Attribution, "gender")));
  EXPECT_TRUE(*cmp.rhs == *mul(number(0.5), total_attribution()));
  EXPECT_TRUE(std::holds_alternative<Shutdown>(ast.action));
}

TEST(ParseRule, MissingTermReportsOffset) {
  try {
    parse_rule("WHEN THEN");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_EQ(e.position(), 5u);
    EXPECT_NE(e.detail().find("term"), std::string::npos);
  }
}

TEST(ParseRule, KeywordsAreCaseInsensitive) {
  RuleAst a = parse_rule("when not input.x > 0 and input.y < 1 then reject('no')");
  RuleAst b = parse_rule("WHEN NOT input.x > 0 AND input.y < 1 THEN REJECT('no')");
  EXPECT_TRUE(a == b);
}

TEST(ParseRule, OtherErrors) {
  for (const char* bad : {"WHEN input.x > 1", "WHEN input.x > 1 THEN OVERRIDE(approve)",
                          "WHEN input. > 1 THEN RESET", "WHEN input.x > 1 THEN RESET extra",
                          "WHEN (input.x > 1 THEN RESET", "WHEN input.x > 'open THEN RESET"}) {
    try {
      parse_rule(bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ParseError) << bad;
      EXPECT_NE(e.position(), Error::npos);
    }
  }
}

TEST(Precedence, AndBindsTighterThanOr) {
  ExprPtr e = parse_condition("input.a > 0 OR input.b > 0 AND input.c > 0");
  ExprPtr a = compare(field(Namespace::Input, "a"), CompareOp::Gt, number(0));
  ExprPtr b = compare(field(Namespace::Input, "b"), CompareOp::Gt, number(0));
  ExprPtr c = compare(field(Namespace::Input, "c"), CompareOp::Gt, number(0));
  EXPECT_TRUE(*e == *any_of(a, all_of(b, c)));
  EXPECT_TRUE(*parse_condition("NOT input.a > 0 AND input.b > 0") == *all_of(negate(a), b));
  EXPECT_TRUE(*parse_condition("(input.a > 0 OR input.b > 0) AND input.c > 0") == *all_of(any_of(a, b), c));
  EXPECT_TRUE(*parse_condition("input.a > 0 OR input.b > 0 OR input.c > 0") == *any_of(any_of(a, b), c));
}

TEST(Precedence, ParenthesizedTerms) {
  ExprPtr e = parse_condition("(input.a * 2) > 3");
  EXPECT_TRUE(*e == *compare(mul(field(Namespace::Input, "a"), number(2)), CompareOp::Gt, number(3)));
}

TEST(FormatRule, CanonicalText) {
  RuleAst ast = parse_rule(kGuardRule);
  EXPECT_EQ(format_rule(ast), kGuardRule);
  ExprPtr a = compare(field(Namespace::Input, "a"), CompareOp::Gt, number(0));
  ExprPtr b = compare(field(Namespace::Input, "b"), CompareOp::Lt, number(1));
  EXPECT_EQ(format_expr(*negate(all_of(a, b))), "NOT (input.a > 0 AND input.b < 1)");
  EXPECT_EQ(format_number(50000), "50000");
  EXPECT_EQ(format_number(-10), "-10");
  EXPECT_EQ(format_rule({a, Reject{"it's"}}), "WHEN input.a > 0 THEN REJECT('it\\'s')");
}

TEST(FormatRule, RoundTripsFuzzedAsts) {
  testing::RuleGenerator gen(17);
  for (int i = 0; i < 300; ++i) {
    RuleAst ast = gen.rule();
    const std::string text = format_rule(ast);
    RuleAst back = parse_rule(text);
    ASSERT_TRUE(back == ast) << text;
    EXPECT_EQ(format_rule(back), text);
  }
}

EvalContext ctx_with_x(double x) {
  EvalContext ctx;
  ctx.input = {{"x", x}, {"name", "bob"}};
  ctx.label = "deny";
  ctx.probability = 0.7;
  return ctx;
}

TEST(Evaluate, FiresOnlyWhenTrue) {
  RuleAst ast = parse_rule("WHEN input.x > 0 THEN OVERRIDE('approve')");
  auto fired = evaluate(ast, ctx_with_x(1));
  ASSERT_TRUE(fired.has_value());
  EXPECT_EQ(std::get<Override>(*fired).label, "approve");
  EXPECT_FALSE(evaluate(ast, ctx_with_x(0)).has_value());
}

TEST(Evaluate, TextAndOutputFields) {
  RuleAst ast = parse_rule("WHEN input.name == 'bob' AND output.label == 'deny' AND output.probability > 0.5 THEN RESET");
  EXPECT_TRUE(evaluate(ast, ctx_with_x(0)).has_value());
}

TEST(Evaluate, AttributionUnavailable) {
  RuleAst ast = parse_rule("WHEN attribution.gender > 0.1 THEN SHUTDOWN");
  try {
    evaluate(ast, ctx_with_x(0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AttributionUnavailable);
  }
}

TEST(Evaluate, UnboundField) {
  RuleAst ast = parse_rule("WHEN input.missing > 0 THEN RESET");
  try {
    evaluate(ast, ctx_with_x(0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnboundField);
  }
}

TEST(Evaluate, RatioRulesAreScaleInvariant) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  std::uniform_real_distribution<double> scale(0.01, 100);
  RuleAst ast = parse_rule("WHEN abs(attribution.gender) > 0.5 * total_attribution THEN SHUTDOWN");
  RuleAst plain = parse_rule("WHEN attribution.income >= 0.25 * total_attribution THEN SHUTDOWN");
  for (int i = 0; i < 500; ++i) {
    EvalContext ctx;
    ctx.attribution = std::map<std::string, double>{{"gender", u(rng)}, {"income", u(rng)}, {"x", u(rng)}};
    EvalContext scaled = ctx;
    const double s = scale(rng);
    for (auto& [k, v] : *scaled.attribution) v *= s;
    EXPECT_EQ(evaluate(ast, ctx).has_value(), evaluate(ast, scaled).has_value());
    EXPECT_EQ(evaluate(plain, ctx).has_value(), evaluate(plain, scaled).has_value());
  }
}

TEST(Bind, ChecksFieldsTypesAndLabels) {
  BindSchema schema;
  schema.input_fields = {{"income", false}, {"gender", true}};
  schema.labels = {"deny", "approve"};
  bind(parse_rule("WHEN input.income > 0 AND input.gender == 'Male' THEN OVERRIDE('approve')"), schema);

  auto expect_code = [&](const char* text, ErrorCode code) {
    try {
      bind(parse_rule(text), schema);
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code) << text;
    }
  };
  expect_code("WHEN input.nope > 0 THEN RESET", ErrorCode::UnboundField);
  expect_code("WHEN input.gender < 'M' THEN RESET", ErrorCode::TypeMismatch);
  expect_code("WHEN input.gender == 1 THEN RESET", ErrorCode::TypeMismatch);
  expect_code("WHEN input.income > 0 THEN OVERRIDE('maybe')", ErrorCode::UnknownLabel);
  expect_code("WHEN attribution.income > 0 THEN RESET", ErrorCode::UnboundField);
  expect_code("WHEN output.label == 'deny' THEN RESET", ErrorCode::UnboundField);
  schema.allowed_actions = {"reject"};
  expect_code("WHEN input.income > 0 THEN RESET", ErrorCode::TypeMismatch);
}

TEST(Evaluate, TotalOnBoundRules) {
  // A bound rule over a complete context never throws.
  testing::RuleGenerator gen(4);
  BindSchema schema;
  schema.input_fields = {{"income", false}, {"gender", true}, {"credit_history", false},
                         {"x_1", false}, {"label", false}, {"probability", false}, {"AND_not", true}};
  schema.output_available = true;
  schema.attribution_allowed = true;
  EvalContext ctx;
  ctx.input = {{"income", 10}, {"gender", "Male"}, {"credit_history", 1}, {"x_1", -3},
               {"label", 2}, {"probability", 0.5}, {"AND_not", "x"}};
  ctx.label = "deny";
  ctx.probability = 0.4;
  ctx.attribution = std::map<std::string, double>{{"income", 0.1}, {"gender", -0.2}, {"credit_history", 0.0},
                                                  {"x_1", 0.3}, {"label", 0.0}, {"probability", 0.0}, {"AND_not", 1}};
  int bound = 0;
  for (int i = 0; i < 2000 && bound < 200; ++i) {
    RuleAst ast = gen.rule();
    try {
      bind_condition(*ast.condition, schema);
    } catch (const Error&) {
      continue;
    }
    ++bound;
    EXPECT_NO_THROW(evaluate(ast, ctx)) << format_rule(ast);
  }
  EXPECT_GT(bound, 20);
}

}  // namespace
}  // namespace matchlike::rules
