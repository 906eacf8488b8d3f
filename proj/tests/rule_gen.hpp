#pragma once

// Random rule ASTs for property tests.

#include <random>
#include <string>
#include <vector>

#include "matchlike/rules.hpp"

namespace matchlike::testing {

class RuleGenerator {
 public:
  explicit RuleGenerator(std::uint64_t seed) : rng_(seed) {}

  rules::TermPtr term(int depth) {
    using namespace rules;
    const int pick = uniform(0, depth <= 0 ? 4 : 6);
    switch (pick) {
      case 0: return field(Namespace::Input, name());
      case 1: return field(pick_ns(), name());
      case 2: return number(num());
      case 3: return text(str());
      case 4: return total_attribution();
      case 5: return abs(term(depth - 1));
      default: return mul(term(depth - 1), term(depth - 1));
    }
  }

  rules::ExprPtr expr(int depth) {
    using namespace rules;
    const int pick = uniform(0, depth <= 0 ? 0 : 3);
    switch (pick) {
      case 0: return compare(term(2), static_cast<CompareOp>(uniform(0, 5)), term(2));
      case 1: return all_of(expr(depth - 1), expr(depth - 1));
      case 2: return any_of(expr(depth - 1), expr(depth - 1));
      default: return negate(expr(depth - 1));
    }
  }

  rules::Action action() {
    switch (uniform(0, 3)) {
      case 0: return rules::Override{str()};
      case 1: return rules::Reject{str()};
      case 2: return rules::Shutdown{};
      default: return rules::Reset{};
    }
  }

  rules::RuleAst rule() { return {expr(3), action()}; }

  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

 private:
  rules::Namespace pick_ns() { return static_cast<rules::Namespace>(uniform(0, 2)); }

  std::string name() {
    static const std::vector<std::string> names = {"income", "gender", "credit_history", "x_1",
                                                   "label", "probability", "AND_not"};
    return names[static_cast<std::size_t>(uniform(0, static_cast<int>(names.size()) - 1))];
  }

  double num() {
    switch (uniform(0, 3)) {
      case 0: return uniform(-100000, 100000);
      case 1: return std::uniform_real_distribution<double>(-10, 10)(rng_);
      case 2: return std::uniform_real_distribution<double>(0, 1e-6)(rng_);
      default: return std::uniform_real_distribution<double>(-1e20, 1e20)(rng_);
    }
  }

  std::string str() {
    static const std::vector<std::string> texts = {"approve", "deny", "it's", "back\\slash",
                                                   "negative income", "", "WHEN THEN"};
    return texts[static_cast<std::size_t>(uniform(0, static_cast<int>(texts.size()) - 1))];
  }

  std::mt19937_64 rng_;
};

}  // namespace matchlike::testing
