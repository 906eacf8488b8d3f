#pragma once

// Explanations over anything that maps a feature row to a decision: a single
// model or a whole chain.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "matchlike/error.hpp"
#include "matchlike/models.hpp"
#include "matchlike/tabular.hpp"

namespace matchlike {

struct Outcome {
  std::vector<double> proba;  // aligned with BlackBox::classes; empty when rejected
  std::string label;
  std::optional<std::string> rejected;
  Json decision;
  Json events = Json::array();
};

struct BlackBox {
  /// Feature columns, scaling for perturbations and distances.
  Encoder encoder;
  std::vector<std::string> classes;
  std::function<Outcome(const FeatureRow&)> predict;
};

BlackBox model_black_box(std::shared_ptr<const Model> model);

/// Reads a decision record. An overridden label, or a bare class index, gives a
/// one-hot probability vector.
Outcome outcome_from_decision(const Json& decision, const std::vector<std::string>& classes);

struct Attribution {
  std::vector<std::string> features;
  std::vector<double> values;
  double base_value = 0;
  double prediction = 0;
  std::string method;
  std::string target_class;

  double value(std::string_view feature) const;
  Json to_json() const;
};

// ---------------------------------------------------------------------------

struct LimeConfig {
  int n_samples = 2000;
  double kernel_width = 0;  // <= 0: 0.75 * sqrt(encoded width)
  std::uint64_t seed = 0;
  std::size_t target_class = 1;
};

/// Perturbed neighbourhood in encoded space. Row 0 is the instance itself.
/// Rejected samples carry weight 0.
struct LimeSamples {
  std::vector<std::vector<double>> encoded;
  std::vector<double> weights;
  std::vector<double> targets;
  double kernel_width = 0;
};

LimeSamples lime_samples(const BlackBox& box, const FeatureRow& instance, const LimeConfig& config);

/// Weighted ridge surrogate (lambda 1e-3, unpenalized intercept); values are
/// keyed by encoded feature and base_value is the intercept.
Attribution explain_lime(const BlackBox& box, const FeatureRow& instance, const LimeConfig& config);

// ---------------------------------------------------------------------------

struct ShapConfig {
  std::vector<FeatureRow> background;
  bool exact = true;
  int n_samples = 2048;  // sampled mode
  std::uint64_t seed = 0;
  std::size_t target_class = 1;
};

constexpr std::size_t kMaxExactShapColumns = 12;

/// Kernel SHAP over column coalitions. Absent columns take background values,
/// averaged over the background set.
Attribution explain_shap(const BlackBox& box, const FeatureRow& instance, const ShapConfig& config);

/// Numeric means and categorical modes of a dataset's feature columns.
FeatureRow mean_row(const Dataset& dataset);

// ---------------------------------------------------------------------------

struct WhatIfResult {
  FeatureRow row;
  Outcome outcome;

  Json to_json(const Encoder& encoder) const;
};

/// Applies `edits` (feature -> value) and runs the full target. A filter
/// rejection is a result, not an error.
WhatIfResult explain_whatif(const BlackBox& box, const FeatureRow& base, const Json& edits);

// ---------------------------------------------------------------------------

struct CounterfactualConfig {
  std::string target_label;
  std::size_t k = 1;
  int max_iters = 20;  // restarts per returned counterfactual
  std::uint64_t seed = 0;
  double proximity_weight = 0.1;
  double diversity_weight = 0.05;
};

struct Counterfactual {
  FeatureRow original;
  FeatureRow modified;
  std::vector<std::string> changed;
  std::string predicted_label;
  double distance = 0;
};

struct CounterfactualResult {
  std::vector<Counterfactual> items;
  std::string diagnostic;

  Json to_json(const Encoder& encoder) const;
};

/// Step sizes, in standard deviations, for numeric moves.
inline constexpr double kCounterfactualSteps[] = {2, 1, 0.5, 0.25, 0.1, 0.05, 0.01};

/// Random-restart compass search over searchable columns. Every returned item
/// is verified against the full target.
CounterfactualResult explain_counterfactual(const BlackBox& box, const FeatureRow& instance,
                                            const CounterfactualConfig& config);

/// Mixed distance used by the search: |z| difference on numeric columns plus
/// one per changed categorical column.
double counterfactual_distance(const Encoder& encoder, const FeatureRow& a, const FeatureRow& b);

// ---------------------------------------------------------------------------

struct PrototypeSet {
  std::vector<std::size_t> prototypes;  // selection order
  std::vector<std::size_t> criticisms;
  double bandwidth = 1;

  Json to_json() const;
};

/// RBF kernel exp(-|x-y|^2 / (2 bandwidth^2)).
double rbf(const std::vector<double>& a, const std::vector<double>& b, double bandwidth);

/// Greedy MMD-critic. Ties go to the lowest index.
PrototypeSet mmd_critic(const std::vector<std::vector<double>>& points, std::size_t k_prototypes,
                        std::size_t k_criticisms, double bandwidth);

struct PrototypeConfig {
  std::size_t k_prototypes = 3;
  std::size_t k_criticisms = 1;
  double bandwidth = 0;  // <= 0: median pairwise distance
  std::optional<std::string> label;  // restrict to rows with this target
};

/// Indices refer to dataset rows.
PrototypeSet explain_prototypes(const Dataset& dataset, const PrototypeConfig& config);

// ---------------------------------------------------------------------------

struct ExampleEntry {
  std::size_t row = 0;
  double similarity = 0;
  std::string label;
  double probability = 0;
  Json features;
};

/// Nearest training rows in the model's representation space; similarity is
/// 1 / (1 + distance), ties to the lowest row index.
std::vector<ExampleEntry> explain_examples(const Dataset& dataset, const Model& model,
                                           const FeatureRow& instance, std::size_t k);
Json examples_to_json(const std::vector<ExampleEntry>& entries);

}  // namespace matchlike
