#pragma once

// Small trainable classifiers: multinomial logistic regression, a CART tree
// and a one-hidden-layer tanh MLP. All work on Encoder output.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "matchlike/tabular.hpp"

namespace matchlike {

enum class ModelKind { Logistic, Tree, Mlp };

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view name);

struct TrainingConfig {
  std::uint64_t seed = 0;
  double learning_rate = 0.1;
  int epochs = 500;
  int hidden = 8;
  int max_depth = 4;
  int min_samples_split = 2;

  Json to_json() const;
  static TrainingConfig from_json(const Json& doc);
};

struct LogisticParams {
  Eigen::MatrixXd weights;  // classes x features
  Eigen::VectorXd bias;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  int left = -1;   // encoded[feature] <= threshold
  int right = -1;
  std::vector<double> counts;  // class counts of training rows reaching the node
};

struct TreeParams {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
};

struct MlpParams {
  Eigen::MatrixXd w1;  // hidden x features
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // classes x hidden
  Eigen::VectorXd b2;
};

/// Encoded training data.
struct TrainingSet {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;
};

TrainingSet make_training_set(const Dataset& dataset, const Encoder& encoder);

class Model {
 public:
  ModelKind kind = ModelKind::Logistic;
  std::variant<LogisticParams, TreeParams, MlpParams> params;
  std::vector<std::string> classes;
  Encoder encoder;
  std::size_t n_features = 0;
  /// Exact-match label overrides (tree fallback for submitted corrections),
  /// keyed by encoded row.
  std::map<std::vector<double>, std::size_t> overrides;

  Json to_json() const;
  static Model from_json(const Json& doc);

  friend bool operator==(const Model& a, const Model& b);
};

Model train(ModelKind kind, const Dataset& dataset, const TrainingConfig& config);
Model train_encoded(ModelKind kind, const TrainingSet& data, std::vector<std::string> classes,
                    Encoder encoder, const TrainingConfig& config);

std::vector<double> predict_proba(const Model& model, std::span<const double> encoded_row);
std::vector<double> predict_proba_row(const Model& model, const FeatureRow& row);
std::size_t predict_class(const Model& model, std::span<const double> encoded_row);

/// Hidden activations for the MLP; the encoded input itself otherwise.
std::vector<double> representation(const Model& model, std::span<const double> encoded_row);

// Flat parameter view for gradient-based models (logistic, mlp).
std::vector<double> flat_parameters(const Model& model);
void set_flat_parameters(Model& model, std::span<const double> values);

/// Mean cross-entropy over `data`; fills `gradient` (flat layout) when given.
/// With `output_layer_only` the MLP gradient is zero outside w2/b2.
double loss_and_gradient(const Model& model, const TrainingSet& data,
                         std::vector<double>* gradient, bool output_layer_only = false);

/// Readable dump of a tree model.
Json tree_structure(const Model& model);

}  // namespace matchlike
