#include "matchlike/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "matchlike/error.hpp"

namespace matchlike {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Logistic: return "logistic";
    case ModelKind::Tree: return "tree";
    case ModelKind::Mlp: return "mlp";
  }
  return "logistic";
}

ModelKind model_kind_from_string(std::string_view name) {
  if (name == "logistic") return ModelKind::Logistic;
  if (name == "tree") return ModelKind::Tree;
  if (name == "mlp") return ModelKind::Mlp;
  throw Error(ErrorCode::InvalidConfig, "unknown model kind '" + std::string(name) + "'",
              std::string(name));
}

Json TrainingConfig::to_json() const {
  return {{"seed", seed},         {"learning_rate", learning_rate},
          {"epochs", epochs},     {"hidden", hidden},
          {"max_depth", max_depth}, {"min_samples_split", min_samples_split}};
}

TrainingConfig TrainingConfig::from_json(const Json& doc) {
  TrainingConfig c;
  if (!doc.is_object()) return c;
  c.seed = doc.value("seed", c.seed);
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  c.epochs = doc.value("epochs", c.epochs);
  c.hidden = doc.value("hidden", c.hidden);
  c.max_depth = doc.value("max_depth", c.max_depth);
  c.min_samples_split = doc.value("min_samples_split", c.min_samples_split);
  return c;
}

TrainingSet make_training_set(const Dataset& dataset, const Encoder& encoder) {
  TrainingSet data;
  data.rows.reserve(dataset.size());
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    data.rows.push_back(encoder.encode(dataset.features(r)));
    data.labels.push_back(dataset.label(r));
  }
  return data;
}

namespace {

Eigen::VectorXd as_vector(std::span<const double> row) {
  return Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<Eigen::Index>(row.size()));
}

std::vector<double> softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  std::vector<double> p(static_cast<std::size_t>(logits.size()));
  double sum = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(logits[i] - mx);
    sum += p[static_cast<std::size_t>(i)];
  }
  for (auto& v : p) v /= sum;
  return p;
}

void check_width(const Model& model, std::size_t width) {
  if (width != model.n_features) {
    throw Error(ErrorCode::DimensionMismatch, "row has " + std::to_string(width) +
                                                  " encoded features, model expects " +
                                                  std::to_string(model.n_features));
  }
}

// ---------------------------------------------------------------------------
// CART

double gini(const std::vector<double>& counts, double total) {
  if (total <= 0) return 0;
  double g = 1.0;
  for (double c : counts) g -= (c / total) * (c / total);
  return g;
}

struct TreeBuilder {
  const TrainingSet& data;
  std::size_t n_classes;
  const TrainingConfig& config;
  std::vector<TreeNode> nodes;

  std::vector<double> counts_of(const std::vector<std::size_t>& idx) const {
    std::vector<double> c(n_classes, 0.0);
    for (auto i : idx) c[data.labels[i]] += 1.0;
    return c;
  }

  int build(const std::vector<std::size_t>& idx, int depth) {
    const int id = static_cast<int>(nodes.size());
    nodes.push_back(TreeNode{-1, 0, -1, -1, counts_of(idx)});
    const auto counts = nodes[static_cast<std::size_t>(id)].counts;
    const double total = static_cast<double>(idx.size());
    const bool pure = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }) <= 1;
    if (pure || depth >= config.max_depth ||
        static_cast<int>(idx.size()) < std::max(2, config.min_samples_split)) {
      return id;
    }

    const double parent = gini(counts, total);
    const std::size_t width = data.rows.front().size();
    int best_feature = -1;
    double best_threshold = 0;
    double best_impurity = parent + 1e-9;  // allow zero-gain splits (XOR)
    std::vector<std::pair<double, std::size_t>> sorted;
    for (std::size_t f = 0; f < width; ++f) {
      sorted.clear();
      for (auto i : idx) sorted.emplace_back(data.rows[i][f], data.labels[i]);
      std::sort(sorted.begin(), sorted.end());
      std::vector<double> left(n_classes, 0.0);
      std::vector<double> right = counts;
      for (std::size_t k = 0; k + 1 < sorted.size(); ++k) {
        left[sorted[k].second] += 1;
        right[sorted[k].second] -= 1;
        if (sorted[k].first == sorted[k + 1].first) continue;
        const double nl = static_cast<double>(k + 1);
        const double nr = total - nl;
        const double impurity = (nl * gini(left, nl) + nr * gini(right, nr)) / total;
        // strictly better only: earlier feature / lower threshold wins ties
        if (impurity < best_impurity - 1e-12) {
          best_impurity = impurity;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (sorted[k].first + sorted[k + 1].first);
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> li;
    std::vector<std::size_t> ri;
    for (auto i : idx) {
      (data.rows[i][static_cast<std::size_t>(best_feature)] <= best_threshold ? li : ri).push_back(i);
    }
    const int l = build(li, depth + 1);
    const int r = build(ri, depth + 1);
    auto& node = nodes[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return id;
  }
};

const TreeNode& tree_leaf(const TreeParams& tree, std::span<const double> x) {
  const TreeNode* node = &tree.nodes.front();
  while (node->feature >= 0) {
    node = &tree.nodes[static_cast<std::size_t>(
        x[static_cast<std::size_t>(node->feature)] <= node->threshold ? node->left : node->right)];
  }
  return *node;
}

Eigen::VectorXd mlp_hidden(const MlpParams& p, const Eigen::VectorXd& x) {
  return (p.w1 * x + p.b1).array().tanh().matrix();
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& doc, Eigen::Index cols_if_empty = 0) {
  const auto rows = static_cast<Eigen::Index>(doc.size());
  const auto cols = rows == 0 ? cols_if_empty : static_cast<Eigen::Index>(doc[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = doc[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const Json& doc) {
  auto v = doc.get<std::vector<double>>();
  return as_vector(v);
}

}  // namespace

// ---------------------------------------------------------------------------
// Training and prediction

Model train(ModelKind kind, const Dataset& dataset, const TrainingConfig& config) {
  Encoder encoder = Encoder::fit(dataset);
  TrainingSet data = make_training_set(dataset, encoder);
  return train_encoded(kind, data, dataset.classes(), std::move(encoder), config);
}

Model train_encoded(ModelKind kind, const TrainingSet& data, std::vector<std::string> classes,
                    Encoder encoder, const TrainingConfig& config) {
  if (data.rows.empty()) throw Error(ErrorCode::EmptyDataset, "cannot train on an empty dataset");
  std::set<std::size_t> distinct(data.labels.begin(), data.labels.end());
  if (distinct.size() < 2) {
    throw Error(ErrorCode::SingleClassDataset, "training data contains a single class");
  }
  Model model;
  model.kind = kind;
  model.classes = std::move(classes);
  model.encoder = std::move(encoder);
  model.n_features = data.rows.front().size();
  const auto n_in = static_cast<Eigen::Index>(model.n_features);
  const auto n_out = static_cast<Eigen::Index>(model.classes.size());

  switch (kind) {
    case ModelKind::Tree: {
      TreeBuilder builder{data, model.classes.size(), config, {}};
      std::vector<std::size_t> idx(data.rows.size());
      std::iota(idx.begin(), idx.end(), 0);
      builder.build(idx, 0);
      model.params = TreeParams{std::move(builder.nodes)};
      return model;
    }
    case ModelKind::Logistic:
      model.params = LogisticParams{Eigen::MatrixXd::Zero(n_out, n_in), Eigen::VectorXd::Zero(n_out)};
      break;
    case ModelKind::Mlp: {
      std::mt19937_64 rng(config.seed);
      const auto hidden = static_cast<Eigen::Index>(config.hidden);
      std::normal_distribution<double> in_dist(0.0, 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(n_in, 1))));
      std::normal_distribution<double> out_dist(0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
      MlpParams p{Eigen::MatrixXd(hidden, n_in), Eigen::VectorXd::Zero(hidden),
                  Eigen::MatrixXd(n_out, hidden), Eigen::VectorXd::Zero(n_out)};
      for (Eigen::Index r = 0; r < hidden; ++r) {
        for (Eigen::Index c = 0; c < n_in; ++c) p.w1(r, c) = in_dist(rng);
      }
      for (Eigen::Index r = 0; r < n_out; ++r) {
        for (Eigen::Index c = 0; c < hidden; ++c) p.w2(r, c) = out_dist(rng);
      }
      model.params = std::move(p);
      break;
    }
  }

  std::vector<double> theta = flat_parameters(model);
  std::vector<double> grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    loss_and_gradient(model, data, &grad);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= config.learning_rate * grad[i];
    set_flat_parameters(model, theta);
  }
  return model;
}

std::vector<double> predict_proba(const Model& model, std::span<const double> x) {
  check_width(model, x.size());
  if (!model.overrides.empty()) {
    auto it = model.overrides.find(std::vector<double>(x.begin(), x.end()));
    if (it != model.overrides.end()) {
      std::vector<double> p(model.classes.size(), 0.0);
      p[it->second] = 1.0;
      return p;
    }
  }
  switch (model.kind) {
    case ModelKind::Logistic: {
      const auto& p = std::get<LogisticParams>(model.params);
      return softmax(p.weights * as_vector(x) + p.bias);
    }
    case ModelKind::Tree: {
      const auto& leaf = tree_leaf(std::get<TreeParams>(model.params), x);
      const double total = std::accumulate(leaf.counts.begin(), leaf.counts.end(), 0.0);
      std::vector<double> p(leaf.counts.size());
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = leaf.counts[i] / total;
      return p;
    }
    case ModelKind::Mlp: {
      const auto& p = std::get<MlpParams>(model.params);
      return softmax(p.w2 * mlp_hidden(p, as_vector(x)) + p.b2);
    }
  }
  return {};
}

std::vector<double> predict_proba_row(const Model& model, const FeatureRow& row) {
  auto x = model.encoder.encode(row);
  return predict_proba(model, x);
}

std::size_t predict_class(const Model& model, std::span<const double> x) {
  auto p = predict_proba(model, x);
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

std::vector<double> representation(const Model& model, std::span<const double> x) {
  check_width(model, x.size());
  if (model.kind == ModelKind::Mlp) {
    Eigen::VectorXd h = mlp_hidden(std::get<MlpParams>(model.params), as_vector(x));
    return {h.data(), h.data() + h.size()};
  }
  return {x.begin(), x.end()};
}

// ---------------------------------------------------------------------------
// Flat parameters and gradients

std::vector<double> flat_parameters(const Model& model) {
  std::vector<double> out;
  auto append = [&out](const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    }
  };
  if (const auto* p = std::get_if<LogisticParams>(&model.params)) {
    append(p->weights);
    append(p->bias);
  } else if (const auto* p = std::get_if<MlpParams>(&model.params)) {
    append(p->w1);
    append(p->b1);
    append(p->w2);
    append(p->b2);
  } else {
    throw Error(ErrorCode::InvalidConfig, "tree models have no flat parameter vector");
  }
  return out;
}

void set_flat_parameters(Model& model, std::span<const double> values) {
  std::size_t pos = 0;
  auto fill = [&](auto& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = values[pos++];
    }
  };
  if (auto* p = std::get_if<LogisticParams>(&model.params)) {
    if (values.size() != static_cast<std::size_t>(p->weights.size() + p->bias.size())) {
      throw Error(ErrorCode::DimensionMismatch, "flat parameter length mismatch");
    }
    fill(p->weights);
    fill(p->bias);
  } else if (auto* p = std::get_if<MlpParams>(&model.params)) {
    if (values.size() != static_cast<std::size_t>(p->w1.size() + p->b1.size() + p->w2.size() + p->b2.size())) {
      throw Error(ErrorCode::DimensionMismatch, "flat parameter length mismatch");
    }
    fill(p->w1);
    fill(p->b1);
    fill(p->w2);
    fill(p->b2);
  } else {
    throw Error(ErrorCode::InvalidConfig, "tree models have no flat parameter vector");
  }
}

double loss_and_gradient(const Model& model, const TrainingSet& data, std::vector<double>* gradient,
                         bool output_layer_only) {
  const double n = static_cast<double>(data.rows.size());
  const auto k = static_cast<Eigen::Index>(model.classes.size());
  double loss = 0;

  auto write = [&](std::initializer_list<const Eigen::MatrixXd*> parts) {
    gradient->clear();
    for (const auto* m : parts) {
      for (Eigen::Index r = 0; r < m->rows(); ++r) {
        for (Eigen::Index c = 0; c < m->cols(); ++c) gradient->push_back((*m)(r, c));
      }
    }
  };

  if (const auto* p = std::get_if<LogisticParams>(&model.params)) {
    Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(p->weights.rows(), p->weights.cols());
    Eigen::MatrixXd gb = Eigen::MatrixXd::Zero(k, 1);
    for (std::size_t i = 0; i < data.rows.size(); ++i) {
      check_width(model, data.rows[i].size());
      Eigen::VectorXd x = as_vector(data.rows[i]);
      auto prob = softmax(p->weights * x + p->bias);
      loss -= std::log(std::max(prob[data.labels[i]], 1e-300));
      Eigen::VectorXd delta = as_vector(prob);
      delta[static_cast<Eigen::Index>(data.labels[i])] -= 1.0;
      gw += delta * x.transpose();
      gb += delta;
    }
    if (gradient) {
      gw /= n;
      gb /= n;
      write({&gw, &gb});
    }
    return loss / n;
  }
  if (const auto* p = std::get_if<MlpParams>(&model.params)) {
    Eigen::MatrixXd g1 = Eigen::MatrixXd::Zero(p->w1.rows(), p->w1.cols());
    Eigen::MatrixXd gb1 = Eigen::MatrixXd::Zero(p->b1.size(), 1);
    Eigen::MatrixXd g2 = Eigen::MatrixXd::Zero(p->w2.rows(), p->w2.cols());
    Eigen::MatrixXd gb2 = Eigen::MatrixXd::Zero(k, 1);
    for (std::size_t i = 0; i < data.rows.size(); ++i) {
      check_width(model, data.rows[i].size());
      Eigen::VectorXd x = as_vector(data.rows[i]);
      Eigen::VectorXd h = mlp_hidden(*p, x);
      auto prob = softmax(p->w2 * h + p->b2);
      loss -= std::log(std::max(prob[data.labels[i]], 1e-300));
      Eigen::VectorXd delta = as_vector(prob);
      delta[static_cast<Eigen::Index>(data.labels[i])] -= 1.0;
      g2 += delta * h.transpose();
      gb2 += delta;
      if (!output_layer_only) {
        Eigen::VectorXd dh = (p->w2.transpose() * delta).array() * (1.0 - h.array().square());
        g1 += dh * x.transpose();
        gb1 += dh;
      }
    }
    if (gradient) {
      g1 /= n;
      gb1 /= n;
      g2 /= n;
      gb2 /= n;
      write({&g1, &gb1, &g2, &gb2});
    }
    return loss / n;
  }
  throw Error(ErrorCode::InvalidConfig, "tree models are not trained by gradient descent");
}

// ---------------------------------------------------------------------------
// Serialization

Json tree_structure(const Model& model) {
  const auto* tree = std::get_if<TreeParams>(&model.params);
  if (!tree) throw Error(ErrorCode::InvalidConfig, "model is not a tree");
  const auto& names = model.encoder.feature_names();
  Json nodes = Json::array();
  for (std::size_t i = 0; i < tree->nodes.size(); ++i) {
    const auto& n = tree->nodes[i];
    Json doc = {{"id", i}, {"counts", n.counts}};
    if (n.feature >= 0) {
      const auto f = static_cast<std::size_t>(n.feature);
      doc["feature"] = f < names.size() ? names[f] : std::to_string(f);
      doc["threshold"] = n.threshold;
      doc["left"] = n.left;
      doc["right"] = n.right;
    }
    nodes.push_back(std::move(doc));
  }
  return {{"classes", model.classes}, {"nodes", std::move(nodes)}};
}

Json Model::to_json() const {
  Json doc = {{"version", 1},
              {"kind", to_string(kind)},
              {"classes", classes},
              {"n_features", n_features},
              {"encoder", encoder.to_json()}};
  if (const auto* p = std::get_if<LogisticParams>(&params)) {
    doc["params"] = {{"weights", matrix_to_json(p->weights)}, {"bias", vector_to_json(p->bias)}};
  } else if (const auto* p = std::get_if<TreeParams>(&params)) {
    Json nodes = Json::array();
    for (const auto& n : p->nodes) {
      nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left},
                       {"right", n.right}, {"counts", n.counts}});
    }
    doc["params"] = {{"nodes", std::move(nodes)}};
  } else {
    const auto& m = std::get<MlpParams>(params);
    doc["params"] = {{"w1", matrix_to_json(m.w1)}, {"b1", vector_to_json(m.b1)},
                     {"w2", matrix_to_json(m.w2)}, {"b2", vector_to_json(m.b2)}};
  }
  Json ov = Json::array();
  for (const auto& [row, cls] : overrides) ov.push_back({{"row", row}, {"class", cls}});
  doc["overrides"] = std::move(ov);
  return doc;
}

Model Model::from_json(const Json& doc) {
  if (doc.value("version", 0) != 1) {
    throw Error(ErrorCode::InvalidConfig, "unsupported model document version");
  }
  Model m;
  m.kind = model_kind_from_string(doc.at("kind").get<std::string>());
  m.classes = doc.at("classes").get<std::vector<std::string>>();
  m.n_features = doc.at("n_features").get<std::size_t>();
  m.encoder = Encoder::from_json(doc.at("encoder"));
  const auto& p = doc.at("params");
  const auto n_in = static_cast<Eigen::Index>(m.n_features);
  switch (m.kind) {
    case ModelKind::Logistic:
      m.params = LogisticParams{matrix_from_json(p.at("weights"), n_in), vector_from_json(p.at("bias"))};
      break;
    case ModelKind::Tree: {
      TreeParams t;
      for (const auto& n : p.at("nodes")) {
        t.nodes.push_back({n.at("feature").get<int>(), n.at("threshold").get<double>(),
                           n.at("left").get<int>(), n.at("right").get<int>(),
                           n.at("counts").get<std::vector<double>>()});
      }
      m.params = std::move(t);
      break;
    }
    case ModelKind::Mlp:
      m.params = MlpParams{matrix_from_json(p.at("w1"), n_in), vector_from_json(p.at("b1")),
                           matrix_from_json(p.at("w2")), vector_from_json(p.at("b2"))};
      break;
  }
  for (const auto& o : doc.value("overrides", Json::array())) {
    m.overrides.emplace(o.at("row").get<std::vector<double>>(), o.at("class").get<std::size_t>());
  }
  return m;
}

bool operator==(const Model& a, const Model& b) {
  if (a.kind != b.kind || a.classes != b.classes || a.overrides != b.overrides ||
      a.n_features != b.n_features) {
    return false;
  }
  if (a.kind == ModelKind::Tree) return a.to_json()["params"] == b.to_json()["params"];
  return flat_parameters(a) == flat_parameters(b);
}

}  // namespace matchlike
