#include "matchlike/explainers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <Eigen/Dense>

namespace matchlike {

namespace {

void require_row(const BlackBox& box, const FeatureRow& row) {
  if (row.size() != box.encoder.features().size()) {
    throw Error(ErrorCode::DimensionMismatch, "instance has " + std::to_string(row.size()) +
                                                  " features, target expects " +
                                                  std::to_string(box.encoder.features().size()));
  }
  for (std::size_t f = 0; f < row.size(); ++f) box.encoder.features()[f].check(row[f]);
}

void require_predictive(const BlackBox& box) {
  if (!box.predict || box.classes.empty()) {
    throw Error(ErrorCode::TargetNotPredictive, "target has no predict path");
  }
}

double target_probability(const Outcome& o, std::size_t target_class) {
  if (o.rejected) throw Error(ErrorCode::RejectedByFilter, *o.rejected);
  if (target_class >= o.proba.size()) {
    throw Error(ErrorCode::TargetNotPredictive, "target class " + std::to_string(target_class) +
                                                    " outside the probability vector");
  }
  return o.proba[target_class];
}

std::string class_name(const BlackBox& box, std::size_t index) {
  return index < box.classes.size() ? box.classes[index] : std::to_string(index);
}

}  // namespace

BlackBox model_black_box(std::shared_ptr<const Model> model) {
  BlackBox box;
  box.encoder = model->encoder;
  box.classes = model->classes;
  box.predict = [model](const FeatureRow& row) {
    Outcome o;
    o.proba = predict_proba_row(*model, row);
    o.label = model->classes[static_cast<std::size_t>(
        std::max_element(o.proba.begin(), o.proba.end()) - o.proba.begin())];
    o.decision = {{"label", o.label}, {"probabilities", o.proba}, {"classes", model->classes}};
    return o;
  };
  return box;
}

Outcome outcome_from_decision(const Json& decision, const std::vector<std::string>& classes) {
  Outcome o;
  o.decision = decision;
  auto one_hot = [&](std::size_t index) {
    o.proba.assign(classes.size(), 0.0);
    if (index < classes.size()) o.proba[index] = 1.0;
  };
  if (decision.is_number()) {
    const auto index = static_cast<std::size_t>(decision.get<double>());
    one_hot(index);
    o.label = index < classes.size() ? classes[index] : std::to_string(index);
    return o;
  }
  if (!decision.is_object() || !decision.contains("label")) {
    throw Error(ErrorCode::TargetNotPredictive, "target output is not a decision");
  }
  const Json& label = decision["label"];
  std::size_t index = classes.size();
  if (label.is_string()) {
    o.label = label.get<std::string>();
    index = static_cast<std::size_t>(std::find(classes.begin(), classes.end(), o.label) - classes.begin());
  } else {
    index = static_cast<std::size_t>(label.get<double>());
    o.label = index < classes.size() ? classes[index] : std::to_string(index);
  }
  const bool overridden = decision.value("overridden", false);
  if (!overridden && decision.contains("probabilities")) {
    o.proba = decision["probabilities"].get<std::vector<double>>();
    if (decision.contains("classes") && decision["classes"].get<std::vector<std::string>>() != classes) {
      // Re-align to the expected class order.
      const auto own = decision["classes"].get<std::vector<std::string>>();
      std::vector<double> aligned(classes.size(), 0.0);
      for (std::size_t i = 0; i < own.size(); ++i) {
        auto it = std::find(classes.begin(), classes.end(), own[i]);
        if (it != classes.end()) aligned[static_cast<std::size_t>(it - classes.begin())] = o.proba[i];
      }
      o.proba = std::move(aligned);
    }
  } else {
    one_hot(index);
  }
  return o;
}

double Attribution::value(std::string_view feature) const {
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i] == feature) return values[i];
  }
  throw Error(ErrorCode::UnboundField, "no attribution for '" + std::string(feature) + "'",
              std::string(feature));
}

Json Attribution::to_json() const {
  Json vals = Json::object();
  for (std::size_t i = 0; i < features.size(); ++i) vals[features[i]] = values[i];
  return {{"values", vals},
          {"features", features},
          {"base_value", base_value},
          {"prediction", prediction},
          {"method", method},
          {"target_class", target_class}};
}

// ---------------------------------------------------------------------------
// LIME

LimeSamples lime_samples(const BlackBox& box, const FeatureRow& instance, const LimeConfig& config) {
  require_predictive(box);
  require_row(box, instance);
  if (config.n_samples < 1) throw Error(ErrorCode::TypeMismatch, "n_samples must be positive", "n_samples");
  const Encoder& enc = box.encoder;
  const auto& cols = enc.features();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  LimeSamples s;
  s.kernel_width = config.kernel_width > 0
                       ? config.kernel_width
                       : 0.75 * std::sqrt(static_cast<double>(std::max<std::size_t>(enc.width(), 1)));
  const auto origin = enc.encode(instance);
  for (int n = 0; n < config.n_samples; ++n) {
    FeatureRow row = instance;
    if (n > 0) {
      for (std::size_t f = 0; f < cols.size(); ++f) {
        if (enc.groups()[f].width == 0) continue;
        if (cols[f].is_numeric()) {
          row[f] = std::get<double>(instance[f]) + noise(rng) * enc.stds()[f];
        } else if (unit(rng) < 0.3) {
          std::uniform_int_distribution<std::size_t> pick(0, cols[f].levels.size() - 1);
          row[f] = cols[f].levels[pick(rng)];
        }
      }
    }
    auto z = enc.encode(row);
    double d2 = 0;
    for (std::size_t i = 0; i < z.size(); ++i) d2 += (z[i] - origin[i]) * (z[i] - origin[i]);
    Outcome o = box.predict(row);
    if (o.rejected) {
      s.weights.push_back(0.0);
      s.targets.push_back(0.0);
    } else {
      s.weights.push_back(std::exp(-d2 / (s.kernel_width * s.kernel_width)));
      s.targets.push_back(target_probability(o, config.target_class));
    }
    s.encoded.push_back(std::move(z));
  }
  return s;
}

Attribution explain_lime(const BlackBox& box, const FeatureRow& instance, const LimeConfig& config) {
  LimeSamples s = lime_samples(box, instance, config);
  const auto d = static_cast<Eigen::Index>(box.encoder.width());
  Eigen::MatrixXd xtwx = Eigen::MatrixXd::Zero(d + 1, d + 1);
  Eigen::VectorXd xtwy = Eigen::VectorXd::Zero(d + 1);
  double total_weight = 0;
  for (std::size_t n = 0; n < s.encoded.size(); ++n) {
    const double w = s.weights[n];
    if (w == 0) continue;
    total_weight += w;
    Eigen::VectorXd x(d + 1);
    x[0] = 1.0;
    for (Eigen::Index j = 0; j < d; ++j) x[j + 1] = s.encoded[n][static_cast<std::size_t>(j)];
    xtwx.noalias() += w * x * x.transpose();
    xtwy.noalias() += w * s.targets[n] * x;
  }
  if (total_weight == 0) {
    throw Error(ErrorCode::TargetNotPredictive, "every perturbed sample was rejected");
  }
  for (Eigen::Index j = 1; j <= d; ++j) xtwx(j, j) += 1e-3;
  Eigen::VectorXd beta = xtwx.ldlt().solve(xtwy);

  Attribution a;
  a.method = "lime";
  a.features = box.encoder.feature_names();
  for (Eigen::Index j = 0; j < d; ++j) a.values.push_back(beta[j + 1]);
  a.base_value = beta[0];
  a.prediction = s.targets[0];
  a.target_class = class_name(box, config.target_class);
  return a;
}

// ---------------------------------------------------------------------------
// SHAP

namespace {

class CoalitionValue {
 public:
  CoalitionValue(const BlackBox& box, const FeatureRow& instance,
                 const std::vector<FeatureRow>& background, std::size_t target_class)
      : box_(box), instance_(instance), background_(background), target_(target_class) {}

  double operator()(std::uint64_t mask) {
    auto it = cache_.find(mask);
    if (it != cache_.end()) return it->second;
    double sum = 0;
    for (const auto& b : background_) {
      FeatureRow row = b;
      for (std::size_t f = 0; f < row.size(); ++f) {
        if (mask >> f & 1u) row[f] = instance_[f];
      }
      sum += target_probability(box_.predict(row), target_);
    }
    const double v = sum / static_cast<double>(background_.size());
    cache_.emplace(mask, v);
    return v;
  }

 private:
  const BlackBox& box_;
  const FeatureRow& instance_;
  const std::vector<FeatureRow>& background_;
  std::size_t target_;
  std::map<std::uint64_t, double> cache_;
};

double binomial(std::size_t n, std::size_t k) {
  double r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

/// Constrained weighted least squares: phi sums to v(full) - v(empty).
std::vector<double> solve_kernel_shap(std::size_t m, const std::map<std::uint64_t, double>& weights,
                                      CoalitionValue& v) {
  const double v0 = v(0);
  const double delta = v((std::uint64_t{1} << m) - 1) - v0;
  if (m == 1) return {delta};
  const auto p = static_cast<Eigen::Index>(m - 1);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  for (const auto& [mask, w] : weights) {
    const double zm = static_cast<double>(mask >> (m - 1) & 1u);
    Eigen::VectorXd x(p);
    for (Eigen::Index j = 0; j < p; ++j) x[j] = static_cast<double>(mask >> j & 1u) - zm;
    const double y = v(mask) - v0 - zm * delta;
    a.noalias() += w * x * x.transpose();
    b.noalias() += w * y * x;
  }
  Eigen::VectorXd beta = a.completeOrthogonalDecomposition().solve(b);
  std::vector<double> phi(m);
  double rest = 0;
  for (Eigen::Index j = 0; j < p; ++j) {
    phi[static_cast<std::size_t>(j)] = beta[j];
    rest += beta[j];
  }
  phi[m - 1] = delta - rest;
  return phi;
}

}  // namespace

Attribution explain_shap(const BlackBox& box, const FeatureRow& instance, const ShapConfig& config) {
  require_predictive(box);
  require_row(box, instance);
  const std::size_t m = box.encoder.features().size();
  if (config.background.empty()) {
    throw Error(ErrorCode::EmptyDataset, "SHAP needs at least one background row");
  }
  for (const auto& b : config.background) require_row(box, b);
  if (config.exact && m > kMaxExactShapColumns) {
    throw Error(ErrorCode::TooManyFeaturesForExact,
                std::to_string(m) + " columns; exact mode supports at most " +
                    std::to_string(kMaxExactShapColumns));
  }
  if (m > 62) throw Error(ErrorCode::TooManyFeaturesForExact, "too many columns");

  CoalitionValue v(box, instance, config.background, config.target_class);
  std::map<std::uint64_t, double> weights;
  const std::uint64_t full = (std::uint64_t{1} << m) - 1;
  if (config.exact) {
    for (std::uint64_t mask = 1; mask < full; ++mask) {
      const auto s = static_cast<std::size_t>(__builtin_popcountll(mask));
      weights[mask] = static_cast<double>(m - 1) /
                      (binomial(m, s) * static_cast<double>(s) * static_cast<double>(m - s));
    }
  } else if (m > 1) {
    // Coalition sizes drawn from the Shapley kernel, members uniformly.
    std::vector<double> size_weights;
    for (std::size_t s = 1; s < m; ++s) {
      size_weights.push_back(static_cast<double>(m - 1) / (static_cast<double>(s) * static_cast<double>(m - s)));
    }
    std::mt19937_64 rng(config.seed);
    std::discrete_distribution<std::size_t> pick_size(size_weights.begin(), size_weights.end());
    std::vector<std::size_t> order(m);
    for (int n = 0; n < config.n_samples; ++n) {
      const std::size_t s = pick_size(rng) + 1;
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      std::uint64_t mask = 0;
      for (std::size_t i = 0; i < s; ++i) mask |= std::uint64_t{1} << order[i];
      weights[mask] += 1.0;
    }
  }

  Attribution a;
  a.method = "shap";
  for (const auto& c : box.encoder.features()) a.features.push_back(c.name);
  a.values = solve_kernel_shap(m, weights, v);
  a.base_value = v(0);
  a.prediction = v(full);
  a.target_class = class_name(box, config.target_class);
  return a;
}

FeatureRow mean_row(const Dataset& dataset) {
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "dataset is empty");
  const auto cols = dataset.feature_columns();
  FeatureRow out;
  for (std::size_t f = 0; f < cols.size(); ++f) {
    if (cols[f].is_numeric()) {
      double sum = 0;
      for (std::size_t r = 0; r < dataset.size(); ++r) sum += std::get<double>(dataset.features(r)[f]);
      out.emplace_back(sum / static_cast<double>(dataset.size()));
    } else {
      std::vector<std::size_t> counts(cols[f].levels.size(), 0);
      for (std::size_t r = 0; r < dataset.size(); ++r) {
        ++counts[static_cast<std::size_t>(cols[f].level_index(std::get<std::string>(dataset.features(r)[f])))];
      }
      const auto best = std::max_element(counts.begin(), counts.end()) - counts.begin();
      out.emplace_back(cols[f].levels[static_cast<std::size_t>(best)]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// What-if

namespace {

Json outcome_to_json(const Outcome& o) {
  if (o.rejected) return {{"rejected", *o.rejected}, {"events", o.events}};
  return {{"decision", o.decision}, {"events", o.events}};
}

}  // namespace

Json WhatIfResult::to_json(const Encoder& encoder) const {
  Json doc = outcome_to_json(outcome);
  doc["row"] = encoder.row_to_json(row);
  return doc;
}

WhatIfResult explain_whatif(const BlackBox& box, const FeatureRow& base, const Json& edits) {
  require_predictive(box);
  require_row(box, base);
  if (!edits.is_object()) throw Error(ErrorCode::SchemaMismatch, "edits must be an object");
  WhatIfResult r{base, {}};
  for (const auto& [name, value] : edits.items()) {
    const std::size_t f = box.encoder.feature_index(name);
    r.row[f] = box.encoder.features()[f].from_json(value);
  }
  r.outcome = box.predict(r.row);
  return r;
}

// ---------------------------------------------------------------------------
// Counterfactuals

double counterfactual_distance(const Encoder& encoder, const FeatureRow& a, const FeatureRow& b) {
  double d = 0;
  const auto& cols = encoder.features();
  for (std::size_t f = 0; f < cols.size(); ++f) {
    if (cols[f].is_numeric()) {
      if (encoder.groups()[f].width == 0) continue;
      d += std::abs(std::get<double>(a[f]) - std::get<double>(b[f])) / encoder.stds()[f];
    } else if (a[f] != b[f]) {
      d += 1.0;
    }
  }
  return d;
}

Json CounterfactualResult::to_json(const Encoder& encoder) const {
  Json list = Json::array();
  for (const auto& c : items) {
    list.push_back({{"original", encoder.row_to_json(c.original)},
                    {"modified", encoder.row_to_json(c.modified)},
                    {"changed", c.changed},
                    {"predicted_label", c.predicted_label},
                    {"distance", c.distance}});
  }
  Json doc = {{"counterfactuals", list}};
  if (!diagnostic.empty()) doc["diagnostic"] = diagnostic;
  return doc;
}

namespace {

class CounterfactualSearch {
 public:
  CounterfactualSearch(const BlackBox& box, const FeatureRow& instance, const CounterfactualConfig& config)
      : box_(box), enc_(box.encoder), instance_(instance), config_(config), rng_(config.seed) {
    auto it = std::find(box.classes.begin(), box.classes.end(), config.target_label);
    if (it == box.classes.end()) {
      throw Error(ErrorCode::UnknownLabel, "unknown target label '" + config.target_label + "'",
                  config.target_label);
    }
    target_ = static_cast<std::size_t>(it - box.classes.begin());
    const auto& cols = enc_.features();
    for (std::size_t f = 0; f < cols.size(); ++f) {
      if (!cols[f].searchable()) continue;
      if (cols[f].is_numeric() && enc_.groups()[f].width == 0) continue;
      if (!cols[f].is_numeric() && cols[f].levels.size() < 2) continue;
      searchable_.push_back(f);
    }
  }

  CounterfactualResult run() {
    CounterfactualResult result;
    if (searchable_.empty()) {
      result.diagnostic = "no searchable feature: every column is immutable or protected";
      return result;
    }
    for (std::size_t j = 0; j < config_.k; ++j) {
      std::optional<std::pair<double, FeatureRow>> best;
      for (int r = 0; r < std::max(1, config_.max_iters); ++r) {
        FeatureRow start = r == 0 ? instance_ : random_start();
        auto [loss, row] = climb(std::move(start), result.items);
        if (loss >= kInvalid) continue;
        if (is_duplicate(row, result.items)) continue;
        if (!best || loss < best->first) best.emplace(loss, std::move(row));
      }
      if (!best) break;
      // Validity is re-checked on the full target.
      Outcome o = box_.predict(best->second);
      if (o.rejected || o.label != config_.target_label) break;
      Counterfactual cf;
      cf.original = instance_;
      cf.modified = best->second;
      cf.predicted_label = o.label;
      cf.distance = counterfactual_distance(enc_, instance_, cf.modified);
      for (std::size_t f = 0; f < instance_.size(); ++f) {
        if (instance_[f] != cf.modified[f]) cf.changed.push_back(enc_.features()[f].name);
      }
      result.items.push_back(std::move(cf));
    }
    if (result.items.empty()) {
      result.diagnostic = "no counterfactual reaching '" + config_.target_label + "' found after " +
                          std::to_string(std::max(1, config_.max_iters)) + " restarts";
      if (!overriding_blocks_.empty()) {
        result.diagnostic += "; decisions were overridden by rule guard";
        for (const auto& b : overriding_blocks_) result.diagnostic += " '" + b + "'";
      }
    }
    return result;
  }

 private:
  static constexpr double kInvalid = 1e6;

  double loss(const FeatureRow& row, const std::vector<Counterfactual>& chosen) {
    Outcome o = box_.predict(row);
    for (const auto& e : o.events) {
      if (e.value("action", "") == "override" && e.contains("block")) {
        overriding_blocks_.insert(e["block"].get<std::string>());
      }
    }
    if (o.rejected) return std::numeric_limits<double>::infinity();
    if (o.label != config_.target_label) return kInvalid + (1.0 - o.proba.at(target_));
    double l = config_.proximity_weight * counterfactual_distance(enc_, instance_, row);
    if (!chosen.empty()) {
      double nearest = std::numeric_limits<double>::infinity();
      for (const auto& c : chosen) nearest = std::min(nearest, counterfactual_distance(enc_, c.modified, row));
      l -= config_.diversity_weight * nearest;
    }
    return l;
  }

  std::vector<FeatureRow> neighbours(const FeatureRow& row, double step) const {
    std::vector<FeatureRow> out;
    const auto& cols = enc_.features();
    for (std::size_t f : searchable_) {
      if (cols[f].is_numeric()) {
        for (double sign : {1.0, -1.0}) {
          FeatureRow n = row;
          n[f] = std::get<double>(row[f]) + sign * step * enc_.stds()[f];
          // Landing back on the original value restores it exactly.
          if (std::abs(std::get<double>(n[f]) - std::get<double>(instance_[f])) < 1e-9 * enc_.stds()[f]) {
            n[f] = instance_[f];
          }
          out.push_back(std::move(n));
        }
      } else {
        for (const auto& level : cols[f].levels) {
          if (Cell(level) == row[f]) continue;
          FeatureRow n = row;
          n[f] = level;
          out.push_back(std::move(n));
        }
      }
    }
    return out;
  }

  std::pair<double, FeatureRow> climb(FeatureRow row, const std::vector<Counterfactual>& chosen) {
    double current = loss(row, chosen);
    for (double step : kCounterfactualSteps) {
      for (int moves = 0; moves < 200; ++moves) {
        double best = current;
        std::optional<FeatureRow> next;
        for (auto& n : neighbours(row, step)) {
          const double l = loss(n, chosen);
          if (l < best - 1e-12) {
            best = l;
            next = std::move(n);
          }
        }
        if (!next) break;
        row = std::move(*next);
        current = best;
      }
    }
    return {current, std::move(row)};
  }

  FeatureRow random_start() {
    FeatureRow row = instance_;
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto& cols = enc_.features();
    for (std::size_t f : searchable_) {
      if (cols[f].is_numeric()) {
        row[f] = std::get<double>(instance_[f]) + 2.0 * noise(rng_) * enc_.stds()[f];
      } else if (unit(rng_) < 0.5) {
        std::uniform_int_distribution<std::size_t> pick(0, cols[f].levels.size() - 1);
        row[f] = cols[f].levels[pick(rng_)];
      }
    }
    return row;
  }

  bool is_duplicate(const FeatureRow& row, const std::vector<Counterfactual>& chosen) const {
    return std::any_of(chosen.begin(), chosen.end(), [&](const Counterfactual& c) {
      return counterfactual_distance(enc_, c.modified, row) < 1e-9;
    });
  }

  const BlackBox& box_;
  const Encoder& enc_;
  const FeatureRow& instance_;
  const CounterfactualConfig& config_;
  std::mt19937_64 rng_;
  std::size_t target_ = 0;
  std::vector<std::size_t> searchable_;
  std::set<std::string> overriding_blocks_;
};

}  // namespace

CounterfactualResult explain_counterfactual(const BlackBox& box, const FeatureRow& instance,
                                            const CounterfactualConfig& config) {
  require_predictive(box);
  require_row(box, instance);
  return CounterfactualSearch(box, instance, config).run();
}

// ---------------------------------------------------------------------------
// MMD-critic

double rbf(const std::vector<double>& a, const std::vector<double>& b, double bandwidth) {
  double d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-d2 / (2 * bandwidth * bandwidth));
}

Json PrototypeSet::to_json() const {
  return {{"prototypes", prototypes}, {"criticisms", criticisms}, {"kernel_bandwidth", bandwidth}};
}

PrototypeSet mmd_critic(const std::vector<std::vector<double>>& points, std::size_t k_prototypes,
                        std::size_t k_criticisms, double bandwidth) {
  const std::size_t n = points.size();
  if (k_prototypes + k_criticisms > n) {
    throw Error(ErrorCode::KTooLarge, "k_prototypes + k_criticisms = " +
                                          std::to_string(k_prototypes + k_criticisms) +
                                          " exceeds " + std::to_string(n) + " rows");
  }
  if (!(bandwidth > 0)) throw Error(ErrorCode::TypeMismatch, "bandwidth must be positive", "bandwidth");
  Eigen::MatrixXd k(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      k(i, j) = k(j, i) = rbf(points[i], points[j], bandwidth);
    }
  }
  const Eigen::VectorXd colsum = k.colwise().sum().transpose();
  const double nd = static_cast<double>(n);

  PrototypeSet out;
  out.bandwidth = bandwidth;
  std::vector<bool> taken(n, false);
  double sum_data = 0;  // sum over data and selected prototypes
  double sum_self = 0;  // sum over selected pairs
  for (std::size_t step = 0; step < k_prototypes; ++step) {
    const double s = static_cast<double>(step + 1);
    std::size_t best = n;
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (taken[j]) continue;
      double cross = 0;
      for (std::size_t p : out.prototypes) cross += k(j, p);
      const double value = 2.0 / (nd * s) * (sum_data + colsum[j]) -
                           (sum_self + 2 * cross + k(j, j)) / (s * s);
      if (value > best_value + 1e-12) {
        best_value = value;
        best = j;
      }
    }
    double cross = 0;
    for (std::size_t p : out.prototypes) cross += k(best, p);
    sum_data += colsum[best];
    sum_self += 2 * cross + k(best, best);
    taken[best] = true;
    out.prototypes.push_back(best);
  }

  // Witness: mean kernel to the data minus mean kernel to the prototypes.
  std::vector<double> witness(n);
  for (std::size_t i = 0; i < n; ++i) {
    double proto = 0;
    for (std::size_t p : out.prototypes) proto += k(i, p);
    witness[i] = colsum[i] / nd - (out.prototypes.empty() ? 0.0 : proto / static_cast<double>(out.prototypes.size()));
  }
  double witness_sum = 0;
  for (std::size_t step = 0; step < k_criticisms; ++step) {
    std::size_t best = n;
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (taken[j]) continue;
      std::vector<std::size_t> c = out.criticisms;
      c.push_back(j);
      Eigen::MatrixXd kc(c.size(), c.size());
      for (std::size_t a = 0; a < c.size(); ++a) {
        for (std::size_t b = 0; b < c.size(); ++b) kc(a, b) = k(c[a], c[b]);
      }
      const double det = kc.determinant();
      const double reg = det > 0 ? std::log(det) : -std::numeric_limits<double>::infinity();
      const double value = witness_sum + std::abs(witness[j]) + reg;
      if (value > best_value + 1e-12) {
        best_value = value;
        best = j;
      }
    }
    if (best == n) {
      // Only degenerate candidates remain; fall back to the lowest free index.
      best = static_cast<std::size_t>(std::find(taken.begin(), taken.end(), false) - taken.begin());
    }
    witness_sum += std::abs(witness[best]);
    taken[best] = true;
    out.criticisms.push_back(best);
  }
  return out;
}

PrototypeSet explain_prototypes(const Dataset& dataset, const PrototypeConfig& config) {
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "dataset is empty");
  const Encoder enc = Encoder::fit(dataset);
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    if (config.label && dataset.classes()[dataset.label(r)] != *config.label) continue;
    rows.push_back(r);
  }
  if (config.label && std::find(dataset.classes().begin(), dataset.classes().end(), *config.label) ==
                          dataset.classes().end()) {
    throw Error(ErrorCode::UnknownLabel, "unknown label '" + *config.label + "'", *config.label);
  }
  std::vector<std::vector<double>> points;
  for (std::size_t r : rows) points.push_back(enc.encode(dataset.features(r)));
  double bandwidth = config.bandwidth;
  if (!(bandwidth > 0)) {
    std::vector<double> dists;
    for (std::size_t i = 0; i < points.size(); ++i) {
      for (std::size_t j = i + 1; j < points.size(); ++j) {
        double d2 = 0;
        for (std::size_t t = 0; t < points[i].size(); ++t) d2 += std::pow(points[i][t] - points[j][t], 2);
        dists.push_back(std::sqrt(d2));
      }
    }
    bandwidth = 1.0;
    if (!dists.empty()) {
      std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2), dists.end());
      if (dists[dists.size() / 2] > 0) bandwidth = dists[dists.size() / 2];
    }
  }
  PrototypeSet local = mmd_critic(points, config.k_prototypes, config.k_criticisms, bandwidth);
  for (auto& i : local.prototypes) i = rows[i];
  for (auto& i : local.criticisms) i = rows[i];
  return local;
}

// ---------------------------------------------------------------------------
// Similar examples

std::vector<ExampleEntry> explain_examples(const Dataset& dataset, const Model& model,
                                           const FeatureRow& instance, std::size_t k) {
  if (k > dataset.size()) {
    throw Error(ErrorCode::KTooLarge, "k = " + std::to_string(k) + " exceeds " +
                                          std::to_string(dataset.size()) + " rows");
  }
  const auto target = representation(model, model.encoder.encode(instance));
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    const auto rep = representation(model, model.encoder.encode(dataset.features(r)));
    double d2 = 0;
    for (std::size_t i = 0; i < rep.size(); ++i) d2 += (rep[i] - target[i]) * (rep[i] - target[i]);
    ranked.emplace_back(std::sqrt(d2), r);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<ExampleEntry> out;
  for (std::size_t i = 0; i < k; ++i) {
    const auto [d, r] = ranked[i];
    const auto row = dataset.features(r);
    const auto proba = predict_proba_row(model, row);
    const auto best = static_cast<std::size_t>(std::max_element(proba.begin(), proba.end()) - proba.begin());
    out.push_back({r, 1.0 / (1.0 + d), model.classes[best], proba[best], model.encoder.row_to_json(row)});
  }
  return out;
}

Json examples_to_json(const std::vector<ExampleEntry>& entries) {
  Json out = Json::array();
  for (const auto& e : entries) {
    out.push_back({{"row", e.row},
                   {"similarity", e.similarity},
                   {"predicted_label", e.label},
                   {"probability", e.probability},
                   {"features", e.features}});
  }
  return out;
}

}  // namespace matchlike
