// Acceptance checks: one PASS/FAIL line per primary criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "matchlike/agent.hpp"
#include "matchlike/config.hpp"
#include "matchlike/control.hpp"
#include "matchlike/explainers.hpp"
#include "matchlike/models.hpp"
#include "matchlike/rules.hpp"
#include "rule_gen.hpp"
#include "service_fixtures.hpp"
#include "test_blocks.hpp"

namespace matchlike {
namespace {

// Tolerances.
constexpr double kShapExactTol = 1e-9;
constexpr double kShapEfficiencyTol = 1e-6;
constexpr double kShapSampledTol = 0.05;
constexpr double kLimeDominance = 5.0;
constexpr double kLimeConstantTol = 1e-6;
constexpr double kGradientRelTol = 1e-4;

struct Verdict {
  bool pass = true;
  std::string detail;
  std::vector<std::string> failures;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (failures.size() < 5) failures.push_back(what);
    }
  }
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream out;
  out.precision(precision);
  out << v;
  return out.str();
}

// ---------------------------------------------------------------------------
// Shared helpers

using testing::build_fixture;
using testing::build_named;
using testing::constant_predict;
using testing::counting_update;
using testing::fixture_config;

std::vector<std::string> ids_of(const RunnableNode& node) {
  std::vector<std::string> out;
  for (const auto& b : node.flatten()) out.push_back(b->id());
  return out;
}

// Random tree over `pool`, every block used once.
RunnableNode random_tree(std::vector<BlockHandle> pool, std::mt19937_64& rng, int depth) {
  auto uniform = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  auto term = [&]() -> RunnableNode {
    if (depth > 0 && pool.size() >= 2 && uniform(0, 2) == 0) {
      const std::size_t n = std::min<std::size_t>(pool.size(), uniform(2, 3));
      const std::size_t take = uniform(n, pool.size());
      std::vector<std::vector<BlockHandle>> parts(n);
      for (std::size_t i = 0; i < take; ++i) {
        parts[i < n ? i : uniform(0, n - 1)].push_back(pool.back());
        pool.pop_back();
      }
      std::vector<RunnableNode> branches;
      for (auto& part : parts) branches.push_back(random_tree(std::move(part), rng, depth - 1));
      return compose_parallel(std::move(branches));
    }
    BlockHandle b = pool.back();
    pool.pop_back();
    return b;
  };
  RunnableNode node = term();
  while (!pool.empty()) {
    RunnableNode next = term();
    node = compose_sequential(std::move(node), std::move(next));
  }
  return node;
}

// Leaf ids of a serialized structure, walked independently of flatten().
void structure_leaves(const Json& doc, std::vector<std::string>& out) {
  if (doc["kind"] == "block") {
    out.push_back(doc["id"]);
    return;
  }
  for (const auto& c : doc.contains("children") ? doc["children"] : doc["branches"]) structure_leaves(c, out);
}

// ---------------------------------------------------------------------------

Verdict composition() {
  Verdict v;
  std::mt19937_64 rng(101);
  int trees = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Registry reg;
    const std::size_t n = 3 + rng() % 13;
    std::vector<BlockHandle> blocks;
    for (std::size_t i = 0; i < n; ++i) {
      blocks.push_back(reg.register_block("b" + std::to_string(i), "t", {constant_predict(static_cast<double>(i))}));
    }
    std::shuffle(blocks.begin(), blocks.end(), rng);
    // Three disjoint subtrees.
    const std::size_t c1 = 1 + rng() % (n - 2);
    const std::size_t c2 = c1 + 1 + rng() % (n - c1 - 1);
    std::vector<BlockHandle> p1(blocks.begin(), blocks.begin() + c1), p2(blocks.begin() + c1, blocks.begin() + c2),
        p3(blocks.begin() + c2, blocks.end());
    RunnableNode x = random_tree(p1, rng, 2), y = random_tree(p2, rng, 2), z = random_tree(p3, rng, 2);
    auto concat = ids_of(x);
    for (const auto& part : {ids_of(y), ids_of(z)}) concat.insert(concat.end(), part.begin(), part.end());
    v.check(ids_of((x | y) | z) == concat && ids_of(x | (y | z)) == concat, "associativity trial " + std::to_string(trial));

    // Parallel output order follows declaration order.
    std::vector<RunnableNode> leaves(blocks.begin(), blocks.begin() + std::min<std::size_t>(n, 6));
    CallContext ctx;
    const auto out = run_predict(compose_parallel(leaves), TypedValue::scalar(0), ctx).payload;
    Json expected = Json::array();
    for (const auto& b : leaves) expected.push_back(std::stod(b.block()->id().substr(1)));
    v.check(out == expected, "parallel order trial " + std::to_string(trial));

    // Serialization is byte-identical across calls and across a rebuilt tree.
    const RunnableNode tree = random_tree(blocks, rng, 3);
    const std::string text = dump_decimal(serialize_structure(tree));
    std::map<std::string, BlockHandle, std::less<>> by_id;
    Registry reg2;
    for (const auto& b : blocks) by_id[b->id()] = reg2.register_block(b->id(), "t", {constant_predict(std::stod(b->id().substr(1)))});
    const RunnableNode rebuilt = parse_chain_expression(format_chain_expression(tree), by_id);
    v.check(dump_decimal(serialize_structure(tree)) == text && dump_decimal(serialize_structure(rebuilt)) == text,
            "serialization trial " + std::to_string(trial));
    std::vector<std::string> leaves_seen;
    structure_leaves(serialize_structure(tree), leaves_seen);
    v.check(leaves_seen == ids_of(tree), "flatten order trial " + std::to_string(trial));
    ++trees;
  }
  v.detail = std::to_string(trees) + " fuzzed trees";
  return v;
}

// ---------------------------------------------------------------------------

Verdict propagation() {
  Verdict v;
  std::mt19937_64 rng(202);
  for (int trial = 0; trial < 100; ++trial) {
    Registry reg;
    const std::size_t n = 3 + rng() % 10;
    std::vector<BlockHandle> blocks;
    std::map<std::string, std::shared_ptr<std::atomic<int>>> counters;
    std::set<std::string> has_update;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string id = "b" + std::to_string(i);
      std::vector<Method> methods = {testing::read_method("get")};
      if (rng() % 2) {
        counters[id] = std::make_shared<std::atomic<int>>(0);
        methods.push_back(counting_update("refresh", counters[id]));
        has_update.insert(id);
      }
      blocks.push_back(reg.register_block(id, "t", std::move(methods)));
    }
    std::shuffle(blocks.begin(), blocks.end(), rng);
    const RunnableNode tree = random_tree(blocks, rng, 2);
    std::vector<std::string> order;
    structure_leaves(serialize_structure(tree), order);
    const std::string origin = order[rng() % order.size()];
    std::vector<std::pair<std::string, std::string>> oracle;
    bool after = false;
    for (const auto& id : order) {
      if (after && has_update.count(id)) oracle.emplace_back(id, "refresh");
      after |= id == origin;
    }
    const auto report = propagate_update(tree, origin);
    v.check(report.visited == oracle, "visited set, trial " + std::to_string(trial));
    for (const auto& [id, c] : counters) {
      const bool expected = std::count(oracle.begin(), oracle.end(), std::make_pair(id, std::string("refresh"))) > 0;
      v.check(c->load() == (expected ? 1 : 0), "invocation count " + id);
    }
  }

  auto built = build_named("threshold_config.json");
  const Service& s = *built->service;
  const Json probe = {{"input", {{"income", 9000}}}};
  const Json before = s.handle_json("POST", "/chain/predict", probe).body["value"]["label"];
  const Json rows = s.handle_json("GET", "/blocks/dataset/get_rows", Json::object()).body["value"];
  Json edits = Json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    edits.push_back({{"row", i}, {"values", {{"loan_status", rows[i]["loan_status"] == "approve" ? "deny" : "approve"}}}});
  }
  const auto put = s.handle_json("PUT", "/blocks/dataset/edit_batch", {{"edits", edits}});
  const Json after = s.handle_json("POST", "/chain/predict", probe).body["value"]["label"];
  v.check(put.status == 200 && before == "approve" && after == "deny", "label flip probe");
  v.detail = "100 fuzzed chains; probe " + before.get<std::string>() + " -> " + after.get<std::string>();
  return v;
}

// ---------------------------------------------------------------------------

Dataset random_numeric_dataset(std::size_t columns, std::uint64_t seed, std::size_t rows = 60) {
  std::vector<ColumnSchema> schema;
  for (std::size_t c = 0; c < columns; ++c) schema.push_back(ColumnSchema::numeric("f" + std::to_string(c)));
  schema.push_back(ColumnSchema::categorical("y", {"no", "yes"}));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  std::vector<std::vector<Cell>> data;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<Cell> row;
    double s = 0;
    for (std::size_t c = 0; c < columns; ++c) {
      const double x = n(rng);
      s += (c % 2 ? -1.0 : 1.0) * x * x + x;
      row.emplace_back(x);
    }
    row.emplace_back(std::string(s > 0.5 || r == 0 ? "yes" : "no"));
    if (r == 1) row.back() = std::string("no");
    data.push_back(std::move(row));
  }
  return Dataset(schema, "y", data);
}

double coalition_value(const BlackBox& box, const FeatureRow& x, const std::vector<FeatureRow>& background,
                       const std::vector<bool>& present) {
  double sum = 0;
  for (const auto& b : background) {
    FeatureRow row = b;
    for (std::size_t f = 0; f < row.size(); ++f) {
      if (present[f]) row[f] = x[f];
    }
    sum += box.predict(row).proba[1];
  }
  return sum / static_cast<double>(background.size());
}

// Shapley values by enumerating every ordering of the columns.
std::vector<double> permutation_shapley(const BlackBox& box, const FeatureRow& x, const std::vector<FeatureRow>& bg) {
  const std::size_t m = x.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(m, 0.0);
  double count = 0;
  do {
    std::vector<bool> present(m, false);
    double prev = coalition_value(box, x, bg, present);
    for (std::size_t f : order) {
      present[f] = true;
      const double next = coalition_value(box, x, bg, present);
      phi[f] += next - prev;
      prev = next;
    }
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  for (double& p : phi) p /= count;
  return phi;
}

Verdict shap() {
  Verdict v;
  double worst_exact = 0, worst_eff = 0, worst_sampled = 0;
  for (std::size_t m = 1; m <= 4; ++m) {
    for (auto kind : {ModelKind::Logistic, ModelKind::Mlp, ModelKind::Tree}) {
      Dataset data = random_numeric_dataset(m, 10 * m + static_cast<std::size_t>(kind));
      TrainingConfig tc;
      tc.epochs = 60;
      auto box = model_black_box(std::make_shared<const Model>(train(kind, data, tc)));
      ShapConfig config;
      config.background = {data.features(2), data.features(3), data.features(4)};
      for (std::size_t r = 10; r < 14; ++r) {
        const Attribution a = explain_shap(box, data.features(r), config);
        const auto oracle = permutation_shapley(box, data.features(r), config.background);
        for (std::size_t f = 0; f < m; ++f) worst_exact = std::max(worst_exact, std::fabs(a.values[f] - oracle[f]));
      }
    }
  }
  v.check(worst_exact <= kShapExactTol, "exact vs brute force " + fmt(worst_exact));

  std::mt19937_64 rng(303);
  for (int c = 0; c < 500; ++c) {
    const std::size_t m = 1 + rng() % 6;
    const auto kind = static_cast<ModelKind>(rng() % 3);
    Dataset data = random_numeric_dataset(m, 1000 + static_cast<std::uint64_t>(c), 30);
    TrainingConfig tc;
    tc.epochs = 10;
    tc.seed = static_cast<std::uint64_t>(c);
    auto box = model_black_box(std::make_shared<const Model>(train(kind, data, tc)));
    ShapConfig config;
    const std::size_t nb = 1 + rng() % 3;
    for (std::size_t b = 0; b < nb; ++b) config.background.push_back(data.features(rng() % data.size()));
    if (rng() % 2) config.background = {mean_row(data)};
    config.exact = rng() % 4 != 0;
    config.n_samples = 256;
    config.seed = rng();
    const FeatureRow x = data.features(rng() % data.size());
    const Attribution a = explain_shap(box, x, config);
    const double sum = std::accumulate(a.values.begin(), a.values.end(), a.base_value);
    worst_eff = std::max(worst_eff, std::fabs(sum - box.predict(x).proba[1]));
  }
  v.check(worst_eff <= kShapEfficiencyTol, "efficiency " + fmt(worst_eff));

  Dataset three = random_numeric_dataset(3, 7);
  auto box = model_black_box(std::make_shared<const Model>(train(ModelKind::Logistic, three, TrainingConfig{})));
  ShapConfig exact;
  exact.background = {three.features(0), three.features(1), three.features(2), three.features(3)};
  ShapConfig sampled = exact;
  sampled.exact = false;
  sampled.n_samples = 4096;
  sampled.seed = 3;
  for (std::size_t r = 20; r < 30; ++r) {
    const Attribution e = explain_shap(box, three.features(r), exact);
    const Attribution s = explain_shap(box, three.features(r), sampled);
    for (std::size_t f = 0; f < 3; ++f) worst_sampled = std::max(worst_sampled, std::fabs(s.values[f] - e.values[f]));
  }
  v.check(worst_sampled <= kShapSampledTol, "sampled vs exact " + fmt(worst_sampled));
  v.detail = "max |exact-brute| " + fmt(worst_exact) + ", max efficiency gap " + fmt(worst_eff) +
             " over 500 cases, max |sampled-exact| " + fmt(worst_sampled);
  return v;
}

// ---------------------------------------------------------------------------

Encoder numeric_encoder(std::size_t width) {
  std::vector<ColumnSchema> cols;
  for (std::size_t i = 0; i < width; ++i) cols.push_back(ColumnSchema::numeric("x" + std::to_string(i + 1)));
  return Encoder(cols, std::vector<double>(width, 0.0), std::vector<double>(width, 1.0));
}

BlackBox function_box(Encoder enc, std::function<double(const FeatureRow&)> f) {
  BlackBox box;
  box.encoder = std::move(enc);
  box.classes = {"deny", "approve"};
  box.predict = [f](const FeatureRow& row) {
    Outcome o;
    const double p = f(row);
    o.proba = {1 - p, p};
    o.label = p >= 0.5 ? "approve" : "deny";
    o.decision = {{"label", o.label}};
    return o;
  };
  return box;
}

double num(const FeatureRow& row, std::size_t i) { return std::get<double>(row[i]); }

Verdict lime() {
  Verdict v;
  double worst_ratio = 1e300, worst_const = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto box = function_box(numeric_encoder(2), [](const FeatureRow& r) { return 3 * num(r, 0) + 0.5; });
    LimeConfig config;
    config.n_samples = 2000;
    config.seed = seed;
    const Attribution a = explain_lime(box, {0.0, 0.0}, config);
    const double ratio = std::fabs(a.value("x1")) / std::max(std::fabs(a.value("x2")), 1e-300);
    worst_ratio = std::min(worst_ratio, ratio);
    v.check(ratio >= kLimeDominance, "dominance seed " + std::to_string(seed));

    auto flat = function_box(numeric_encoder(3), [](const FeatureRow&) { return 0.3; });
    const Attribution c = explain_lime(flat, {1.0, -2.0, 0.5}, config);
    for (double x : c.values) worst_const = std::max(worst_const, std::fabs(x));
  }
  v.check(worst_const <= kLimeConstantTol, "constant predictor " + fmt(worst_const));
  v.detail = "min dominance ratio " + fmt(worst_ratio) + " (n=2000, 10 seeds), constant max |phi| " + fmt(worst_const);
  return v;
}

// ---------------------------------------------------------------------------

Verdict counterfactuals() {
  Verdict v;
  auto built = build_named("loan_config.json");
  const Service& s = *built->service;
  const BlackBox chain = s.black_box("chain");
  const Dataset& data = built->dataset->data;
  std::vector<std::size_t> immutable;
  for (std::size_t f = 0; f < chain.encoder.features().size(); ++f) {
    if (!chain.encoder.features()[f].searchable()) immutable.push_back(f);
  }
  std::size_t searches = 0, items = 0, invalid = 0, violations = 0, empty = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const FeatureRow x = data.features((seed * 37) % data.size());
    const Outcome original = chain.predict(x);
    if (original.rejected) continue;
    CounterfactualConfig config;
    config.target_label = original.label == "approve" ? "deny" : "approve";
    config.seed = seed;
    config.max_iters = 5;
    const auto result = explain_counterfactual(chain, x, config);
    ++searches;
    empty += result.items.empty();
    for (const auto& cf : result.items) {
      ++items;
      invalid += chain.predict(cf.modified).label != config.target_label;
      for (std::size_t f : immutable) violations += !(cf.modified[f] == x[f]);
    }
  }
  v.check(searches == 200, "searches run " + std::to_string(searches));
  v.check(invalid == 0, std::to_string(invalid) + " invalid");
  v.check(violations == 0, std::to_string(violations) + " immutable violations");

  // Threshold fixture against the grid oracle.
  Dataset threshold = testing::threshold_dataset();
  auto box = function_box(Encoder::fit(threshold), [](const FeatureRow& r) { return num(r, 0) >= 5000 ? 1.0 : 0.0; });
  CounterfactualConfig config;
  config.target_label = "approve";
  const auto result = explain_counterfactual(box, {4000.0}, config);
  double oracle = 4000;
  while (box.predict({oracle}).label != "approve") oracle += 1;
  const double step = kCounterfactualSteps[std::size(kCounterfactualSteps) - 1] * box.encoder.stds()[0];
  const double found = result.items.empty() ? -1 : num(result.items[0].modified, 0);
  v.check(found >= oracle && found <= oracle + step, "threshold counterfactual " + fmt(found));
  v.detail = std::to_string(searches) + " chain searches, " + std::to_string(items) + " counterfactuals, " +
             std::to_string(invalid) + " invalid, " + std::to_string(violations) + " immutable violations, " +
             std::to_string(empty) + " empty; threshold " + fmt(found, 8) + " vs oracle " + fmt(oracle, 8) + " + " + fmt(step);
  return v;
}

// ---------------------------------------------------------------------------

double mmd_objective(const std::vector<std::vector<double>>& pts, const std::vector<std::size_t>& s, double bw) {
  const double n = static_cast<double>(pts.size());
  const double m = static_cast<double>(s.size());
  double cross = 0, self = 0;
  for (const auto& p : pts) {
    for (std::size_t j : s) cross += rbf(p, pts[j], bw);
  }
  for (std::size_t i : s) {
    for (std::size_t j : s) self += rbf(pts[i], pts[j], bw);
  }
  return 2 / (n * m) * cross - self / (m * m);
}

// Best k-subset; ties to the lexicographically smallest index set.
std::vector<std::size_t> brute_force(const std::vector<std::vector<double>>& pts, std::size_t k, double bw) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> best;
  double best_value = -1e300;
  std::vector<bool> pick(n, false);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(k), true);
  do {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < n; ++i) {
      if (pick[i]) s.push_back(i);
    }
    const double value = mmd_objective(pts, s, bw);
    if (value > best_value + 1e-12) {
      best_value = value;
      best = s;
    }
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return best;
}

Verdict mmd() {
  Verdict v;
  struct Fixture {
    std::vector<std::vector<double>> pts;
    std::size_t k;
    double bw;
  };
  std::vector<Fixture> fixtures = {{{{0}, {0.1}, {0.2}, {5.0}, {5.1}}, 2, 1.0}, {{{0}, {1}, {3}, {7}}, 4, 1.0}};
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0, 3);
  for (int t = 0; t < 200; ++t) {
    Fixture f;
    const std::size_t n = 2 + static_cast<std::size_t>(t) % 11;
    for (std::size_t i = 0; i < n; ++i) f.pts.push_back({u(rng), u(rng)});
    f.k = std::min<std::size_t>(n, 1 + static_cast<std::size_t>(t / 11) % 3);
    f.bw = 1.0;
    fixtures.push_back(std::move(f));
  }
  std::size_t matched = 0;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> by_k;  // k -> (matched, total)
  double worst_gap = 0;
  for (const auto& f : fixtures) {
    auto greedy = mmd_critic(f.pts, f.k, 0, f.bw).prototypes;
    std::sort(greedy.begin(), greedy.end());
    const auto best = brute_force(f.pts, f.k, f.bw);
    auto& tally = by_k[std::min<std::size_t>(f.k, 4)];
    ++tally.second;
    if (greedy == best) {
      ++matched;
      ++tally.first;
    } else {
      worst_gap = std::max(worst_gap, mmd_objective(f.pts, best, f.bw) - mmd_objective(f.pts, greedy, f.bw));
    }
  }
  v.check(matched == fixtures.size(), "greedy differs from brute force");
  v.detail = std::to_string(matched) + "/" + std::to_string(fixtures.size()) +
             " fixtures match (n<=12, k<=3; by k:";
  for (const auto& [k, t] : by_k) {
    v.detail += " " + (k > 3 ? std::string("k=n") : "k=" + std::to_string(k)) + " " + std::to_string(t.first) + "/" +
                std::to_string(t.second);
  }
  v.detail += "); worst objective shortfall " + fmt(worst_gap);
  return v;
}

// ---------------------------------------------------------------------------

Verdict gradients() {
  Verdict v;
  std::mt19937_64 rng(505);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t width = 2 + static_cast<std::size_t>(trial % 4);
    // The instance plus one row of the other class.
    TrainingSet data;
    for (std::size_t r = 0; r < 2; ++r) {
      data.rows.push_back({});
      for (std::size_t i = 0; i < width; ++i) data.rows[r].push_back(normal(rng));
      data.labels.push_back((static_cast<std::size_t>(trial) + r) % 2);
    }
    TrainingConfig config;
    config.seed = static_cast<std::uint64_t>(trial);
    config.epochs = 0;
    config.hidden = 5;
    for (auto kind : {ModelKind::Logistic, ModelKind::Mlp}) {
      Model m = train_encoded(kind, data, {"a", "b"}, numeric_encoder(width), config);
      auto theta = flat_parameters(m);
      for (auto& t : theta) t = normal(rng);
      set_flat_parameters(m, theta);
      std::vector<double> grad;
      loss_and_gradient(m, data, &grad);
      const double h = 1e-5;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        auto plus = theta, minus = theta;
        plus[i] += h;
        minus[i] -= h;
        Model mp = m, mm = m;
        set_flat_parameters(mp, plus);
        set_flat_parameters(mm, minus);
        const double fd = (loss_and_gradient(mp, data, nullptr) - loss_and_gradient(mm, data, nullptr)) / (2 * h);
        const double rel = std::fabs(fd - grad[i]) / std::max({std::fabs(fd), std::fabs(grad[i]), 1e-8});
        worst = std::max(worst, rel);
      }
    }
  }
  v.check(worst <= kGradientRelTol, "relative error " + fmt(worst));
  v.detail = "50 instances, logistic and mlp, max relative error " + fmt(worst);
  return v;
}

// ---------------------------------------------------------------------------

Verdict rule_dsl() {
  using namespace rules;
  Verdict v;
  testing::RuleGenerator gen(606);
  int round_trips = 0;
  for (int i = 0; i < 1000; ++i) {
    const RuleAst ast = gen.rule();
    const std::string text = format_rule(ast);
    const RuleAst back = parse_rule(text);
    v.check(back == ast && format_rule(back) == text, "round trip: " + text);
    ++round_trips;
  }

  const ExprPtr a = compare(field(Namespace::Input, "a"), CompareOp::Gt, number(0));
  const ExprPtr b = compare(field(Namespace::Input, "b"), CompareOp::Gt, number(0));
  const ExprPtr c = compare(field(Namespace::Input, "c"), CompareOp::Gt, number(0));
  const std::vector<std::pair<std::string, ExprPtr>> golden = {
      {"input.a > 0 OR input.b > 0 AND input.c > 0", any_of(a, all_of(b, c))},
      {"input.a > 0 AND input.b > 0 OR input.c > 0", any_of(all_of(a, b), c)},
      {"NOT input.a > 0 AND input.b > 0", all_of(negate(a), b)},
      {"(input.a > 0 OR input.b > 0) AND input.c > 0", all_of(any_of(a, b), c)},
      {"input.a > 0 OR input.b > 0 OR input.c > 0", any_of(any_of(a, b), c)},
      {"input.a > 0 AND input.b > 0 AND input.c > 0", all_of(all_of(a, b), c)},
      {"(input.a * 2) > 0", compare(mul(field(Namespace::Input, "a"), number(2)), CompareOp::Gt, number(0))},
  };
  for (const auto& [text, expected] : golden) v.check(*parse_condition(text) == *expected, "precedence: " + text);

  std::vector<ColumnSchema> features = testing::loan_schema();
  features.pop_back();
  RuleSet guard(guard_schema(features, {"deny", "approve"}));
  guard.add("WHEN input.credit_history == 1 AND input.applicant_income >= 50000 THEN OVERRIDE('approve')", false);
  guard.add("WHEN output.probability < 2 THEN OVERRIDE('deny')", false);
  std::mt19937_64 rng(607);
  std::uniform_real_distribution<double> u(0, 1);
  Dataset data = testing::loan_dataset();
  int unchanged = 0;
  for (int i = 0; i < 500; ++i) {
    const double p = u(rng);
    const Json decision = decision_record({"deny", "approve"}, {1 - p, p});
    Json row = data.row_to_json(static_cast<std::size_t>(rng() % data.size()));
    row.erase("loan_status");
    CallContext ctx;
    const Json out = guard_apply(guard, row, decision, ctx);
    unchanged += out == decision && ctx.events.empty();
  }
  v.check(unchanged == 500, "guard identity " + std::to_string(unchanged) + "/500");
  v.detail = std::to_string(round_trips) + " round trips, " + std::to_string(golden.size()) +
             " precedence goldens, guard identity " + std::to_string(unchanged) + "/500";
  return v;
}

// ---------------------------------------------------------------------------

Verdict control_semantics() {
  Verdict v;
  // Shutdown.
  {
    Registry reg;
    auto state = std::make_shared<ShutdownState>();
    RunnableNode root = make_shutdown_block(reg, "Stop", state) | reg.register_block("m", "model", {constant_predict(1)});
    Pipeline p(root, state);
    p.invoke("stop", "trip", {{"reason", "manual"}});
    int blocked = 0;
    for (int i = 0; i < 100; ++i) {
      try {
        p.predict(TypedValue::scalar(i));
      } catch (const Error& e) {
        blocked += e.code() == ErrorCode::ShutdownActive;
      }
    }
    p.invoke("stop", "reset", Json::object());
    int served = 0;
    for (int i = 0; i < 100; ++i) served += p.predict(TypedValue::scalar(i)).value.payload == Json(1.0);
    v.check(blocked == 100 && served == 100, "shutdown " + std::to_string(blocked) + "/100 blocked");
  }
  // Filter: a rejection stops every downstream predict.
  {
    Registry reg;
    auto rules = std::make_shared<RuleSet>(filter_schema({ColumnSchema::numeric("income")}));
    rules->add("WHEN input.income < 0 THEN REJECT('negative income')");
    auto calls = std::make_shared<std::atomic<int>>(0);
    auto downstream = [calls] {
      MethodDescriptor d{"predict", MethodRole::Predict, {Param{"row", SemanticType::Row}}, SemanticType::Number, "c"};
      return Method{d, [calls](const Json&, CallContext&) {
                      ++*calls;
                      return TypedValue::scalar(1);
                    }};
    };
    RunnableNode root = make_filter_block(reg, "Filter", rules, {ColumnSchema::numeric("income")}) |
                        compose_parallel({reg.register_block("a", "model", {downstream()}),
                                          reg.register_block("b", "model", {downstream()})});
    std::mt19937_64 rng(708);
    std::uniform_real_distribution<double> u(-1000, 1000);
    bool ok = true;
    for (int i = 0; i < 200; ++i) {
      const double income = u(rng);
      const int before = calls->load();
      CallContext ctx;
      try {
        run_predict(root, TypedValue::row({{"income", income}}), ctx);
        ok &= income >= 0 && calls->load() == before + 2;
      } catch (const Error& e) {
        ok &= e.code() == ErrorCode::RejectedByFilter && income < 0 && calls->load() == before &&
              ctx.trace.size() == 1 && ctx.trace[0].first == "filter";
      }
    }
    v.check(ok, "filter trace");
  }
  // Bias: one correction raises p(desired | row).
  int raised = 0, corrections = 0;
  Dataset threshold = testing::threshold_dataset();
  for (auto kind : {ModelKind::Logistic, ModelKind::Mlp}) {
    const Model m = train(kind, threshold, TrainingConfig{});
    for (double income : {1500.0, 3000.0, 4800.0, 5200.0, 7000.0, 9500.0}) {
      for (const std::string desired : {"deny", "approve"}) {
        const std::size_t cls = desired == "approve" ? 1 : 0;
        const Model after = bias_apply({{Json{{"income", income}}, desired, false}}, m, BiasConfig{});
        raised += predict_proba_row(after, {income})[cls] > predict_proba_row(m, {income})[cls];
        ++corrections;
      }
    }
  }
  v.check(raised == corrections, "bias raised " + std::to_string(raised) + "/" + std::to_string(corrections));
  // Bomb reset restores probes exactly.
  {
    auto data = std::make_shared<DatasetState>(threshold);
    auto model = std::make_shared<ModelState>(ModelKind::Mlp, TrainingConfig{}, data);
    auto store = std::make_shared<CorrectionStore>();
    const std::vector<double> probes = {1000, 3000, 4900, 5100, 8000};
    std::vector<std::vector<double>> before;
    for (double x : probes) before.push_back(predict_proba_row(*model->current(), {x}));
    store->submit({{"income", 3000}}, "approve");
    model->replace(bias_apply(store->pending(), *model->current(), BiasConfig{}));
    store->mark_all_applied();
    const bool moved = predict_proba_row(*model->current(), {3000.0}) != before[1];
    auto bomb = std::make_shared<BombState>();
    bomb->rules = std::make_shared<RuleSet>(bomb_schema({ColumnSchema::numeric("income")}, {"deny", "approve"}, false));
    bomb->rules->add("WHEN output.probability > 0 THEN RESET");
    bomb->resettables = {model, store};
    CallContext ctx;
    const bool fired = bomb_monitor(*bomb, {{"income", 3000}}, decision_record({"deny", "approve"}, {0.4, 0.6}), ctx).has_value();
    bool exact = true;
    for (std::size_t i = 0; i < probes.size(); ++i) exact &= predict_proba_row(*model->current(), {probes[i]}) == before[i];
    v.check(moved && fired && exact && store->size() == 0, "bomb reset");
  }
  v.detail = "shutdown 100/100 blocked, filter trace on 200 rows, bias raised " + std::to_string(raised) + "/" +
             std::to_string(corrections) + ", bomb reset exact";
  return v;
}

// ---------------------------------------------------------------------------

const std::map<std::string, std::string> kVerbTable = {{"create", "POST"}, {"read", "GET"},
                                                       {"update", "PUT"},  {"delete", "DELETE"},
                                                       {"predict", "POST"}, {"transform", "POST"}};

Verdict api_contract() {
  Verdict v;
  std::size_t checked_routes = 0, envelopes = 0;
  for (const char* name : {"threshold_config.json", "loan_config.json"}) {
    auto built = build_named(name);
    const Service& s = *built->service;
    std::set<std::pair<std::string, std::string>> methods, mapped;
    for (const auto& block : built->pipeline->root().flatten()) {
      for (const auto& m : block->methods()) {
        methods.emplace(block->id(), m.descriptor.name);
        const std::string verb = kVerbTable.at(std::string(to_string(m.descriptor.role)));
        const std::string path = "/blocks/" + block->id() + "/" + m.descriptor.name;
        const bool found = std::any_of(s.routes().begin(), s.routes().end(), [&](const Route& r) {
          return r.verb == verb && r.path == path && r.block_id == block->id() && r.method == m.descriptor.name;
        });
        v.check(found, "route for " + path);
      }
    }
    std::set<std::pair<std::string, std::string>> endpoints;
    for (const auto& r : s.routes()) {
      v.check(endpoints.emplace(r.verb, r.path).second, "duplicate route " + r.path);
      if (!r.block_id.empty()) v.check(mapped.emplace(r.block_id, r.method).second, "method routed twice");
      ++checked_routes;
    }
    v.check(mapped == methods, "route/method bijection");

    // GET purity.
    const Json before = built->pipeline->state_document();
    std::mt19937_64 rng(809);
    for (int i = 0; i < 200; ++i) {
      const Route& r = s.routes()[rng() % s.routes().size()];
      if (r.verb != "GET") continue;
      const auto res = s.handle(r.verb, r.path, "");
      if (res.status == 200) {
        ++envelopes;
        v.check(envelope_valid(res.body), "envelope " + r.path);
      }
    }
    v.check(built->pipeline->state_document() == before, "GET changed state");
  }

  auto built = build_named("threshold_config.json");
  const Service& s = *built->service;
  const Json row = {{"income", 4000}};
  const std::vector<std::tuple<std::string, std::string, Json>> calls = {
      {"POST", "/chain/predict", {{"input", row}}},
      {"POST", "/blocks/model/predict", {{"row", row}}},
      {"POST", "/blocks/guard/add_rule", {{"rule", "WHEN input.income > 9000 THEN OVERRIDE('deny')"}}},
      {"POST", "/explain/lime", {{"instance", row}, {"params", {{"n_samples", 200}}}}},
      {"POST", "/explain/shap", {{"instance", row}}},
      {"POST", "/explain/whatif", {{"instance", row}, {"params", {{"edits", {{"income", 6000}}}}}}},
      {"POST", "/explain/counterfactual", {{"instance", row}}},
      {"POST", "/explain/prototypes", {{"params", {{"k_prototypes", 2}}}}},
      {"POST", "/explain/examples", {{"instance", row}, {"params", {{"k", 3}}}}},
      {"PUT", "/blocks/model/retrain", Json::object()},
      {"POST", "/blocks/dataset/add_row", {{"values", {{"income", 7000}, {"loan_status", "approve"}}}}},
      {"DELETE", "/blocks/dataset/delete_row", {{"row", 40}}},
      {"POST", "/shutdown", Json::object()},
      {"DELETE", "/shutdown", Json::object()},
  };
  for (const auto& [verb, path, args] : calls) {
    const auto r = s.handle_json(verb, path, args);
    v.check(r.status == 200 && envelope_valid(r.body), "success " + verb + " " + path);
    ++envelopes;
  }

  const std::vector<std::pair<int, ApiResponse>> statuses = {
      {404, s.handle_json("GET", "/nope", Json::object())},
      {404, s.handle_json("POST", "/blocks/ghost/predict", Json::object())},
      {400, s.handle_json("POST", "/chain/predict", {{"input", {{"income", "abc"}}}})},
      {400, s.handle("POST", "/chain/predict", "{not json")},
      {422, s.handle_json("POST", "/chain/predict", {{"input", {{"income", -1}}}})},
  };
  for (const auto& [expected, r] : statuses) v.check(r.status == expected, "status " + std::to_string(expected));
  s.handle_json("POST", "/shutdown", {{"reason", "acceptance"}});
  v.check(s.handle_json("POST", "/chain/predict", {{"input", row}}).status == 409, "status 409");
  s.handle_json("DELETE", "/shutdown", Json::object());
  v.check(s.handle_json("POST", "/chain/predict", {{"input", row}}).status == 200, "after reset");

  v.detail = std::to_string(checked_routes) + " routes, verb table, GET purity, " + std::to_string(envelopes) +
             " envelopes, 400/404/409/422";
  return v;
}

// ---------------------------------------------------------------------------

std::vector<ChatTurn> converse_once(AgentBackend& backend, const Service& s, const std::string& message,
                                    ConverseConfig config = {}) {
  std::vector<ChatTurn> history;
  converse(backend, s, history, message, config);
  return history;
}

Verdict agent_bridge() {
  Verdict v;
  auto built = build_named("loan_config.json");
  const Service& s = *built->service;
  const Json instance = [&] {
    Json row = built->dataset->data.row_to_json(4);
    row.erase("loan_status");
    return row;
  }();

  std::vector<ScriptEntry> script = default_script();
  script.push_back({"explain", {{"explain_shap", {{"instance", instance}}}}, "done", {}});
  script.push_back({"predict row", {{"chain_predict", {{"input", instance}}}}, "done", {}});
  ScriptedBackend backend(script);

  struct Case {
    std::string message;
    std::string verb;
    std::string path;
    Json args;
  };
  const std::vector<Case> cases = {
      {"what blocks exist?", "GET", "/chain", Json::object()},
      {"list the tools", "GET", "/tools", Json::object()},
      {"explain this applicant", "POST", "/explain/shap", {{"instance", instance}}},
      {"predict row", "POST", "/chain/predict", {{"input", instance}}},
  };
  std::size_t identical = 0;
  for (const auto& c : cases) {
    const auto history = converse_once(backend, s, c.message);
    const auto direct = s.handle_json(c.verb, c.path, c.args);
    const bool same = history.size() == 4 && history[2].tool_result && *history[2].tool_result == direct.body &&
                      history[2].status == direct.status;
    v.check(same, "envelope mismatch for '" + c.message + "'");
    identical += same;
  }
  // The structure answer names exactly the chain's blocks.
  const auto history = converse_once(backend, s, "which blocks are in the chain");
  const auto ids = structure_block_ids(s.handle_json("GET", "/chain", Json::object()).body["value"]);
  bool grounded = !ids.empty();
  for (const auto& id : ids) grounded &= history.back().content.find(id) != std::string::npos;
  v.check(grounded, "structure answer not grounded");

  std::vector<ToolCall> many(12, ToolCall{"list_tools", Json::object()});
  ScriptedBackend looping({{"loop", many, "done", {}}});
  bool budget_ok = true;
  for (int budget = 0; budget <= 6; ++budget) {
    const auto h = converse_once(looping, s, "loop", {budget});
    const auto calls = std::count_if(h.begin(), h.end(), [](const ChatTurn& t) { return t.tool_call.has_value(); });
    budget_ok &= calls == budget && h.back().role == "agent" && !h.back().tool_call;
  }
  v.check(budget_ok, "tool budget");
  v.detail = std::to_string(identical) + "/" + std::to_string(cases.size()) +
             " conversations match direct calls, grounded structure answer, budget 0..6 enforced";
  return v;
}

}  // namespace
}  // namespace matchlike

int main() {
  using namespace matchlike;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"composition-algebra", composition},
      {"update-propagation", propagation},
      {"shap", shap},
      {"lime", lime},
      {"counterfactuals", counterfactuals},
      {"mmd-critic", mmd},
      {"gradients", gradients},
      {"rule-dsl", rule_dsl},
      {"control-semantics", control_semantics},
      {"api-contract", api_contract},
      {"agent-bridge", agent_bridge},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Verdict v;
    const auto start = std::chrono::steady_clock::now();
    try {
      v = run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string line = (v.pass ? "PASS " : "FAIL ") + name + ": " + v.detail;
    for (const auto& f : v.failures) line += " [" + f + "]";
    std::cout << line << " (" << fmt(secs) << "s)" << std::endl;
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
