#include "matchlike/models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "matchlike/error.hpp"

namespace matchlike {
namespace {

double accuracy(const Model& model, const TrainingSet& data) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    hits += predict_class(model, data.rows[i]) == data.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(data.rows.size());
}

Encoder identity_encoder(std::size_t width) {
  std::vector<ColumnSchema> cols;
  for (std::size_t i = 0; i < width; ++i) cols.push_back(ColumnSchema::numeric("x" + std::to_string(i)));
  return Encoder(cols, std::vector<double>(width, 0.0), std::vector<double>(width, 1.0));
}

TEST(Train, LogisticSeparatesOneDimension) {
  TrainingSet data;
  for (int i = -10; i <= 10; ++i) {
    if (i == 0) continue;
    data.rows.push_back({i * 0.1});
    data.labels.push_back(i > 0 ? 1 : 0);
  }
  Model m = train_encoded(ModelKind::Logistic, data, {"deny", "approve"}, identity_encoder(1), {});
  EXPECT_EQ(accuracy(m, data), 1.0);
}

TEST(Train, TreeRecoversXor) {
  TrainingSet data;
  for (int rep = 0; rep < 5; ++rep) {  // duplicated corners
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        data.rows.push_back({double(a), double(b)});
        data.labels.push_back(static_cast<std::size_t>(a ^ b));
      }
    }
  }
  TrainingConfig config;
  config.max_depth = 2;
  Model m = train_encoded(ModelKind::Tree, data, {"zero", "one"}, identity_encoder(2), config);
  EXPECT_EQ(accuracy(m, data), 1.0);
  const auto& tree = std::get<TreeParams>(m.params);
  EXPECT_EQ(tree.nodes[0].feature, 0);  // tie-break: lowest feature index first
}

TEST(Train, MlpIsDeterministicPerSeed) {
  Dataset ds = testing::threshold_dataset();
  TrainingConfig config;
  config.seed = 11;
  config.epochs = 50;
  Model a = train(ModelKind::Mlp, ds, config);
  Model b = train(ModelKind::Mlp, ds, config);
  EXPECT_EQ(flat_parameters(a), flat_parameters(b));
  config.seed = 12;
  Model c = train(ModelKind::Mlp, ds, config);
  EXPECT_NE(flat_parameters(a), flat_parameters(c));
}

TEST(Train, SingleClassRejected) {
  TrainingSet data{{{0.0}, {1.0}}, {1, 1}};
  try {
    train_encoded(ModelKind::Logistic, data, {"a", "b"}, identity_encoder(1), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingleClassDataset);
  }
}

TEST(PredictProba, ZeroLogisticIsUniform) {
  Model m;
  m.kind = ModelKind::Logistic;
  m.classes = {"deny", "approve"};
  m.n_features = 3;
  m.params = LogisticParams{Eigen::MatrixXd::Zero(2, 3), Eigen::VectorXd::Zero(2)};
  auto p = predict_proba(m, std::vector<double>{1, 2, 3});
  EXPECT_EQ(p, (std::vector<double>{0.5, 0.5}));
}

TEST(PredictProba, TreeLeafFrequencies) {
  Model m;
  m.kind = ModelKind::Tree;
  m.classes = {"approve", "deny"};
  m.n_features = 1;
  m.params = TreeParams{{TreeNode{-1, 0, -1, -1, {3, 1}}}};
  EXPECT_EQ(predict_proba(m, std::vector<double>{0.3}), (std::vector<double>{0.75, 0.25}));
}

TEST(PredictProba, DimensionMismatch) {
  Model m = train(ModelKind::Logistic, testing::threshold_dataset(), {});
  try {
    predict_proba(m, std::vector<double>{1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(PredictProba, SumsToOneOnFuzzedModelsAndRows) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 3.0);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t width = 2 + trial % 5;
    const std::size_t classes = 2 + trial % 3;  // includes multiclass
    TrainingSet data;
    for (int i = 0; i < 30; ++i) {
      std::vector<double> row(width);
      for (auto& v : row) v = normal(rng);
      data.rows.push_back(row);
      data.labels.push_back(static_cast<std::size_t>(i) % classes);
    }
    std::vector<std::string> labels;
    for (std::size_t k = 0; k < classes; ++k) labels.push_back("c" + std::to_string(k));
    TrainingConfig config;
    config.seed = static_cast<std::uint64_t>(trial);
    config.epochs = 20;
    for (auto kind : {ModelKind::Logistic, ModelKind::Tree, ModelKind::Mlp}) {
      Model m = train_encoded(kind, data, labels, identity_encoder(width), config);
      for (int probe = 0; probe < 10; ++probe) {
        std::vector<double> row(width);
        for (auto& v : row) v = normal(rng) * 10;
        auto p = predict_proba(m, row);
        ASSERT_EQ(p.size(), classes);
        double sum = 0;
        for (double v : p) {
          EXPECT_GE(v, 0.0);
          sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
      }
    }
  }
}

TEST(Representation, ShapesAndFallback) {
  Dataset ds = testing::loan_dataset();
  TrainingConfig config;
  config.epochs = 5;
  Model mlp = train(ModelKind::Mlp, ds, config);
  Model logistic = train(ModelKind::Logistic, ds, config);
  auto x = mlp.encoder.encode(ds.features(0));
  EXPECT_EQ(representation(mlp, x).size(), 8u);
  EXPECT_EQ(representation(logistic, x), x);
  EXPECT_EQ(representation(mlp, x), representation(mlp, mlp.encoder.encode(ds.features(0))));
}

// Central finite differences against the analytic gradient.
TEST(Gradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t width = 3;
    TrainingSet data;
    for (int i = 0; i < 6; ++i) {
      data.rows.push_back({normal(rng), normal(rng), normal(rng)});
      data.labels.push_back(static_cast<std::size_t>(i % 2));
    }
    TrainingConfig config;
    config.seed = static_cast<std::uint64_t>(trial);
    config.epochs = 0;
    config.hidden = 4;
    for (auto kind : {ModelKind::Logistic, ModelKind::Mlp}) {
      Model m = train_encoded(kind, data, {"a", "b"}, identity_encoder(width), config);
      auto theta = flat_parameters(m);
      for (auto& t : theta) t = normal(rng);
      set_flat_parameters(m, theta);
      std::vector<double> grad;
      loss_and_gradient(m, data, &grad);
      const double h = 1e-6;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        auto plus = theta;
        auto minus = theta;
        plus[i] += h;
        minus[i] -= h;
        Model mp = m;
        Model mm = m;
        set_flat_parameters(mp, plus);
        set_flat_parameters(mm, minus);
        const double fd = (loss_and_gradient(mp, data, nullptr) - loss_and_gradient(mm, data, nullptr)) / (2 * h);
        const double denom = std::max({std::fabs(fd), std::fabs(grad[i]), 1e-8});
        EXPECT_LE(std::fabs(fd - grad[i]) / denom, 1e-4) << "param " << i;
      }
    }
  }
}

TEST(Serialization, RoundTrip) {
  Dataset ds = testing::loan_dataset();
  TrainingConfig config;
  config.epochs = 10;
  for (auto kind : {ModelKind::Logistic, ModelKind::Tree, ModelKind::Mlp}) {
    Model m = train(kind, ds, config);
    Model back = Model::from_json(Json::parse(m.to_json().dump()));
    EXPECT_TRUE(back == m) << to_string(kind);
    auto x = m.encoder.encode(ds.features(3));
    EXPECT_EQ(predict_proba(back, x), predict_proba(m, x));
  }
}

TEST(TreeStructure, DumpListsNodes) {
  Model m = train(ModelKind::Tree, testing::threshold_dataset(), {});
  Json doc = tree_structure(m);
  EXPECT_EQ(doc["nodes"][0]["feature"], "income");
}

}  // namespace
}  // namespace matchlike
