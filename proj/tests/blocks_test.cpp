#include "matchlike/blocks.hpp"

#include <gtest/gtest.h>

#include "fixtures.hpp"

namespace matchlike {
namespace {

using testing::threshold_dataset;

struct ThresholdChain {
  Registry reg;
  std::shared_ptr<DatasetState> data = std::make_shared<DatasetState>(threshold_dataset());
  std::shared_ptr<ModelState> model;
  RunnableNode root;

  explicit ThresholdChain(ModelKind kind = ModelKind::Logistic)
      : model(std::make_shared<ModelState>(kind, TrainingConfig{}, data)),
        root(make_dataset_block(reg, "Dataset", data) | make_model_block(reg, "Model", model)) {}
};

std::string predicted(const Pipeline& p, double income) {
  return p.predict(TypedValue::row({{"income", income}})).value.payload["label"];
}

TEST(ModelBlock, ThresholdChainPredicts) {
  ThresholdChain c;
  Pipeline p(c.root);
  EXPECT_EQ(predicted(p, 6000), "approve");
  EXPECT_EQ(predicted(p, 2000), "deny");
  // Matches a direct model call.
  const auto m = c.model->current();
  const auto proba = predict_proba_row(*m, {6000.0});
  EXPECT_DOUBLE_EQ(p.predict(TypedValue::row({{"income", 6000}})).value.payload["probabilities"][1],
                   proba[1]);
}

TEST(ModelBlock, PredictRejectsTextForNumber) {
  ThresholdChain c;
  Pipeline p(c.root);
  try {
    p.invoke("model", "predict", {{"row", {{"income", "abc"}}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TypeMismatch);
    EXPECT_EQ(e.detail(), "income");
  }
}

TEST(ModelBlock, TreeDumpOnlyForTrees) {
  ThresholdChain logistic;
  EXPECT_EQ(logistic.root.find("model")->find("tree_dump"), nullptr);
  ThresholdChain tree(ModelKind::Tree);
  EXPECT_NE(tree.root.find("model")->find("tree_dump"), nullptr);
}

TEST(DatasetBlock, CrudMethods) {
  ThresholdChain c;
  Pipeline p(c.root);
  auto r = p.invoke("dataset", "get_rows", Json::object());
  EXPECT_FALSE(r.result.updated);
  EXPECT_EQ(r.result.value.payload.size(), 40u);

  r = p.invoke("dataset", "add_row", {{"values", {{"income", 3000}, {"loan_status", "deny"}}}});
  EXPECT_TRUE(r.result.updated);
  EXPECT_EQ(c.data->data.size(), 41u);
  ASSERT_TRUE(r.report.has_value());
  ASSERT_EQ(r.report->visited.size(), 1u);
  EXPECT_EQ(r.report->visited[0], (std::pair<std::string, std::string>{"model", "retrain"}));

  try {
    p.invoke("dataset", "edit", {{"row", 99}, {"values", {{"income", 1}}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IndexOutOfRange);
  }
  try {
    p.invoke("dataset", "edit", {{"row", 0}, {"values", {{"loan_status", "maybe"}}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SchemaMismatch);
  }
}

TEST(DatasetBlock, DeleteThenRetrainMatchesFreshTraining) {
  ThresholdChain c;
  Pipeline p(c.root);
  p.invoke("dataset", "delete_row", {{"row", 0}});
  Dataset expected = threshold_dataset();
  expected.delete_row(0);
  const Model fresh = train(ModelKind::Logistic, expected, TrainingConfig{});
  EXPECT_TRUE(*c.model->current() == fresh);
  EXPECT_EQ(c.data->data.size(), 39u);
}

TEST(DatasetBlock, LabelFlipFlipsProbe) {
  for (ModelKind kind : {ModelKind::Logistic, ModelKind::Tree, ModelKind::Mlp}) {
    ThresholdChain c(kind);
    Pipeline p(c.root);
    const std::string before = predicted(p, 9000);
    Json edits = Json::array();
    for (std::size_t i = 0; i < c.data->data.size(); ++i) {
      const std::string label = c.data->data.row_to_json(i)["loan_status"];
      edits.push_back({{"row", i}, {"values", {{"loan_status", label == "approve" ? "deny" : "approve"}}}});
    }
    auto r = p.invoke("dataset", "edit_batch", {{"edits", edits}});
    EXPECT_TRUE(r.result.updated);
    EXPECT_EQ(before, "approve");
    EXPECT_EQ(predicted(p, 9000), "deny") << to_string(kind);
  }
}

TEST(ModelState, RestoreSnapshotIsExact) {
  ThresholdChain c(ModelKind::Mlp);
  const auto snap = c.model->snapshot();
  Model changed = *snap;
  auto flat = flat_parameters(changed);
  for (double& v : flat) v += 0.25;
  set_flat_parameters(changed, flat);
  c.model->replace(changed);
  EXPECT_FALSE(*c.model->current() == *snap);
  c.model->restore_snapshot();
  EXPECT_EQ(flat_parameters(*c.model->current()), flat_parameters(*snap));
}

}  // namespace
}  // namespace matchlike
