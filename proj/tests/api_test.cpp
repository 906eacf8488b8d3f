#include "matchlike/api.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "httplib.h"
#include "service_fixtures.hpp"

namespace matchlike {
namespace {

using testing::build_fixture;
using testing::build_named;
using testing::fixture_config;

const std::map<std::string, std::string> kVerbTable = {
    {"create", "POST"}, {"read", "GET"},     {"update", "PUT"},
    {"delete", "DELETE"}, {"predict", "POST"}, {"transform", "POST"}};

const Route* route_for(const Service& s, const std::string& verb, const std::string& path) {
  for (const auto& r : s.routes()) {
    if (r.verb == verb && r.path == path) return &r;
  }
  return nullptr;
}

TEST(Routes, VerbMappingAndSpecials) {
  auto built = build_named("threshold_config.json");
  const Service& s = *built->service;
  EXPECT_NE(route_for(s, "POST", "/blocks/model/predict"), nullptr);
  EXPECT_NE(route_for(s, "PUT", "/blocks/model/retrain"), nullptr);
  EXPECT_NE(route_for(s, "PUT", "/blocks/dataset/edit"), nullptr);
  EXPECT_NE(route_for(s, "DELETE", "/blocks/dataset/delete_row"), nullptr);
  EXPECT_NE(route_for(s, "POST", "/blocks/dataset/add_row"), nullptr);
  EXPECT_NE(route_for(s, "GET", "/blocks/dataset/get_rows"), nullptr);
  for (const char* special : {"/chain", "/tools"}) EXPECT_NE(route_for(s, "GET", special), nullptr);
  for (const char* special : {"/chain/predict", "/chat", "/shutdown"}) {
    EXPECT_NE(route_for(s, "POST", special), nullptr);
  }
  EXPECT_NE(route_for(s, "DELETE", "/shutdown"), nullptr);
  for (const auto& kind : kExplainKinds) EXPECT_NE(route_for(s, "POST", "/explain/" + kind), nullptr);
}

TEST(Routes, GoldenVerbTableAndBijection) {
  for (const char* name : {"threshold_config.json", "loan_config.json"}) {
    auto built = build_named(name);
    const Service& s = *built->service;
    std::set<std::pair<std::string, std::string>> methods;
    for (const auto& block : built->pipeline->root().flatten()) {
      for (const auto& m : block->methods()) {
        methods.emplace(block->id(), m.descriptor.name);
        const Route* r = route_for(s, kVerbTable.at(std::string(to_string(m.descriptor.role))),
                                   "/blocks/" + block->id() + "/" + m.descriptor.name);
        ASSERT_NE(r, nullptr) << block->id() << "." << m.descriptor.name;
        EXPECT_EQ(r->block_id, block->id());
        EXPECT_EQ(r->method, m.descriptor.name);
      }
    }
    std::set<std::pair<std::string, std::string>> seen_routes, seen_methods;
    std::set<std::string> names;
    std::size_t specials = 0;
    for (const auto& r : s.routes()) {
      EXPECT_TRUE(seen_routes.insert({r.verb, r.path}).second) << r.path;
      EXPECT_TRUE(names.insert(r.tool_name).second) << r.tool_name;
      EXPECT_FALSE(r.description.empty());
      if (r.block_id.empty()) {
        ++specials;
      } else {
        EXPECT_TRUE(methods.count({r.block_id, r.method}));
        EXPECT_TRUE(seen_methods.insert({r.block_id, r.method}).second);
      }
    }
    EXPECT_EQ(seen_methods.size(), methods.size());
    EXPECT_EQ(specials, 6 + kExplainKinds.size());
    EXPECT_EQ(s.tool_schemas().size(), s.routes().size());
  }
}

TEST(Routes, SameMethodNameDistinctPaths) {
  auto built = build_named("loan_config.json");
  const Service& s = *built->service;
  ASSERT_NE(route_for(s, "POST", "/blocks/nn1/predict"), nullptr);
  ASSERT_NE(route_for(s, "POST", "/blocks/nn2/predict"), nullptr);
  EXPECT_NE(s.find_tool("nn1_predict"), nullptr);
  EXPECT_NE(s.find_tool("nn2_predict"), nullptr);
}

TEST(Tools, SchemasMirrorDescriptors) {
  auto built = build_named("threshold_config.json");
  const Service& s = *built->service;
  const Route* predict = s.find_tool("model_predict");
  ASSERT_NE(predict, nullptr);
  EXPECT_EQ(predict->path, "/blocks/model/predict");
  const Json& row = predict->parameters["properties"]["row"];
  EXPECT_EQ(row["type"], "object");
  EXPECT_EQ(row["properties"]["income"]["type"], "number");
  EXPECT_EQ(predict->parameters["required"], Json::array({"row"}));
  const Route* chain = s.find_tool("chain_predict");
  ASSERT_NE(chain, nullptr);
  EXPECT_EQ(chain->parameters["properties"]["input"]["properties"]["income"]["type"], "number");
  EXPECT_NE(s.find_tool("chain_structure"), nullptr);
  EXPECT_NE(s.find_tool("explain_lime"), nullptr);

  auto r = s.handle_json("GET", "/tools", Json::object());
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["value"], s.tool_schemas());
}

TEST(Dispatch, EnvelopeOnEverySuccess) {
  auto built = build_named("threshold_config.json");
  const Service& s = *built->service;
  const Json row = {{"income", 4000}};
  std::vector<std::tuple<std::string, std::string, Json>> calls = {
      {"GET", "/chain", Json::object()},
      {"GET", "/tools", Json::object()},
      {"POST", "/chain/predict", {{"input", row}}},
      {"POST", "/blocks/model/predict", {{"row", row}}},
      {"GET", "/blocks/model/parameters", Json::object()},
      {"GET", "/blocks/dataset/schema", Json::object()},
      {"GET", "/blocks/dataset/get_rows", Json::object()},
      {"POST", "/blocks/guard/add_rule", {{"rule", "WHEN input.income > 9000 THEN OVERRIDE('deny')"}}},
      {"GET", "/blocks/guard/rules", Json::object()},
      {"GET", "/blocks/guard/audit", Json::object()},
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
    auto r = s.handle_json(verb, path, args);
    ASSERT_EQ(r.status, 200) << verb << " " << path << " " << r.body.dump();
    EXPECT_TRUE(envelope_valid(r.body)) << path << " " << r.body.dump();
    const bool mutating = verb != "GET" && path.rfind("/blocks/", 0) == 0 &&
                          path.find("predict") == std::string::npos;
    if (path.rfind("/blocks/", 0) == 0) EXPECT_EQ(r.body["updated"], mutating) << path;
  }
}

TEST(Dispatch, PredictReturnsDecisionAndEvents) {
  auto built = build_named("threshold_config.json");
  const Service& s = *built->service;
  auto r = s.handle_json("POST", "/chain/predict", {{"input", {{"income", 8000}}}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["value"]["label"], "approve");
  EXPECT_EQ(r.body["events"], Json::array());
  s.handle_json("POST", "/blocks/guard/add_rule", {{"rule", "WHEN input.income > 7000 THEN OVERRIDE('deny')"}});
  r = s.handle_json("POST", "/chain/predict", {{"input", {{"income", 8000}}}});
  EXPECT_EQ(r.body["value"]["label"], "deny");
  ASSERT_EQ(r.body["events"].size(), 1u);
  EXPECT_EQ(r.body["events"][0]["type"], "rule_fired");
  EXPECT_EQ(r.body["events"][0]["block"], "guard");
}

TEST(Dispatch, ErrorStatuses) {
  auto built = build_named("threshold_config.json");
  const Service& s = *built->service;
  EXPECT_EQ(s.handle_json("GET", "/nope", Json::object()).status, 404);
  EXPECT_EQ(s.handle_json("POST", "/blocks/ghost/predict", Json::object()).status, 404);
  EXPECT_EQ(s.handle_json("GET", "/blocks/model/predict", Json::object()).status, 404);

  auto bad = s.handle_json("POST", "/chain/predict", {{"input", {{"income", "abc"}}}});
  EXPECT_EQ(bad.status, 400);
  EXPECT_EQ(bad.body["error"]["detail"], "income");
  auto bad_model = s.handle_json("POST", "/blocks/model/predict", {{"row", {{"income", "abc"}}}});
  EXPECT_EQ(bad_model.status, 400);
  EXPECT_EQ(bad_model.body["error"]["detail"], "income");
  auto missing = s.handle_json("PUT", "/blocks/dataset/edit", {{"row", 0}});
  EXPECT_EQ(missing.status, 400);
  EXPECT_EQ(missing.body["error"]["detail"], "values");
  EXPECT_EQ(s.handle("POST", "/chain/predict", "{not json").status, 400);

  auto rejected = s.handle_json("POST", "/chain/predict", {{"input", {{"income", -1}}}});
  EXPECT_EQ(rejected.status, 422) << rejected.body.dump();
  EXPECT_EQ(rejected.body["value"]["message"], "negative income");
  EXPECT_EQ(rejected.body["events"][0]["action"], "reject");

  EXPECT_EQ(s.handle_json("POST", "/shutdown", {{"reason", "test"}}).status, 200);
  auto stopped = s.handle_json("POST", "/chain/predict", {{"input", {{"income", 8000}}}});
  EXPECT_EQ(stopped.status, 409);
  EXPECT_EQ(stopped.body["error"]["code"], "ShutdownActive");
  EXPECT_EQ(s.handle_json("POST", "/blocks/model/predict", {{"row", {{"income", 1}}}}).status, 409);
  EXPECT_EQ(s.handle_json("POST", "/explain/lime", {{"instance", {{"income", 1}}}}).status, 409);
  EXPECT_EQ(s.handle_json("DELETE", "/shutdown", Json::object()).status, 200);
  EXPECT_EQ(s.handle_json("POST", "/chain/predict", {{"input", {{"income", 8000}}}}).status, 200);
}

TEST(Dispatch, GetRequestsArePure) {
  auto built = build_named("loan_config.json");
  const Service& s = *built->service;
  s.handle_json("POST", "/chain/predict", {{"input", built->dataset->data.row_to_json(0)}});
  const Json before = built->pipeline->state_document();
  std::mt19937_64 rng(1);
  std::vector<const Route*> gets;
  for (const auto& r : s.routes()) {
    if (r.verb == "GET") gets.push_back(&r);
  }
  ASSERT_GT(gets.size(), 5u);
  for (int i = 0; i < 200; ++i) {
    const Route* r = gets[rng() % gets.size()];
    std::multimap<std::string, std::string> query;
    if (rng() % 3 == 0) query.emplace("row", std::to_string(rng() % 5));
    s.handle(r->verb, r->path, "", query);
  }
  EXPECT_EQ(built->pipeline->state_document(), before);
}

TEST(Dispatch, ExplanationsAreReadOnly) {
  auto built = build_named("loan_config.json");
  const Service& s = *built->service;
  // A guard rule that fires on many probes.
  s.handle_json("POST", "/blocks/guard/add_rule", {{"rule", "WHEN input.credit_history == 0 THEN OVERRIDE('deny')"}});
  const Json before = built->pipeline->state_document();
  const Json instance = built->dataset->data.row_to_json(3);
  for (const auto& kind : {"lime", "whatif", "counterfactual"}) {
    auto r = s.handle_json("POST", std::string("/explain/") + kind,
                           {{"instance", instance}, {"params", {{"n_samples", 100}, {"seed", 1}}}});
    if (std::string(kind) != "lime") {
      r = s.handle_json("POST", std::string("/explain/") + kind, {{"instance", instance}});
    }
    EXPECT_EQ(r.status, 200) << kind << r.body.dump();
  }
  EXPECT_EQ(built->pipeline->state_document(), before);
}

TEST(Dispatch, LabelFlipThroughPut) {
  auto built = build_named("threshold_config.json");
  const Service& s = *built->service;
  const Json probe = {{"input", {{"income", 9000}}}};
  EXPECT_EQ(s.handle_json("POST", "/chain/predict", probe).body["value"]["label"], "approve");

  const Json rows = s.handle_json("GET", "/blocks/dataset/get_rows", Json::object()).body["value"];
  Json edits = Json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string flipped = rows[i]["loan_status"] == "approve" ? "deny" : "approve";
    edits.push_back({{"row", i}, {"values", {{"loan_status", flipped}}}});
  }
  auto put = s.handle_json("PUT", "/blocks/dataset/edit_batch", {{"edits", edits}});
  ASSERT_EQ(put.status, 200) << put.body.dump();
  EXPECT_TRUE(put.body["updated"].get<bool>());
  const Json& events = put.body["events"];
  ASSERT_FALSE(events.empty());
  EXPECT_EQ(events.back()["type"], "update_propagated");
  EXPECT_EQ(events.back()["visited"], Json::array({{{"block", "model"}, {"method", "retrain"}}}));
  EXPECT_EQ(s.handle_json("POST", "/chain/predict", probe).body["value"]["label"], "deny");
}

Json two_tree_config() {
  Json config = fixture_config("threshold_config.json");
  config["blocks"] = Json::array({
      {{"id", "dataset"}, {"kind", "dataset"}},
      {{"id", "t1"}, {"kind", "model"}, {"model", "tree"}, {"config", {{"max_depth", 3}}}},
      {{"id", "t2"}, {"kind", "model"}, {"model", "logistic"}, {"config", {{"epochs", 50}}}},
      {{"id", "agg"}, {"kind", "aggregator"}, {"strategy", "average_probability"}},
  });
  config["chain"] = "dataset | ParallelBlock(t1, t2) | agg";
  return config;
}

TEST(Dispatch, ConcurrentPredictsSeeWholeUpdates) {
  auto built = build_fixture(two_tree_config());
  const Service& s = *built->service;
  const Json probe = {{"input", {{"income", 5200}}}};
  const Json old_value = s.handle_json("POST", "/chain/predict", probe).body["value"];

  const Json rows = s.handle_json("GET", "/blocks/dataset/get_rows", Json::object()).body["value"];
  Json edits = Json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    edits.push_back({{"row", i},
                     {"values", {{"loan_status", rows[i]["loan_status"] == "approve" ? "deny" : "approve"}}}});
  }
  std::atomic<bool> done{false};
  std::vector<Json> seen;
  std::thread reader([&] {
    while (!done.load()) seen.push_back(s.handle_json("POST", "/chain/predict", probe).body["value"]);
  });
  auto put = s.handle_json("PUT", "/blocks/dataset/edit_batch", {{"edits", edits}});
  done = true;
  reader.join();
  ASSERT_EQ(put.status, 200);
  const Json new_value = s.handle_json("POST", "/chain/predict", probe).body["value"];
  ASSERT_NE(old_value, new_value);
  for (const auto& v : seen) EXPECT_TRUE(v == old_value || v == new_value) << v.dump();
}

TEST(Explain, ChainOfOneModelEqualsModel) {
  Json config = fixture_config("loan_config.json");
  config["blocks"] = Json::array({{{"id", "nn1"}, {"kind", "model"}, {"model", "mlp"},
                                   {"config", {{"epochs", 100}}}}});
  config["chain"] = "nn1";
  auto built = build_fixture(config);
  const Service& s = *built->service;
  const Json instance = built->dataset->data.row_to_json(10);
  for (const char* kind : {"lime", "shap"}) {
    const Json params = {{"seed", 5}, {"n_samples", 300}};
    auto chain = s.handle_json("POST", std::string("/explain/") + kind,
                               {{"target", "chain"}, {"instance", instance}, {"params", params}});
    auto model = s.handle_json("POST", std::string("/explain/") + kind,
                               {{"target", "nn1"}, {"instance", instance}, {"params", params}});
    ASSERT_EQ(chain.status, 200) << chain.body.dump();
    EXPECT_EQ(chain.body["value"], model.body["value"]) << kind;
    EXPECT_EQ(chain.body["data_type"], "attribution");
  }
}

TEST(Explain, TargetsAndVariants) {
  auto built = build_named("threshold_config.json");
  const Service& s = *built->service;
  const Json instance = {{"income", 4000}};
  EXPECT_EQ(s.handle_json("POST", "/explain/lime", {{"target", "ghost"}, {"instance", instance}}).status, 404);
  EXPECT_EQ(s.handle_json("POST", "/explain/lime", {{"target", "guard"}, {"instance", instance}}).status, 400);

  auto whatif = s.handle_json("POST", "/explain/whatif",
                              {{"instance", instance}, {"params", {{"edits", {{"income", 6000}}}}}});
  EXPECT_EQ(whatif.body["value"]["decision"]["label"], "approve");
  auto rejected = s.handle_json("POST", "/explain/whatif",
                                {{"instance", instance}, {"params", {{"edits", {{"income", -10}}}}}});
  ASSERT_EQ(rejected.status, 200);
  EXPECT_EQ(rejected.body["value"]["rejected"], "negative income");

  auto cf = s.handle_json("POST", "/explain/counterfactual", {{"instance", instance}});
  ASSERT_EQ(cf.status, 200);
  const Json& items = cf.body["value"]["counterfactuals"];
  ASSERT_EQ(items.size(), 1u);
  EXPECT_EQ(items[0]["predicted_label"], "approve");
  auto check = s.handle_json("POST", "/chain/predict", {{"input", items[0]["modified"]}});
  EXPECT_EQ(check.body["value"]["label"], "approve");

  auto shap = s.handle_json("POST", "/explain/shap", {{"instance", instance}});
  const Json& a = shap.body["value"];
  EXPECT_NEAR(a["base_value"].get<double>() + a["values"]["income"].get<double>(),
              a["prediction"].get<double>(), 1e-9);
}

TEST(Http, ServerMatchesDirectDispatch) {
  auto built = build_named("threshold_config.json");
  const Service& s = *built->service;
  HttpServer server(s);
  const int port = server.start("127.0.0.1", 0);
  httplib::Client client("127.0.0.1", port);

  auto chain = client.Get("/chain");
  ASSERT_TRUE(chain);
  EXPECT_EQ(chain->status, 200);
  EXPECT_EQ(chain->body, dump_decimal(s.handle_json("GET", "/chain", Json::object()).body));

  const std::string body = R"({"input": {"income": 6100}})";
  auto predict = client.Post("/chain/predict", body, "application/json");
  ASSERT_TRUE(predict);
  EXPECT_EQ(Json::parse(predict->body), s.handle("POST", "/chain/predict", body).body);

  auto missing = client.Get("/nowhere");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);

  auto edit = client.Put("/blocks/dataset/edit", R"({"row": 0, "values": {"income": 1500}})",
                         "application/json");
  ASSERT_TRUE(edit);
  EXPECT_EQ(edit->status, 200);
  EXPECT_TRUE(Json::parse(edit->body)["updated"].get<bool>());
  auto rows = client.Get("/blocks/dataset/get_rows");
  EXPECT_EQ(Json::parse(rows->body)["value"][0]["income"], 1500);
  server.stop();
}

}  // namespace
}  // namespace matchlike
