#include "matchlike/agent.hpp"

#include <gtest/gtest.h>

#include <set>

#include "httplib.h"
#include "service_fixtures.hpp"

namespace matchlike {
namespace {

using testing::build_named;

std::vector<ChatTurn> run(AgentBackend& backend, const Service& s, const std::string& message,
                          ConverseConfig config = {}) {
  std::vector<ChatTurn> history;
  converse(backend, s, history, message, config);
  return history;
}

std::vector<std::string> tool_names(const std::vector<ChatTurn>& history) {
  std::vector<std::string> names;
  for (const auto& t : history) {
    if (t.tool_call) names.push_back(t.tool_call->name);
  }
  return names;
}

TEST(Agent, StructureQuestionIsGroundedInTheChain) {
  auto built = build_named("loan_config.json");
  ScriptedBackend backend(default_script());
  auto history = run(backend, *built->service, "What blocks exist?");
  ASSERT_EQ(history.size(), 4u);
  EXPECT_EQ(history[1].tool_call->name, "chain_structure");
  EXPECT_EQ(history[2].status, 200);
  EXPECT_EQ(history.back().role, "agent");

  const auto direct = built->service->handle_json("GET", "/chain", Json::object());
  EXPECT_EQ(*history[2].tool_result, direct.body);
  const auto ids = structure_block_ids(direct.body["value"]);
  EXPECT_EQ(ids, (std::vector<std::string>{"dataset", "filter", "nn1", "nn2", "agg", "guard", "stop"}));
  for (const auto& id : ids) EXPECT_NE(history.back().content.find(id), std::string::npos) << id;
}

TEST(Agent, ToolResultsMatchDirectDispatch) {
  auto built = build_named("threshold_config.json");
  ScriptedBackend backend(default_script());
  auto history = run(backend, *built->service, "please predict for income 8000");
  ASSERT_EQ(tool_names(history), std::vector<std::string>{"chain_predict"});
  EXPECT_EQ(history[1].tool_call->arguments, (Json{{"input", {{"income", 8000}}}}));
  const auto direct = built->service->handle_json("POST", "/chain/predict", {{"input", {{"income", 8000}}}});
  EXPECT_EQ(history[2].status, direct.status);
  EXPECT_EQ(*history[2].tool_result, direct.body);
  EXPECT_TRUE(envelope_valid(*history[2].tool_result));
  EXPECT_NE(history.back().content.find("approve"), std::string::npos);
}

TEST(Agent, RejectionIsReportedNotThrown) {
  auto built = build_named("threshold_config.json");
  ScriptedBackend backend(default_script());
  auto history = run(backend, *built->service, "predict income -5");
  ASSERT_EQ(history.size(), 4u);
  EXPECT_EQ(history[2].status, 422);
  EXPECT_NE(history.back().content.find("negative income"), std::string::npos);
}

TEST(Agent, UnknownToolBecomesToolErrorTurn) {
  auto built = build_named("threshold_config.json");
  ScriptedBackend backend({{"go", {{"foo", Json::object()}}, "done", {}}});
  auto history = run(backend, *built->service, "go");
  ASSERT_EQ(history.size(), 4u);
  EXPECT_EQ(history[2].role, "tool");
  EXPECT_EQ(history[2].status, 404);
  EXPECT_EQ((*history[2].tool_result)["error"]["code"], "UnknownTool");
  EXPECT_EQ(history[3].role, "agent");
  EXPECT_EQ(history[3].content, "done");
}

TEST(Agent, ChatIsNotOfferedAsTool) {
  auto built = build_named("threshold_config.json");
  for (const auto& t : agent_tools(*built->service)) EXPECT_NE(t["name"], "chat");
  ScriptedBackend backend({{"go", {{"chat", {{"message", "x"}}}}, "done", {}}});
  auto history = run(backend, *built->service, "go");
  EXPECT_EQ(history[2].status, 404);
}

TEST(Agent, ZeroBudgetForcesDirectAnswer) {
  auto built = build_named("threshold_config.json");
  ScriptedBackend backend(default_script());
  auto history = run(backend, *built->service, "what blocks exist", {0});
  ASSERT_EQ(history.size(), 2u);
  EXPECT_EQ(history[1].role, "agent");
  EXPECT_FALSE(history[1].tool_call);
  EXPECT_NE(history[1].content.find("budget"), std::string::npos);
}

TEST(Agent, BudgetCapsToolCalls) {
  auto built = build_named("threshold_config.json");
  std::vector<ToolCall> many(10, ToolCall{"list_tools", Json::object()});
  ScriptedBackend backend({{"loop", many, "done", {}}});
  for (int budget : {1, 3, 4}) {
    auto history = run(backend, *built->service, "loop", {budget});
    EXPECT_EQ(static_cast<int>(tool_names(history).size()), budget);
    EXPECT_EQ(history.back().role, "agent");
    EXPECT_NE(history.back().content.find("budget"), std::string::npos);
  }
  auto history = run(backend, *built->service, "loop", {10});
  EXPECT_EQ(tool_names(history).size(), 10u);
  EXPECT_EQ(history.back().content, "done");
}

TEST(Agent, FirstMatchingEntryWinsAndFallback) {
  auto built = build_named("threshold_config.json");
  ScriptedBackend backend({{"alpha", {}, "first $0", {}}, {"alp(ha)", {}, "second $1", {}}}, "fallback");
  EXPECT_EQ(run(backend, *built->service, "ALPHA").back().content, "first $0");
  EXPECT_EQ(run(backend, *built->service, "beta").back().content, "fallback");
  ScriptedBackend capture({{"say (\\w+)", {}, "you said $1", {}}});
  EXPECT_EQ(run(capture, *built->service, "say hello").back().content, "you said hello");
}

TEST(Agent, ShutdownThroughChat) {
  auto built = build_named("loan_config.json");
  ScriptedBackend backend(default_script());
  run(backend, *built->service, "emergency stop now");
  EXPECT_TRUE(built->pipeline->shutdown().active());
  run(backend, *built->service, "resume please");
  EXPECT_FALSE(built->pipeline->shutdown().active());
}

TEST(Agent, TurnJsonRoundTrip) {
  ChatTurn t{"tool", "x"};
  t.tool_call = ToolCall{"a", {{"k", 1}}};
  t.tool_result = Json{{"value", 2}};
  t.status = 200;
  const ChatTurn back = ChatTurn::from_json(t.to_json());
  EXPECT_EQ(back.to_json(), t.to_json());
}

TEST(Sessions, HistoryAccumulatesAndEvictsLeastRecent) {
  auto built = build_named("threshold_config.json");
  ChatSessions sessions(*built->service, std::make_shared<ScriptedBackend>(default_script()));
  Json h = sessions.chat("a", "list tools");
  EXPECT_EQ(h.size(), 4u);
  h = sessions.chat("a", "hello");
  EXPECT_EQ(h.size(), 6u);
  for (std::size_t i = 1; i < ChatSessions::kCapacity; ++i) sessions.chat("s" + std::to_string(i), "hi");
  EXPECT_EQ(sessions.size(), ChatSessions::kCapacity);
  sessions.chat("a", "hi");
  sessions.chat("new", "hi");
  EXPECT_EQ(sessions.size(), ChatSessions::kCapacity);
  EXPECT_TRUE(sessions.contains("a"));
  EXPECT_FALSE(sessions.contains("s1"));
  EXPECT_TRUE(sessions.contains("s2"));
}

TEST(Sessions, ChatRouteUsesAgent) {
  auto built = build_named("threshold_config.json");
  EXPECT_EQ(built->service->handle_json("POST", "/chat", {{"message", "hi"}}).status, 404);
  ChatSessions sessions(*built->service, std::make_shared<ScriptedBackend>(default_script()));
  built->service->set_chat_handler([&](const Json& body) { return sessions.handle(body); });
  auto r = built->service->handle_json("POST", "/chat", {{"session", "z"}, {"message", "what blocks exist"}});
  ASSERT_EQ(r.status, 200);
  EXPECT_TRUE(envelope_valid(r.body));
  EXPECT_EQ(r.body["value"].size(), 4u);
  EXPECT_EQ(r.body["value"][1]["tool_call"]["name"], "chain_structure");
  EXPECT_EQ(built->service->handle_json("POST", "/chat", {{"session", "z"}}).status, 400);
}

TEST(HttpBackend, RequestAndResponseFormat) {
  ChatTurn call{"agent", ""};
  call.tool_call = ToolCall{"list_tools", Json::object()};
  ChatTurn result{"tool", "ok"};
  result.tool_result = Json{{"value", 1}};
  std::vector<ChatTurn> history{{"user", "hi"}, call, result};
  Json tools = Json::array({{{"name", "list_tools"}, {"description", "d"}, {"parameters", {{"type", "object"}}}}});
  Json body = HttpChatBackend::request_body("m", history, tools);
  EXPECT_EQ(body["model"], "m");
  ASSERT_EQ(body["messages"].size(), 3u);
  EXPECT_EQ(body["messages"][1]["role"], "assistant");
  EXPECT_EQ(body["messages"][1]["tool_calls"][0]["function"]["name"], "list_tools");
  EXPECT_EQ(body["messages"][2]["role"], "tool");
  EXPECT_EQ(body["messages"][2]["tool_call_id"], body["messages"][1]["tool_calls"][0]["id"]);
  EXPECT_EQ(body["tools"][0]["function"]["name"], "list_tools");

  auto reply = HttpChatBackend::parse_response(
      {{"choices", {{{"message", {{"tool_calls", {{{"function", {{"name", "x"}, {"arguments", "{\"a\":1}"}}}}}}}}}}}});
  ASSERT_TRUE(reply.tool_call);
  EXPECT_EQ(reply.tool_call->arguments, (Json{{"a", 1}}));
  reply = HttpChatBackend::parse_response({{"choices", {{{"message", {{"content", "hey"}}}}}}});
  EXPECT_EQ(reply.text, "hey");
  EXPECT_THROW(HttpChatBackend::parse_response(Json::object()), Error);
  EXPECT_THROW(HttpChatBackend("https://x/v1", "m"), Error);
}

TEST(HttpBackend, DrivesLoopAgainstLocalServer) {
  auto built = build_named("threshold_config.json");
  httplib::Server fake;
  std::vector<Json> seen;
  fake.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    Json body = Json::parse(req.body);
    seen.push_back(body);
    Json message = body["messages"].back()["role"] == "user"
                       ? Json{{"tool_calls", {{{"id", "c"}, {"type", "function"},
                                               {"function", {{"name", "chain_structure"}, {"arguments", "{}"}}}}}}}
                       : Json{{"content", "structure fetched"}};
    res.set_content(Json{{"choices", {{{"message", message}}}}}.dump(), "application/json");
  });
  const int port = fake.bind_to_any_port("127.0.0.1");
  std::thread th([&] { fake.listen_after_bind(); });
  fake.wait_until_ready();
  HttpChatBackend backend("http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions", "m");
  auto history = run(backend, *built->service, "what is there?");
  fake.stop();
  th.join();
  ASSERT_EQ(history.size(), 4u);
  EXPECT_EQ(history[2].status, 200);
  EXPECT_EQ(history[3].content, "structure fetched");
  ASSERT_EQ(seen.size(), 2u);
  std::set<std::string> offered;
  for (const auto& t : seen[0]["tools"]) offered.insert(t["function"]["name"]);
  EXPECT_TRUE(offered.count("chain_predict"));
  EXPECT_FALSE(offered.count("chat"));
}

}  // namespace
}  // namespace matchlike
