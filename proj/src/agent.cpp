#include "matchlike/agent.hpp"

#include <algorithm>

#include "httplib.h"

namespace matchlike {

Json ChatTurn::to_json() const {
  Json doc = {{"role", role}, {"content", content}};
  if (tool_call) doc["tool_call"] = {{"name", tool_call->name}, {"arguments", tool_call->arguments}};
  if (tool_result) {
    doc["tool_result"] = *tool_result;
    doc["status"] = status;
  }
  return doc;
}

ChatTurn ChatTurn::from_json(const Json& doc) {
  ChatTurn t;
  t.role = doc.value("role", "");
  t.content = doc.value("content", "");
  if (doc.contains("tool_call")) {
    t.tool_call = ToolCall{doc["tool_call"].value("name", ""),
                           doc["tool_call"].value("arguments", Json::object())};
  }
  if (doc.contains("tool_result")) {
    t.tool_result = doc["tool_result"];
    t.status = doc.value("status", 0);
  }
  return t;
}

Json agent_tools(const Service& service) {
  Json tools = Json::array();
  for (const auto& t : service.tool_schemas()) {
    if (t["name"] != "chat") tools.push_back(t);
  }
  return tools;
}

void converse(AgentBackend& backend, const Service& service, std::vector<ChatTurn>& history,
              const std::string& message, const ConverseConfig& config) {
  const Json tools = agent_tools(service);
  history.push_back({"user", message});
  int calls = 0;
  for (;;) {
    BackendReply reply = backend.complete(history, tools);
    if (!reply.tool_call) {
      history.push_back({"agent", reply.text.value_or("")});
      return;
    }
    if (calls >= config.max_tool_calls) {
      history.push_back({"agent", "Stopped: the tool call budget of " +
                                      std::to_string(config.max_tool_calls) +
                                      " calls for this turn is exhausted."});
      return;
    }
    ++calls;
    const ToolCall call = *reply.tool_call;
    ChatTurn request{"agent", ""};
    request.tool_call = call;
    history.push_back(request);

    ChatTurn result{"tool", ""};
    const bool offered = std::any_of(tools.begin(), tools.end(),
                                     [&](const Json& t) { return t["name"] == call.name; });
    if (!offered) {
      Error e(ErrorCode::UnknownTool, "unknown tool '" + call.name + "'", call.name);
      result.tool_result = error_document(e);
      result.status = http_status(e.code());
      result.content = e.what();
    } else {
      ApiResponse r = service.call_tool(call.name, call.arguments);
      result.tool_result = r.body;
      result.status = r.status;
      result.content = r.status == 200 ? call.name + " succeeded"
                                       : call.name + " failed: " +
                                             r.body["error"].value("message", std::string("error"));
    }
    history.push_back(std::move(result));
  }
}

// ---------------------------------------------------------------------------

namespace {

Json substitute(const Json& value, const std::smatch& m) {
  if (value.is_string()) {
    const std::string s = value.get<std::string>();
    if (s.size() == 2 && s[0] == '$' && s[1] >= '1' && s[1] <= '9') {
      const auto group = static_cast<std::size_t>(s[1] - '0');
      const std::string captured = group < m.size() ? m[group].str() : "";
      Json parsed = Json::parse(captured, nullptr, false);
      return parsed.is_discarded() ? Json(captured) : parsed;
    }
    return value;
  }
  if (value.is_object() || value.is_array()) {
    Json out = value;
    for (auto& [key, v] : value.items()) {
      if (value.is_object()) {
        out[key] = substitute(v, m);
      } else {
        out[std::stoul(key)] = substitute(v, m);
      }
    }
    return out;
  }
  return value;
}

std::string substitute_text(const std::string& text, const std::smatch& m) {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '$' && i + 1 < text.size() && text[i + 1] >= '1' && text[i + 1] <= '9') {
      const auto group = static_cast<std::size_t>(text[i + 1] - '0');
      if (group < m.size()) out += m[group].str();
      ++i;
    } else {
      out.push_back(text[i]);
    }
  }
  return out;
}

void collect_ids(const Json& node, std::vector<std::string>& out) {
  if (!node.is_object()) return;
  if (node.value("kind", "") == "block") {
    out.push_back(node.value("id", ""));
    return;
  }
  for (const char* key : {"children", "branches"}) {
    if (node.contains(key)) {
      for (const auto& child : node[key]) collect_ids(child, out);
    }
  }
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += items[i];
  }
  return out;
}

std::string failure_text(const ChatTurn& turn) {
  if (turn.tool_result && turn.tool_result->contains("error")) {
    return "The call failed: " + (*turn.tool_result)["error"].value("message", std::string("error")) + ".";
  }
  return "The call failed.";
}

}  // namespace

ScriptedBackend::ScriptedBackend(std::vector<ScriptEntry> script, std::string fallback)
    : fallback_(std::move(fallback)) {
  if (script.empty()) throw Error(ErrorCode::InvalidConfig, "script must not be empty");
  for (auto& e : script) {
    std::regex re(e.pattern, std::regex::ECMAScript | std::regex::icase);
    script_.push_back({std::move(e), std::move(re)});
  }
}

BackendReply ScriptedBackend::complete(const std::vector<ChatTurn>& history, const Json&) {
  auto user = std::find_if(history.rbegin(), history.rend(),
                           [](const ChatTurn& t) { return t.role == "user"; });
  if (user == history.rend()) return {fallback_, std::nullopt};
  std::vector<ChatTurn> tool_turns;
  for (auto it = user.base(); it != history.end(); ++it) {
    if (it->role == "tool") tool_turns.push_back(*it);
  }
  for (const auto& c : script_) {
    std::smatch m;
    if (!std::regex_search(user->content, m, c.re)) continue;
    if (tool_turns.size() < c.entry.calls.size()) {
      const ToolCall& next = c.entry.calls[tool_turns.size()];
      return {std::nullopt, ToolCall{next.name, substitute(next.arguments, m)}};
    }
    if (c.entry.summarize) return {c.entry.summarize(tool_turns), std::nullopt};
    return {substitute_text(c.entry.text, m), std::nullopt};
  }
  return {fallback_, std::nullopt};
}

std::vector<std::string> structure_block_ids(const Json& structure) {
  std::vector<std::string> ids;
  collect_ids(structure, ids);
  return ids;
}

std::vector<ScriptEntry> default_script() {
  std::vector<ScriptEntry> script;
  script.push_back({R"(\b(what|which|list)\b.*\bblocks?\b)",
                    {{"chain_structure", Json::object()}},
                    "",
                    [](const std::vector<ChatTurn>& turns) {
                      const ChatTurn& t = turns.back();
                      if (t.status != 200) return failure_text(t);
                      return "The chain has these blocks: " +
                             join(structure_block_ids((*t.tool_result)["value"])) + ".";
                    }});
  script.push_back({R"(\btools\b)",
                    {{"list_tools", Json::object()}},
                    "",
                    [](const std::vector<ChatTurn>& turns) {
                      const ChatTurn& t = turns.back();
                      if (t.status != 200) return failure_text(t);
                      std::vector<std::string> names;
                      for (const auto& tool : (*t.tool_result)["value"]) names.push_back(tool["name"]);
                      return "Available tools: " + join(names) + ".";
                    }});
  script.push_back({R"(predict\b.*\bincome\D*?(-?\d+(?:\.\d+)?))",
                    {{"chain_predict", {{"input", {{"income", "$1"}}}}}},
                    "",
                    [](const std::vector<ChatTurn>& turns) {
                      const ChatTurn& t = turns.back();
                      if (t.status == 422) {
                        return "The input was rejected: " +
                               (*t.tool_result)["value"].value("message", std::string()) + ".";
                      }
                      if (t.status != 200) return failure_text(t);
                      const Json& v = (*t.tool_result)["value"];
                      if (v.is_object() && v.contains("label")) {
                        return "The chain predicts '" + v["label"].get<std::string>() + "'.";
                      }
                      return "The chain returned " + dump_decimal(v) + ".";
                    }});
  script.push_back({R"(\b(shut ?down|emergency stop)\b)",
                    {{"shutdown_trip", {{"reason", "requested in chat"}}}},
                    "The pipeline is stopped; predictions are blocked until reset.",
                    {}});
  script.push_back({R"(\b(reset|resume)\b)",
                    {{"shutdown_reset", Json::object()}},
                    "The emergency stop is lifted.",
                    {}});
  return script;
}

// ---------------------------------------------------------------------------

HttpChatBackend::HttpChatBackend(std::string url, std::string model, std::string api_key)
    : model_(std::move(model)), api_key_(std::move(api_key)) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorCode::InvalidConfig, "agent url needs a scheme", url);
  if (url.compare(0, scheme, "http") != 0) {
    throw Error(ErrorCode::InvalidConfig, "only plain http agent endpoints are supported", url);
  }
  const auto slash = url.find('/', scheme + 3);
  base_ = url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url.substr(slash);
}

Json HttpChatBackend::request_body(const std::string& model, const std::vector<ChatTurn>& history,
                                   const Json& tools) {
  Json messages = Json::array();
  std::size_t call_id = 0;
  for (const auto& t : history) {
    if (t.role == "user") {
      messages.push_back({{"role", "user"}, {"content", t.content}});
    } else if (t.role == "agent" && t.tool_call) {
      ++call_id;
      messages.push_back(
          {{"role", "assistant"},
           {"content", nullptr},
           {"tool_calls",
            Json::array({{{"id", "call_" + std::to_string(call_id)},
                          {"type", "function"},
                          {"function",
                           {{"name", t.tool_call->name}, {"arguments", t.tool_call->arguments.dump()}}}}})}});
    } else if (t.role == "agent") {
      messages.push_back({{"role", "assistant"}, {"content", t.content}});
    } else if (t.role == "tool") {
      messages.push_back({{"role", "tool"},
                          {"tool_call_id", "call_" + std::to_string(call_id)},
                          {"content", t.tool_result ? dump_decimal(*t.tool_result) : t.content}});
    }
  }
  Json functions = Json::array();
  for (const auto& tool : tools) {
    functions.push_back({{"type", "function"},
                         {"function",
                          {{"name", tool["name"]},
                           {"description", tool["description"]},
                           {"parameters", tool["parameters"]}}}});
  }
  return {{"model", model}, {"messages", messages}, {"tools", functions}};
}

BackendReply HttpChatBackend::parse_response(const Json& body) {
  if (!body.is_object() || !body.contains("choices") || body["choices"].empty()) {
    throw Error(ErrorCode::InvalidConfig, "agent response has no choices");
  }
  const Json& message = body["choices"][0].value("message", Json::object());
  if (message.contains("tool_calls") && message["tool_calls"].is_array() && !message["tool_calls"].empty()) {
    const Json& fn = message["tool_calls"][0].value("function", Json::object());
    ToolCall call;
    call.name = fn.value("name", "");
    const Json& raw = fn.contains("arguments") ? fn["arguments"] : Json();
    if (raw.is_string()) {
      call.arguments = Json::parse(raw.get<std::string>(), nullptr, false);
      if (call.arguments.is_discarded()) call.arguments = Json::object();
    } else if (raw.is_object()) {
      call.arguments = raw;
    }
    return {std::nullopt, call};
  }
  if (message.contains("content") && message["content"].is_string()) {
    return {message["content"].get<std::string>(), std::nullopt};
  }
  return {std::string(), std::nullopt};
}

BackendReply HttpChatBackend::complete(const std::vector<ChatTurn>& history, const Json& tools) {
  httplib::Client client(base_);
  client.set_read_timeout(120, 0);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(path_, headers, request_body(model_, history, tools).dump(), "application/json");
  if (!res) throw Error(ErrorCode::InvalidConfig, "agent endpoint unreachable: " + base_ + path_);
  if (res->status != 200) {
    throw Error(ErrorCode::InvalidConfig, "agent endpoint returned HTTP " + std::to_string(res->status));
  }
  Json body = Json::parse(res->body, nullptr, false);
  if (body.is_discarded()) throw Error(ErrorCode::InvalidConfig, "agent endpoint returned invalid JSON");
  return parse_response(body);
}

// ---------------------------------------------------------------------------

ChatSessions::ChatSessions(const Service& service, std::shared_ptr<AgentBackend> backend,
                           ConverseConfig config)
    : service_(service), backend_(std::move(backend)), config_(config) {}

std::shared_ptr<ChatSessions::Session> ChatSessions::acquire(const std::string& id) {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it != sessions_.end()) {
    order_.splice(order_.begin(), order_, it->second.second);
    return it->second.first;
  }
  if (sessions_.size() >= kCapacity) {
    sessions_.erase(order_.back());
    order_.pop_back();
  }
  order_.push_front(id);
  auto session = std::make_shared<Session>();
  sessions_.emplace(id, std::make_pair(session, order_.begin()));
  return session;
}

Json ChatSessions::chat(const std::string& session, const std::string& message) {
  auto s = acquire(session);
  std::lock_guard lock(s->mutex);
  converse(*backend_, service_, s->history, message, config_);
  Json out = Json::array();
  for (const auto& t : s->history) out.push_back(t.to_json());
  return out;
}

Json ChatSessions::handle(const Json& body) {
  return chat(body.value("session", std::string("default")), body.at("message").get<std::string>());
}

std::size_t ChatSessions::size() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

bool ChatSessions::contains(const std::string& session) const {
  std::lock_guard lock(mutex_);
  return sessions_.count(session) > 0;
}

}  // namespace matchlike
