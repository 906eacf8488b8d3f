#pragma once

// Conversational agent over the generated tools: a loop that lets a backend
// call tools through the same dispatch as HTTP clients, a deterministic
// scripted backend, an adapter for chat-completion style HTTP endpoints, and
// per-session history.

#include <cstddef>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "matchlike/api.hpp"

namespace matchlike {

struct ToolCall {
  std::string name;
  Json arguments = Json::object();
};

struct ChatTurn {
  std::string role;  // user | agent | tool
  std::string content;
  std::optional<ToolCall> tool_call;
  std::optional<Json> tool_result;  // response body: envelope or error document
  int status = 0;                   // HTTP status of a tool turn

  Json to_json() const;
  static ChatTurn from_json(const Json& doc);
};

struct BackendReply {
  std::optional<std::string> text;
  std::optional<ToolCall> tool_call;
};

class AgentBackend {
 public:
  virtual ~AgentBackend() = default;
  /// Either final text or one tool call whose name is in `tools`.
  virtual BackendReply complete(const std::vector<ChatTurn>& history, const Json& tools) = 0;
};

struct ConverseConfig {
  int max_tool_calls = 4;
};

/// Tool schemas offered to agents: every route except chat itself.
Json agent_tools(const Service& service);

/// Appends the user message, runs the tool loop and ends with an agent text
/// turn. Unknown tools come back to the backend as tool-error turns; when the
/// budget is exhausted the loop is finalized with a fixed message.
void converse(AgentBackend& backend, const Service& service, std::vector<ChatTurn>& history,
              const std::string& message, const ConverseConfig& config);

// ---------------------------------------------------------------------------

struct ScriptEntry {
  std::string pattern;  // ECMAScript regex, case-insensitive
  /// Tool calls issued in order; string arguments "$1".."$9" take the capture
  /// group, parsed as JSON when possible.
  std::vector<ToolCall> calls;
  /// Final text. Without tool calls: the reply itself ("$n" substituted).
  /// With tool calls: used when `summarize` is empty.
  std::string text;
  /// Builds the answer from the tool turns of this exchange.
  std::function<std::string(const std::vector<ChatTurn>& tool_turns)> summarize;
};

class ScriptedBackend : public AgentBackend {
 public:
  explicit ScriptedBackend(std::vector<ScriptEntry> script,
                           std::string fallback = "Sorry, I have no tool for that request.");

  BackendReply complete(const std::vector<ChatTurn>& history, const Json& tools) override;

 private:
  struct Compiled {
    ScriptEntry entry;
    std::regex re;
  };
  std::vector<Compiled> script_;
  std::string fallback_;
};

/// Lists the block ids of a chain structure document.
std::vector<std::string> structure_block_ids(const Json& structure);

/// A small script covering chain structure, tool listing, chain prediction
/// ("predict ... income 5000") and emergency stop.
std::vector<ScriptEntry> default_script();

// ---------------------------------------------------------------------------

/// Speaks the common chat-completion wire format with function tools:
/// POST {model, messages, tools}; reads choices[0].message.{content,tool_calls}.
class HttpChatBackend : public AgentBackend {
 public:
  /// `url` like http://host:port/v1/chat/completions.
  HttpChatBackend(std::string url, std::string model, std::string api_key = {});

  BackendReply complete(const std::vector<ChatTurn>& history, const Json& tools) override;

  static Json request_body(const std::string& model, const std::vector<ChatTurn>& history,
                           const Json& tools);
  static BackendReply parse_response(const Json& body);

 private:
  std::string base_;
  std::string path_;
  std::string model_;
  std::string api_key_;
};

// ---------------------------------------------------------------------------

/// In-memory conversations keyed by session id, least recently used evicted.
class ChatSessions {
 public:
  static constexpr std::size_t kCapacity = 100;

  ChatSessions(const Service& service, std::shared_ptr<AgentBackend> backend, ConverseConfig config = {});

  /// Runs one turn and returns the session's full history as JSON.
  Json chat(const std::string& session, const std::string& message);
  /// Handler for the /chat route: {"session", "message"}.
  Json handle(const Json& body);

  std::size_t size() const;
  bool contains(const std::string& session) const;

 private:
  struct Session {
    std::mutex mutex;
    std::vector<ChatTurn> history;
  };
  std::shared_ptr<Session> acquire(const std::string& id);

  const Service& service_;
  std::shared_ptr<AgentBackend> backend_;
  ConverseConfig config_;
  mutable std::mutex mutex_;
  std::list<std::string> order_;  // front: most recent
  std::map<std::string, std::pair<std::shared_ptr<Session>, std::list<std::string>::iterator>> sessions_;
};

}  // namespace matchlike
