#pragma once

// REST surface generated from a pipeline: one route per block method, the
// special chain/explain/tools/chat/shutdown routes, the response envelope and
// the tool schemas handed to agents.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "matchlike/blocks.hpp"
#include "matchlike/error.hpp"
#include "matchlike/explainers.hpp"
#include "matchlike/pipeline.hpp"

namespace matchlike {

struct Route {
  std::string verb;
  std::string path;
  std::string block_id;  // empty for special routes
  std::string method;    // method name, or the special handler name
  std::string tool_name;
  std::string description;
  Json parameters;  // {"type": "object", "properties": ..., "required": [...]}
};

std::string_view verb_for(MethodRole role);

/// Deterministic for equal pipelines: block routes in chain order, then the
/// special routes.
std::vector<Route> build_routes(const RunnableNode& node);

inline const std::vector<std::string> kExplainKinds = {"lime", "shap", "whatif",
                                                        "counterfactual", "prototypes", "examples"};

Json envelope(const TypedValue& value, bool updated, Json events);
/// True when `doc` has exactly the envelope keys and the payload matches its tag.
bool envelope_valid(const Json& doc);

int http_status(ErrorCode code);
Json error_document(const Error& error);

struct ApiResponse {
  int status = 200;
  Json body;
};

/// What the explain routes need beyond the pipeline itself.
struct ExplainContext {
  std::shared_ptr<DatasetState> dataset;
  std::map<std::string, std::shared_ptr<ModelState>> models;  // by block id
  std::uint64_t seed = 0;
};

class Service {
 public:
  using ChatHandler = std::function<Json(const Json& body)>;

  Service(std::shared_ptr<const Pipeline> pipeline, ExplainContext explain);

  const Pipeline& pipeline() const { return *pipeline_; }
  const std::vector<Route>& routes() const { return routes_; }
  const ExplainContext& explain_context() const { return explain_; }

  /// One schema per route: {name, description, parameters, route: {verb, path}}.
  Json tool_schemas() const;
  const Route* find_tool(std::string_view name) const;

  /// `query` holds GET parameters; values that parse as JSON are taken as JSON.
  ApiResponse handle(std::string_view verb, std::string_view path, std::string_view body,
                     const std::multimap<std::string, std::string>& query = {}) const;
  ApiResponse handle_json(std::string_view verb, std::string_view path, const Json& args) const;
  /// Dispatches through the tool's route. Throws UnknownTool.
  ApiResponse call_tool(std::string_view name, const Json& arguments) const;

  void set_chat_handler(ChatHandler handler) { chat_ = std::move(handler); }

  /// "chain" or a model block id. The chain box runs the full pipeline in dry
  /// run mode and reads its final decision record.
  BlackBox black_box(std::string_view target) const;

 private:
  TypedValue run_special(const Route& route, const Json& args, bool& updated, Json& events) const;
  TypedValue run_explain(std::string_view kind, const Json& args) const;

  std::shared_ptr<const Pipeline> pipeline_;
  ExplainContext explain_;
  std::vector<Route> routes_;
  std::map<std::pair<std::string, std::string>, std::size_t> index_;
  ChatHandler chat_;
};

/// Thin cpp-httplib front end over a Service.
class HttpServer {
 public:
  explicit HttpServer(const Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  bool listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace matchlike
