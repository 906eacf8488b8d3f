#include "matchlike/api.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <shared_mutex>
#include <thread>

#include "httplib.h"

namespace matchlike {

std::string_view verb_for(MethodRole role) {
  switch (role) {
    case MethodRole::Create: return "POST";
    case MethodRole::Read: return "GET";
    case MethodRole::Update: return "PUT";
    case MethodRole::Delete: return "DELETE";
    case MethodRole::Predict:
    case MethodRole::Transform: return "POST";
  }
  return "POST";
}

namespace {

Json field_schema(const Json& column) {
  if (column.value("kind", "") == "categorical") {
    return {{"type", "string"}, {"enum", column.value("levels", Json::array())}};
  }
  return {{"type", "number"}};
}

Json param_schema(const Param& p) {
  Json doc;
  switch (p.type) {
    case SemanticType::Number: doc["type"] = "number"; break;
    case SemanticType::Integer: doc["type"] = "integer"; break;
    case SemanticType::Text: doc["type"] = "string"; break;
    case SemanticType::Boolean: doc["type"] = "boolean"; break;
    case SemanticType::Row: {
      doc["type"] = "object";
      if (p.fields.is_object() && !p.fields.empty()) {
        Json props = Json::object();
        for (const auto& [name, col] : p.fields.items()) props[name] = field_schema(col);
        doc["properties"] = props;
      }
      break;
    }
    case SemanticType::Table: doc["type"] = "array"; break;
  }
  if (!p.description.empty()) doc["description"] = p.description;
  if (p.default_value) doc["default"] = *p.default_value;
  return doc;
}

Json object_schema(const std::vector<Param>& params) {
  Json props = Json::object();
  Json required = Json::array();
  for (const auto& p : params) {
    props[p.name] = param_schema(p);
    if (!p.default_value) required.push_back(p.name);
  }
  return {{"type", "object"}, {"properties", props}, {"required", required}};
}

Param special_param(std::string name, SemanticType type, std::string description,
                    std::optional<Json> fallback = std::nullopt) {
  Param p{std::move(name), type};
  p.description = std::move(description);
  p.default_value = std::move(fallback);
  return p;
}

// Feature fields of the first model block in the chain, for the row-typed
// parameters of the chain routes.
Json chain_row_fields(const RunnableNode& node) {
  for (const auto& block : node.flatten()) {
    const Method* m = block->predict_method();
    if (block->kind() == "model" && m && !m->descriptor.params.empty()) {
      return m->descriptor.params.front().fields;
    }
  }
  return Json::object();
}

Route special_route(std::string verb, std::string path, std::string handler, std::string tool,
                    std::string description, const std::vector<Param>& params) {
  Route r;
  r.verb = std::move(verb);
  r.path = std::move(path);
  r.method = std::move(handler);
  r.tool_name = std::move(tool);
  r.description = std::move(description);
  r.parameters = object_schema(params);
  return r;
}

std::string explain_description(const std::string& kind) {
  if (kind == "lime") return "LIME feature attribution for an instance (why / why not)";
  if (kind == "shap") return "Kernel SHAP feature attribution for an instance (why / why not)";
  if (kind == "whatif") return "prediction after editing feature values of an instance (what if)";
  if (kind == "counterfactual") return "minimal input changes that reach a target label (how to)";
  if (kind == "prototypes") return "MMD-critic prototypes and criticisms of the training data (when)";
  return "most similar training rows in the model representation space (what else)";
}

}  // namespace

std::vector<Route> build_routes(const RunnableNode& node) {
  std::vector<Route> routes;
  std::set<std::string> names;
  auto unique_name = [&](std::string name) {
    std::string candidate = name;
    for (int n = 2; names.count(candidate); ++n) candidate = name + "_" + std::to_string(n);
    names.insert(candidate);
    return candidate;
  };

  for (const auto& block : node.flatten()) {
    for (const auto& m : block->methods()) {
      const auto& d = m.descriptor;
      Route r;
      r.verb = std::string(verb_for(d.role));
      r.path = "/blocks/" + block->id() + "/" + d.name;
      r.block_id = block->id();
      r.method = d.name;
      r.tool_name = unique_name(block->id() + "_" + d.name);
      r.description = block->kind() + " block '" + block->display_name() + "': " +
                      (d.description.empty()
                           ? std::string(to_string(d.role)) + " method " + d.name
                           : d.description);
      r.parameters = object_schema(d.params);
      routes.push_back(std::move(r));
    }
  }

  Param input = special_param("input", SemanticType::Row, "feature values of the instance");
  input.fields = chain_row_fields(node);
  auto take = [&](Route r) {
    r.tool_name = unique_name(r.tool_name);
    routes.push_back(std::move(r));
  };
  take(special_route("GET", "/chain", "chain_structure", "chain_structure",
                     "structure of the whole chain: blocks, methods and composition", {}));
  take(special_route("POST", "/chain/predict", "chain_predict", "chain_predict",
                     "run a prediction through the whole chain including control blocks", {input}));
  for (const auto& kind : kExplainKinds) {
    Param target = special_param("target", SemanticType::Text,
                                 "\"chain\" or the id of a model block", Json("chain"));
    Param instance = special_param("instance", SemanticType::Row, "feature values to explain",
                                   kind == "prototypes" ? std::optional<Json>(Json::object())
                                                        : std::nullopt);
    instance.fields = input.fields;
    Param params = special_param("params", SemanticType::Row, "explainer settings", Json::object());
    take(special_route("POST", "/explain/" + kind, "explain_" + kind, "explain_" + kind,
                       explain_description(kind), {target, instance, params}));
  }
  take(special_route("GET", "/tools", "tools", "list_tools", "generated tool schemas", {}));
  take(special_route("POST", "/chat", "chat", "chat", "send a message to the conversational agent",
                     {special_param("session", SemanticType::Text, "conversation id", Json("default")),
                      special_param("message", SemanticType::Text, "user message")}));
  take(special_route("POST", "/shutdown", "shutdown_trip", "shutdown_trip",
                     "emergency stop: block every prediction until reset",
                     {special_param("reason", SemanticType::Text, "why the pipeline stops",
                                    Json("manual"))}));
  take(special_route("DELETE", "/shutdown", "shutdown_reset", "shutdown_reset",
                     "lift the emergency stop", {}));
  return routes;
}

Json envelope(const TypedValue& value, bool updated, Json events) {
  if (!events.is_array()) events = Json::array();
  return {{"value", value.payload},
          {"data_type", std::string(to_string(value.data_type))},
          {"updated", updated},
          {"events", std::move(events)}};
}

bool envelope_valid(const Json& doc) {
  if (!doc.is_object() || doc.size() != 4) return false;
  for (const char* key : {"value", "data_type", "updated", "events"}) {
    if (!doc.contains(key)) return false;
  }
  if (!doc["data_type"].is_string() || !doc["updated"].is_boolean() || !doc["events"].is_array()) {
    return false;
  }
  auto type = data_type_from_string(doc["data_type"].get<std::string>());
  if (!type || !payload_matches(*type, doc["value"])) return false;
  return std::all_of(doc["events"].begin(), doc["events"].end(),
                     [](const Json& e) { return e.is_object() && e.contains("type"); });
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownRoute:
    case ErrorCode::UnknownBlock:
    case ErrorCode::UnknownMethod:
    case ErrorCode::UnknownTool:
    case ErrorCode::UnknownBlockId: return 404;
    case ErrorCode::ShutdownActive:
    case ErrorCode::NoPendingCorrections:
    case ErrorCode::EmptyDataset:
    case ErrorCode::SingleClassDataset:
    case ErrorCode::AttributionUnavailable: return 409;
    case ErrorCode::RejectedByFilter:
    case ErrorCode::NoBranchMatched: return 422;
    default: return 400;
  }
}

Json error_document(const Error& error) {
  Json doc = {{"code", std::string(to_string(error.code()))}, {"message", error.what()}};
  if (!error.detail().empty()) doc["detail"] = error.detail();
  if (error.position() != Error::npos) doc["position"] = error.position();
  return {{"error", doc}};
}

// ---------------------------------------------------------------------------

Service::Service(std::shared_ptr<const Pipeline> pipeline, ExplainContext explain)
    : pipeline_(std::move(pipeline)), explain_(std::move(explain)) {
  routes_ = build_routes(pipeline_->root());
  for (std::size_t i = 0; i < routes_.size(); ++i) index_[{routes_[i].verb, routes_[i].path}] = i;
}

Json Service::tool_schemas() const {
  Json tools = Json::array();
  for (const auto& r : routes_) {
    tools.push_back({{"name", r.tool_name},
                     {"description", r.description},
                     {"parameters", r.parameters},
                     {"route", {{"verb", r.verb}, {"path", r.path}}}});
  }
  return tools;
}

const Route* Service::find_tool(std::string_view name) const {
  for (const auto& r : routes_) {
    if (r.tool_name == name) return &r;
  }
  return nullptr;
}

ApiResponse Service::handle(std::string_view verb, std::string_view path, std::string_view body,
                            const std::multimap<std::string, std::string>& query) const {
  Json args = Json::object();
  for (const auto& [key, value] : query) {
    Json parsed = Json::parse(value, nullptr, false);
    args[key] = parsed.is_discarded() ? Json(value) : parsed;
  }
  if (!body.empty() && body.find_first_not_of(" \t\r\n") != std::string_view::npos) {
    Json parsed = Json::parse(body, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) {
      Error e(ErrorCode::TypeMismatch, "request body must be a JSON object", "body");
      return {400, error_document(e)};
    }
    for (auto& [key, value] : parsed.items()) args[key] = value;
  }
  return handle_json(verb, path, args);
}

ApiResponse Service::handle_json(std::string_view verb, std::string_view path,
                                 const Json& args) const {
  Json events = Json::array();
  try {
    auto it = index_.find({std::string(verb), std::string(path)});
    if (it == index_.end()) {
      throw Error(ErrorCode::UnknownRoute,
                  "no route " + std::string(verb) + " " + std::string(path), std::string(path));
    }
    if (!args.is_object()) throw Error(ErrorCode::TypeMismatch, "arguments must be an object", "body");
    const Route& route = routes_[it->second];
    TypedValue value;
    bool updated = false;
    if (!route.block_id.empty()) {
      auto r = pipeline_->invoke(route.block_id, route.method, args);
      value = std::move(r.result.value);
      updated = r.result.updated;
      events = std::move(r.events);
      if (r.report && (!r.report->visited.empty() || !r.report->errors.empty())) {
        Json doc = r.report->to_json();
        doc["type"] = "update_propagated";
        events.push_back(std::move(doc));
      }
    } else {
      value = run_special(route, args, updated, events);
    }
    value.validate();
    return {200, envelope(value, updated, std::move(events))};
  } catch (const Error& e) {
    if (e.code() == ErrorCode::RejectedByFilter) {
      Json body = envelope(TypedValue::structure({{"rejected", true}, {"message", e.what()}}), false,
                           std::move(events));
      body.update(error_document(e));
      return {422, std::move(body)};
    }
    return {http_status(e.code()), error_document(e)};
  } catch (const std::exception& e) {
    return {500, {{"error", {{"code", "Internal"}, {"message", e.what()}}}}};
  }
}

ApiResponse Service::call_tool(std::string_view name, const Json& arguments) const {
  const Route* route = find_tool(name);
  if (!route) {
    throw Error(ErrorCode::UnknownTool, "unknown tool '" + std::string(name) + "'", std::string(name));
  }
  return handle_json(route->verb, route->path, arguments.is_null() ? Json::object() : arguments);
}

namespace {

void allow_only(const Json& args, std::initializer_list<std::string_view> names) {
  for (const auto& [key, value] : args.items()) {
    if (std::find(names.begin(), names.end(), key) == names.end()) {
      throw Error(ErrorCode::TypeMismatch, "unknown parameter '" + key + "'", key);
    }
  }
}

const Json& require_object(const Json& args, const std::string& name) {
  auto it = args.find(name);
  if (it == args.end() || !it->is_object()) {
    throw Error(ErrorCode::TypeMismatch, "parameter '" + name + "' must be an object", name);
  }
  return *it;
}

std::string text_arg(const Json& args, const std::string& name, std::string fallback) {
  auto it = args.find(name);
  if (it == args.end() || it->is_null()) return fallback;
  if (!it->is_string()) throw Error(ErrorCode::TypeMismatch, "parameter '" + name + "' must be text", name);
  return it->get<std::string>();
}

double number_arg(const Json& params, const std::string& name, double fallback) {
  auto it = params.find(name);
  if (it == params.end() || it->is_null()) return fallback;
  if (!it->is_number()) {
    throw Error(ErrorCode::TypeMismatch, "parameter '" + name + "' must be a number", name);
  }
  return it->get<double>();
}

std::size_t count_arg(const Json& params, const std::string& name, std::size_t fallback) {
  const double v = number_arg(params, name, static_cast<double>(fallback));
  if (v < 0 || v != std::floor(v)) {
    throw Error(ErrorCode::TypeMismatch, "parameter '" + name + "' must be a non-negative integer", name);
  }
  return static_cast<std::size_t>(v);
}

bool bool_arg(const Json& params, const std::string& name, bool fallback) {
  auto it = params.find(name);
  if (it == params.end() || it->is_null()) return fallback;
  if (!it->is_boolean()) {
    throw Error(ErrorCode::TypeMismatch, "parameter '" + name + "' must be a boolean", name);
  }
  return it->get<bool>();
}

std::size_t class_index(const BlackBox& box, const std::string& label) {
  auto it = std::find(box.classes.begin(), box.classes.end(), label);
  if (it == box.classes.end()) throw Error(ErrorCode::UnknownLabel, "unknown label '" + label + "'", label);
  return static_cast<std::size_t>(it - box.classes.begin());
}

}  // namespace

TypedValue Service::run_special(const Route& route, const Json& args, bool& updated,
                                Json& events) const {
  const std::string& name = route.method;
  if (name == "chain_structure") {
    allow_only(args, {});
    return TypedValue::structure(serialize_structure(pipeline_->root()));
  }
  if (name == "tools") {
    allow_only(args, {});
    return {DataType::Table, tool_schemas()};
  }
  if (name == "chain_predict") {
    allow_only(args, {"input"});
    const Json& input = require_object(args, "input");
    std::shared_lock lock(pipeline_->mutex());
    CallContext ctx;
    ctx.shutdown = &pipeline_->shutdown();
    try {
      TypedValue out = run_predict(pipeline_->root(), TypedValue::row(input), ctx);
      events = std::move(ctx.events);
      return out;
    } catch (const Error&) {
      events = std::move(ctx.events);
      throw;
    }
  }
  if (name.rfind("explain_", 0) == 0) {
    allow_only(args, {"target", "instance", "params"});
    return run_explain(name.substr(8), args);
  }
  if (name == "chat") {
    allow_only(args, {"session", "message"});
    if (!chat_) throw Error(ErrorCode::UnknownRoute, "no conversational agent configured", "/chat");
    text_arg(args, "session", "default");
    if (!args.contains("message") || !args["message"].is_string()) {
      throw Error(ErrorCode::TypeMismatch, "parameter 'message' must be text", "message");
    }
    return {DataType::Table, chat_(args)};
  }
  if (name == "shutdown_trip") {
    allow_only(args, {"reason"});
    const std::string reason = text_arg(args, "reason", "manual");
    pipeline_->shutdown().trip(reason);
    updated = true;
    events.push_back({{"type", "shutdown"}, {"reason", reason}});
    return TypedValue::structure(pipeline_->shutdown().to_json());
  }
  if (name == "shutdown_reset") {
    allow_only(args, {});
    std::unique_lock lock(pipeline_->mutex());
    pipeline_->shutdown().reset();
    updated = true;
    events.push_back({{"type", "shutdown_reset"}});
    return TypedValue::structure(pipeline_->shutdown().to_json());
  }
  throw Error(ErrorCode::UnknownRoute, "unhandled special route '" + name + "'", route.path);
}

BlackBox Service::black_box(std::string_view target) const {
  if (target != "chain") {
    if (!pipeline_->find_block(target)) {
      throw Error(ErrorCode::UnknownBlock, "unknown block '" + std::string(target) + "'",
                  std::string(target));
    }
    auto it = explain_.models.find(std::string(target));
    if (it == explain_.models.end()) {
      throw Error(ErrorCode::TargetNotPredictive,
                  "block '" + std::string(target) + "' is not a model", std::string(target));
    }
    return model_black_box(it->second->current());
  }
  std::shared_ptr<const Model> first;
  for (const auto& block : pipeline_->root().flatten()) {
    auto it = explain_.models.find(block->id());
    if (it != explain_.models.end()) {
      first = it->second->current();
      break;
    }
  }
  if (!first) throw Error(ErrorCode::TargetNotPredictive, "chain contains no model block", "chain");
  BlackBox box;
  box.encoder = first->encoder;
  box.classes = first->classes;
  auto pipeline = pipeline_;
  const Encoder encoder = first->encoder;
  const auto classes = first->classes;
  box.predict = [pipeline, encoder, classes](const FeatureRow& row) {
    Outcome o;
    try {
      auto r = pipeline->predict_unlocked(TypedValue::row(encoder.row_to_json(row)), true);
      o = outcome_from_decision(r.value.payload, classes);
      o.events = std::move(r.events);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::RejectedByFilter) throw;
      o.rejected = e.what();
      o.decision = Json();
    }
    return o;
  };
  return box;
}

TypedValue Service::run_explain(std::string_view kind, const Json& args) const {
  const std::string target = text_arg(args, "target", "chain");
  Json params = Json::object();
  if (args.contains("params") && !args["params"].is_null()) params = require_object(args, "params");
  std::shared_lock lock(pipeline_->mutex());
  if (pipeline_->shutdown().active()) {
    throw Error(ErrorCode::ShutdownActive,
                "pipeline is shut down: " + pipeline_->shutdown().snapshot().reason);
  }
  const std::uint64_t seed = static_cast<std::uint64_t>(
      number_arg(params, "seed", static_cast<double>(explain_.seed)));

  if (kind == "prototypes") {
    allow_only(params, {"k_prototypes", "k_criticisms", "bandwidth", "label", "seed"});
    if (!explain_.dataset) throw Error(ErrorCode::EmptyDataset, "no training dataset");
    PrototypeConfig config;
    config.k_prototypes = count_arg(params, "k_prototypes", config.k_prototypes);
    config.k_criticisms = count_arg(params, "k_criticisms", config.k_criticisms);
    config.bandwidth = number_arg(params, "bandwidth", 0);
    if (params.contains("label")) config.label = text_arg(params, "label", "");
    return TypedValue::structure(explain_prototypes(explain_.dataset->data, config).to_json());
  }

  BlackBox box = black_box(target);
  const FeatureRow instance = box.encoder.row_from_json(require_object(args, "instance"));

  if (kind == "lime" || kind == "shap") {
    const Outcome base = box.predict(instance);
    std::size_t target_class = base.rejected ? 0 : class_index(box, base.label);
    if (params.contains("class")) target_class = class_index(box, text_arg(params, "class", ""));
    if (kind == "lime") {
      allow_only(params, {"n_samples", "kernel_width", "seed", "class"});
      LimeConfig config;
      config.n_samples = static_cast<int>(count_arg(params, "n_samples", 2000));
      config.kernel_width = number_arg(params, "kernel_width", 0);
      config.seed = seed;
      config.target_class = target_class;
      return {DataType::Attribution, explain_lime(box, instance, config).to_json()};
    }
    allow_only(params, {"exact", "n_samples", "background_rows", "seed", "class"});
    ShapConfig config;
    config.exact = bool_arg(params, "exact", box.encoder.features().size() <= kMaxExactShapColumns);
    config.n_samples = static_cast<int>(count_arg(params, "n_samples", 2048));
    config.seed = seed;
    config.target_class = target_class;
    const std::size_t rows = count_arg(params, "background_rows", 0);
    if (!explain_.dataset) throw Error(ErrorCode::EmptyDataset, "no training dataset");
    const Dataset& data = explain_.dataset->data;
    if (rows == 0) {
      config.background = {mean_row(data)};
    } else {
      if (rows > data.size()) {
        throw Error(ErrorCode::KTooLarge, "background_rows exceeds the dataset", "background_rows");
      }
      std::vector<std::size_t> order(data.size());
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(seed);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i = 0; i < rows; ++i) config.background.push_back(data.features(order[i]));
    }
    return {DataType::Attribution, explain_shap(box, instance, config).to_json()};
  }
  if (kind == "whatif") {
    allow_only(params, {"edits", "seed"});
    Json edits = Json::object();
    if (params.contains("edits")) edits = require_object(params, "edits");
    return TypedValue::structure(explain_whatif(box, instance, edits).to_json(box.encoder));
  }
  if (kind == "counterfactual") {
    allow_only(params, {"target_label", "k", "max_iters", "seed", "proximity_weight",
                        "diversity_weight"});
    CounterfactualConfig config;
    config.target_label = text_arg(params, "target_label", "");
    if (config.target_label.empty()) {
      const Outcome base = box.predict(instance);
      if (box.classes.size() != 2) {
        throw Error(ErrorCode::TypeMismatch, "target_label is required", "target_label");
      }
      config.target_label = base.label == box.classes[0] ? box.classes[1] : box.classes[0];
    }
    class_index(box, config.target_label);
    config.k = count_arg(params, "k", config.k);
    config.max_iters = static_cast<int>(count_arg(params, "max_iters", static_cast<std::size_t>(config.max_iters)));
    config.seed = seed;
    config.proximity_weight = number_arg(params, "proximity_weight", config.proximity_weight);
    config.diversity_weight = number_arg(params, "diversity_weight", config.diversity_weight);
    return TypedValue::structure(explain_counterfactual(box, instance, config).to_json(box.encoder));
  }
  if (kind == "examples") {
    allow_only(params, {"k", "seed"});
    if (!explain_.dataset) throw Error(ErrorCode::EmptyDataset, "no training dataset");
    std::shared_ptr<const Model> model;
    for (const auto& block : pipeline_->root().flatten()) {
      if (target != "chain" && block->id() != target) continue;
      auto it = explain_.models.find(block->id());
      if (it != explain_.models.end()) {
        model = it->second->current();
        break;
      }
    }
    if (!model) throw Error(ErrorCode::TargetNotPredictive, "no model to take a representation from");
    const std::size_t k = count_arg(params, "k", 5);
    return {DataType::Table,
            examples_to_json(explain_examples(explain_.dataset->data, *model, instance, k))};
  }
  throw Error(ErrorCode::UnknownRoute, "unknown explanation kind '" + std::string(kind) + "'");
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  const Service& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(const Service& s) : service(s) {
    auto handler = [this](const char* verb) {
      return [this, verb](const httplib::Request& req, httplib::Response& res) {
        std::multimap<std::string, std::string> query(req.params.begin(), req.params.end());
        ApiResponse r = service.handle(verb, req.path, req.body, query);
        res.status = r.status;
        res.set_content(dump_decimal(r.body), "application/json");
      };
    };
    server.Get(R"(/.*)", handler("GET"));
    server.Post(R"(/.*)", handler("POST"));
    server.Put(R"(/.*)", handler("PUT"));
    server.Delete(R"(/.*)", handler("DELETE"));
  }
};

HttpServer::HttpServer(const Service& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(ErrorCode::InvalidConfig, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

bool HttpServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace matchlike
