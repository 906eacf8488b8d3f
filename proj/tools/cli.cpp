#include "cli.hpp"

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "CLI11.hpp"
#include "matchlike/agent.hpp"
#include "matchlike/config.hpp"

namespace matchlike {

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string models_dir;
  std::string out_dir;
  std::string input;
  std::string kind;
  std::string target = "chain";
  std::string params;
  std::string bind = "127.0.0.1";
  int port = 8080;
  std::string agent_url;
  std::string agent_model = "default";
};

std::unique_ptr<BuiltPipeline> load(const Options& o, bool use_models) {
  BuildOptions b;
  b.base_dir = std::filesystem::absolute(o.config).parent_path().string();
  b.seed_override = o.seed ? o.seed : seed_from_environment();
  if (use_models && !o.models_dir.empty()) b.models_dir = o.models_dir;
  return build_pipeline(load_json_file(o.config), b);
}

Json optional_json_file(const std::string& path) {
  return path.empty() ? Json::object() : load_json_file(path);
}

int emit(const ApiResponse& r, std::ostream& out, std::ostream& err) {
  if (r.status == 200) {
    out << dump_decimal(r.body) << "\n";
    return 0;
  }
  Json doc = r.body;
  doc["status"] = r.status;
  err << dump_decimal(doc) << "\n";
  return 1;
}

int serve(const Options& o, std::ostream& err) {
  auto built = load(o, true);
  std::shared_ptr<AgentBackend> backend;
  if (o.agent_url.empty()) {
    backend = std::make_shared<ScriptedBackend>(default_script());
  } else {
    const char* key = std::getenv("MATCHLIKE_AGENT_KEY");
    backend = std::make_shared<HttpChatBackend>(o.agent_url, o.agent_model, key ? key : "");
  }
  ChatSessions sessions(*built->service, backend);
  built->service->set_chat_handler([&](const Json& body) { return sessions.handle(body); });

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  HttpServer server(*built->service);
  const int port = server.start(o.bind, o.port);
  err << Json{{"listening", {{"host", o.bind}, {"port", port}}}}.dump() << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app("Composable prediction pipelines with rules, control blocks and explanations", "matchlike");
  app.require_subcommand(1);
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed overriding the config and MATCHLIKE_SEED");
  };
  auto with_models = [&](CLI::App* sub) {
    sub->add_option("--models", o.models_dir, "Directory of models written by train")->check(CLI::ExistingDirectory);
  };

  auto* validate = app.add_subcommand("validate", "Build the pipeline and print its chain structure");
  common(validate);
  auto* train = app.add_subcommand("train", "Train every model block and persist its parameters");
  common(train);
  train->add_option("--out", o.out_dir, "Output directory")->required();
  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API");
  common(serve_cmd);
  with_models(serve_cmd);
  serve_cmd->add_option("--port", o.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--bind", o.bind, "Bind address");
  serve_cmd->add_option("--agent-url", o.agent_url, "Chat-completion endpoint for /chat (default: scripted agent)");
  serve_cmd->add_option("--agent-model", o.agent_model, "Model name sent to the chat endpoint");
  auto* predict = app.add_subcommand("predict", "Run one row through the chain");
  common(predict);
  with_models(predict);
  predict->add_option("--input", o.input, "Row (JSON object)")->required()->check(CLI::ExistingFile);
  auto* explain = app.add_subcommand("explain", "Explain one row");
  common(explain);
  with_models(explain);
  explain->add_option("--kind", o.kind, "Explainer")
      ->required()
      ->check(CLI::IsMember({"lime", "shap", "whatif", "counterfactual", "prototypes", "examples"}));
  explain->add_option("--target", o.target, "Block id or 'chain'");
  explain->add_option("--input", o.input, "Row (JSON object)")->required()->check(CLI::ExistingFile);
  explain->add_option("--params", o.params, "Explainer parameters (JSON object)")->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << Json{{"error", {{"code", "UsageError"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  }

  try {
    if (*validate) {
      auto built = load(o, false);
      return emit(built->service->handle_json("GET", "/chain", Json::object()), out, err);
    }
    if (*train) {
      auto built = load(o, false);
      std::filesystem::create_directories(o.out_dir);
      Json written = Json::array();
      for (const auto& [id, state] : built->models) {
        const auto path = std::filesystem::path(o.out_dir) / (id + ".json");
        std::ofstream file(path);
        file << dump_decimal(model_document(id, *state->current())) << "\n";
        if (!file) throw Error(ErrorCode::InvalidConfig, "cannot write " + path.string(), path.string());
        written.push_back({{"block", id}, {"path", path.string()}});
      }
      out << dump_decimal(Json{{"seed", built->seed}, {"models", written}}) << "\n";
      return 0;
    }
    if (*serve_cmd) return serve(o, err);
    if (*predict) {
      auto built = load(o, true);
      return emit(built->service->handle_json("POST", "/chain/predict", {{"input", load_json_file(o.input)}}),
                  out, err);
    }
    if (*explain) {
      auto built = load(o, true);
      Json body = {{"target", o.target}, {"instance", load_json_file(o.input)}, {"params", optional_json_file(o.params)}};
      return emit(built->service->handle_json("POST", "/explain/" + o.kind, body), out, err);
    }
  } catch (const Error& e) {
    err << dump_decimal(error_document(e)) << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << Json{{"error", {{"code", "InternalError"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace matchlike
