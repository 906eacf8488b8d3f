#include "matchlike/config.hpp"

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

namespace matchlike {

namespace {

class ChainParser {
 public:
  ChainParser(std::string_view text, const std::map<std::string, BlockHandle, std::less<>>& blocks)
      : text_(text), blocks_(blocks) {}

  RunnableNode parse() {
    RunnableNode node = expr();
    skip_space();
    if (pos_ != text_.size()) fail("'|' or end of input");
    return node;
  }

 private:
  RunnableNode expr() {
    RunnableNode node = term();
    while (accept('|')) node = compose_sequential(std::move(node), term());
    return node;
  }

  RunnableNode term() {
    skip_space();
    const std::size_t start = pos_;
    std::string name = identifier();
    if (name.empty()) fail("block id or ParallelBlock");
    if (name == "ParallelBlock") {
      if (!accept('(')) fail("'('");
      std::vector<RunnableNode> branches;
      branches.push_back(expr());
      if (!accept(',')) fail("','");
      do {
        branches.push_back(expr());
      } while (accept(','));
      if (!accept(')')) fail("',' or ')'");
      return compose_parallel(std::move(branches));
    }
    auto it = blocks_.find(name);
    if (it == blocks_.end()) {
      throw Error(ErrorCode::UnknownBlockId, "unknown block id '" + name + "'", name, start);
    }
    return RunnableNode(it->second);
  }

  std::string identifier() {
    std::string out;
    if (pos_ < text_.size() && (std::isalpha(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
        out.push_back(text_[pos_++]);
      }
    }
    return out;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  [[noreturn]] void fail(const std::string& expected) {
    skip_space();
    throw Error(ErrorCode::ParseError,
                "expected " + expected + " at position " + std::to_string(pos_), expected, pos_);
  }

  std::string_view text_;
  const std::map<std::string, BlockHandle, std::less<>>& blocks_;
  std::size_t pos_ = 0;
};

[[noreturn]] void invalid(const std::string& message, const std::string& detail = {}) {
  throw Error(ErrorCode::InvalidConfig, message, detail);
}

const Json& member(const Json& doc, const std::string& key, const std::string& where) {
  auto it = doc.find(key);
  if (it == doc.end()) invalid(where + " needs '" + key + "'", key);
  return *it;
}

std::vector<std::string> rule_texts(const Json& block, const std::string& id) {
  std::vector<std::string> out;
  if (!block.contains("rules")) return out;
  if (!block["rules"].is_array()) invalid("block '" + id + "': rules must be a list", id);
  for (const auto& r : block["rules"]) {
    if (!r.is_string()) invalid("block '" + id + "': each rule must be text", id);
    out.push_back(r.get<std::string>());
  }
  return out;
}

std::shared_ptr<RuleSet> make_rules(rules::BindSchema schema, const std::vector<std::string>& texts) {
  auto set = std::make_shared<RuleSet>(std::move(schema));
  for (const auto& t : texts) set->add(t);
  return set;
}

}  // namespace

RunnableNode parse_chain_expression(std::string_view text,
                                    const std::map<std::string, BlockHandle, std::less<>>& blocks) {
  return ChainParser(text, blocks).parse();
}

std::string format_chain_expression(const RunnableNode& node) {
  switch (node.kind()) {
    case RunnableNode::Kind::Block: return node.block()->id();
    case RunnableNode::Kind::Chain:
      return format_chain_expression(node.left()) + " | " + format_chain_expression(node.right());
    case RunnableNode::Kind::Parallel: {
      std::string out = "ParallelBlock(";
      for (std::size_t i = 0; i < node.branches().size(); ++i) {
        if (i) out += ", ";
        out += format_chain_expression(node.branches()[i]);
      }
      return out + ")";
    }
  }
  return {};
}

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) invalid("cannot read '" + path + "'", path);
  Json doc = Json::parse(in, nullptr, false);
  if (doc.is_discarded()) invalid("'" + path + "' is not valid JSON", path);
  return doc;
}

std::optional<std::uint64_t> seed_from_environment() {
  const char* raw = std::getenv("MATCHLIKE_SEED");
  if (!raw || !*raw) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (*end != '\0') invalid("MATCHLIKE_SEED must be an unsigned integer", "MATCHLIKE_SEED");
  return static_cast<std::uint64_t>(v);
}

Json model_document(const std::string& block_id, const Model& model) {
  return {{"version", 1}, {"block", block_id}, {"model", model.to_json()}};
}

Model model_from_document(const Json& doc) {
  if (!doc.is_object() || doc.value("version", 0) != 1 || !doc.contains("model")) {
    invalid("unsupported model document version");
  }
  return Model::from_json(doc["model"]);
}

namespace {

std::unique_ptr<BuiltPipeline> build(const Json& config, const BuildOptions& options) {
  if (!config.is_object()) invalid("config must be an object");
  for (const auto& [key, value] : config.items()) {
    static const std::set<std::string> known = {"dataset", "blocks", "chain", "seed"};
    if (!known.count(key)) invalid("unknown config key '" + key + "'", key);
  }
  auto out = std::make_unique<BuiltPipeline>();
  if (config.contains("seed")) {
    if (!config["seed"].is_number_unsigned()) invalid("seed must be an unsigned integer", "seed");
    out->seed = config["seed"].get<std::uint64_t>();
  }
  if (options.seed_override) out->seed = *options.seed_override;

  // Dataset.
  const Json& ds = member(config, "dataset", "config");
  std::vector<ColumnSchema> schema;
  for (const auto& col : member(ds, "schema", "dataset")) schema.push_back(ColumnSchema::from_description(col));
  const std::string target = member(ds, "target", "dataset").get<std::string>();
  std::filesystem::path path = member(ds, "path", "dataset").get<std::string>();
  if (path.is_relative()) path = std::filesystem::path(options.base_dir) / path;
  if (!std::filesystem::is_regular_file(path)) invalid("dataset file '" + path.string() + "' not found", "dataset.path");
  out->dataset = std::make_shared<DatasetState>(load_dataset_csv_file(path.string(), schema, target));
  const Dataset& data = out->dataset->data;
  std::vector<ColumnSchema> features;
  std::vector<std::string> classes;
  for (const auto& col : data.schema()) {
    if (col.name == target) {
      classes = col.levels;
    } else {
      features.push_back(col);
    }
  }

  auto shutdown = std::make_shared<ShutdownState>();
  std::vector<std::shared_ptr<Resettable>> resettables;
  struct Deferred {
    std::string id;
    const Json* doc;
  };
  std::vector<Deferred> bombs;

  const Json& blocks = member(config, "blocks", "config");
  if (!blocks.is_array() || blocks.empty()) invalid("blocks must be a non-empty list", "blocks");
  auto add = [&](const std::string& id, BlockHandle handle) {
    if (handle->id() != id) {
      invalid("block id '" + id + "' must be a lower-case identifier (would become '" +
                  handle->id() + "')",
              id);
    }
    out->blocks.emplace(id, std::move(handle));
  };

  for (const auto& b : blocks) {
    if (!b.is_object()) invalid("each block must be an object", "blocks");
    const std::string id = member(b, "id", "block").get<std::string>();
    const std::string kind = member(b, "kind", "block '" + id + "'").get<std::string>();
    if (out->blocks.count(id)) invalid("duplicate block id '" + id + "'", id);
    try {
      if (kind == "dataset") {
        add(id, make_dataset_block(out->registry, id, out->dataset));
      } else if (kind == "model") {
        const ModelKind mk = model_kind_from_string(member(b, "model", "block '" + id + "'").get<std::string>());
        TrainingConfig tc;
        tc.seed = out->seed;
        if (b.contains("config")) {
          Json doc = b["config"];
          if (!doc.contains("seed")) doc["seed"] = out->seed;
          tc = TrainingConfig::from_json(doc);
        }
        std::shared_ptr<ModelState> state;
        const auto saved = options.models_dir
                               ? std::filesystem::path(*options.models_dir) / (id + ".json")
                               : std::filesystem::path();
        if (options.models_dir && std::filesystem::exists(saved)) {
          Model m = model_from_document(load_json_file(saved.string()));
          if (m.kind != mk) invalid("saved model '" + id + "' has a different kind", id);
          state = std::make_shared<ModelState>(std::move(m), tc, out->dataset);
        } else {
          state = std::make_shared<ModelState>(mk, tc, out->dataset);
        }
        out->models[id] = state;
        resettables.push_back(state);
        add(id, make_model_block(out->registry, id, state));
      } else if (kind == "splitter") {
        const auto arity = member(b, "arity", "splitter '" + id + "'").get<std::size_t>();
        const std::string policy = b.value("default", "route_to_all");
        if (policy != "route_to_all" && policy != "reject") invalid("unknown default policy '" + policy + "'", id);
        auto state = std::make_shared<SplitterState>(
            arity, features,
            policy == "reject" ? SplitterState::DefaultPolicy::Reject : SplitterState::DefaultPolicy::RouteToAll);
        for (const auto& r : b.value("routes", Json::array())) {
          state->add_route(member(r, "branch", "route").get<std::size_t>(),
                           member(r, "condition", "route").get<std::string>());
        }
        add(id, make_splitter_block(out->registry, id, state));
      } else if (kind == "aggregator") {
        Json doc = {{"strategy", b.value("strategy", "majority_vote")},
                    {"weights", b.value("weights", Json::array())}};
        add(id, make_aggregator_block(out->registry, id,
                                      std::make_shared<AggregatorState>(AggregatorConfig::from_json(doc))));
      } else if (kind == "guard") {
        add(id, make_guard_block(out->registry, id,
                                 make_rules(guard_schema(features, classes), rule_texts(b, id))));
      } else if (kind == "filter") {
        add(id, make_filter_block(out->registry, id, make_rules(filter_schema(features), rule_texts(b, id)),
                                  features));
      } else if (kind == "shutdown") {
        add(id, make_shutdown_block(out->registry, id, shutdown));
      } else if (kind == "bias") {
        const std::string model_id = member(b, "model", "bias '" + id + "'").get<std::string>();
        auto it = out->models.find(model_id);
        if (it == out->models.end()) invalid("bias '" + id + "' refers to unknown model '" + model_id + "'", model_id);
        auto store = std::make_shared<CorrectionStore>();
        resettables.push_back(store);
        add(id, make_bias_block(out->registry, id, store, it->second));
      } else if (kind == "bomb") {
        // Built last so that it sees every resettable block.
        out->blocks.emplace(id, nullptr);
        bombs.push_back({id, &b});
      } else {
        invalid("unknown block kind '" + kind + "'", id);
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidConfig) throw;
      throw Error(e.code(), "block '" + id + "': " + e.what(), e.detail().empty() ? id : e.detail(),
                  e.position());
    }
  }

  for (const auto& [id, doc] : bombs) {
    auto state = std::make_shared<BombState>();
    state->shutdown = shutdown;
    state->resettables = resettables;
    const bool attribution = doc->value("attribution", true) && !out->models.empty();
    if (attribution) {
      std::shared_ptr<ModelState> model = out->models.begin()->second;
      if (doc->contains("attribution_model")) {
        auto it = out->models.find((*doc)["attribution_model"].get<std::string>());
        if (it == out->models.end()) invalid("bomb '" + id + "': unknown attribution_model", id);
        model = it->second;
      }
      const FeatureRow background = mean_row(data);
      const std::uint64_t seed = out->seed;
      state->attribution = [model, background, seed](const Json& row) {
        BlackBox box = model_black_box(model->current());
        const FeatureRow instance = box.encoder.row_from_json(row);
        const Outcome o = box.predict(instance);
        ShapConfig config;
        config.background = {background};
        config.exact = box.encoder.features().size() <= kMaxExactShapColumns;
        config.n_samples = 256;
        config.seed = seed;
        config.target_class = static_cast<std::size_t>(
            std::find(box.classes.begin(), box.classes.end(), o.label) - box.classes.begin());
        const Attribution a = explain_shap(box, instance, config);
        std::map<std::string, double> out;
        for (std::size_t i = 0; i < a.features.size(); ++i) out[a.features[i]] = a.values[i];
        return out;
      };
    }
    try {
      state->rules = make_rules(bomb_schema(features, classes, attribution), rule_texts(*doc, id));
    } catch (const Error& e) {
      throw Error(e.code(), "block '" + id + "': " + e.what(), e.detail().empty() ? id : e.detail(),
                  e.position());
    }
    out->blocks.erase(id);
    add(id, make_bomb_block(out->registry, id, state));
  }

  const Json& chain = member(config, "chain", "config");
  if (!chain.is_string()) invalid("chain must be text", "chain");
  RunnableNode root = parse_chain_expression(chain.get<std::string>(), out->blocks);
  out->pipeline = std::make_shared<Pipeline>(std::move(root), shutdown);

  ExplainContext explain;
  explain.dataset = out->dataset;
  explain.seed = out->seed;
  for (const auto& [id, state] : out->models) {
    if (out->pipeline->find_block(id)) explain.models[id] = state;
  }
  out->service = std::make_shared<Service>(out->pipeline, std::move(explain));
  return out;
}

}  // namespace

std::unique_ptr<BuiltPipeline> build_pipeline(const Json& config, const BuildOptions& options) {
  try {
    return build(config, options);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("malformed config: ") + e.what());
  }
}

}  // namespace matchlike
