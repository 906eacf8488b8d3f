#include "matchlike/control.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace matchlike {

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

Param param(std::string name, SemanticType type, std::string description,
            std::optional<Json> default_value = std::nullopt) {
  Param p{std::move(name), type, std::move(default_value)};
  p.description = std::move(description);
  return p;
}

TypedValue as_value(Json doc) {
  if (doc.is_object()) return TypedValue::structure(std::move(doc));
  return {DataType::Table, std::move(doc)};
}

std::size_t as_index(const Json& v) { return static_cast<std::size_t>(v.get<double>()); }

Json action_detail(const rules::Action& action) {
  Json doc = {{"action", std::string(rules::action_name(action))}};
  if (const auto* o = std::get_if<rules::Override>(&action)) doc["label"] = o->label;
  if (const auto* r = std::get_if<rules::Reject>(&action)) doc["message"] = r->message;
  return doc;
}

void record(RuleSet& rules, CallContext& ctx, const RuleSet::Fired& fired, Json extra = {}) {
  Json event = action_detail(fired.action);
  event["type"] = "rule_fired";
  event["rule_index"] = fired.index;
  if (extra.is_object()) event.update(extra);
  if (ctx.dry_run) event["dry_run"] = true;
  ctx.emit(event);
  if (ctx.dry_run) return;
  event["timestamp"] = now_ms();
  if (!event.contains("block")) event["block"] = ctx.current_block;
  rules.audit().append(std::move(event));
}

rules::EvalContext context_from(const Json& input_row, const Json& decision) {
  rules::EvalContext ctx;
  if (input_row.is_object()) ctx.input = input_row;
  if (decision.is_object()) {
    if (decision.contains("label") && decision["label"].is_string()) {
      ctx.label = decision["label"].get<std::string>();
    }
    if (decision.contains("probability") && decision["probability"].is_number()) {
      ctx.probability = decision["probability"].get<double>();
    }
  }
  return ctx;
}

/// rules (Read), add_rule (Create), set_active (Update), delete_rule (Delete),
/// audit (Read).
void add_rule_methods(std::vector<Method>& methods, const std::shared_ptr<RuleSet>& rules) {
  methods.push_back({{"rules", MethodRole::Read, {}, SemanticType::Table, "list rules"},
                     [rules](const Json&, CallContext&) {
                       return TypedValue{DataType::Table, rules->to_json()};
                     }});
  methods.push_back({{"add_rule", MethodRole::Create,
                      {param("rule", SemanticType::Text, "rule text: WHEN <condition> THEN <action>"),
                       param("active", SemanticType::Boolean, "start active", Json(true))},
                      SemanticType::Table, "append a rule"},
                     [rules](const Json& args, CallContext&) {
                       const auto i = rules->add(args["rule"].get<std::string>(),
                                                 args["active"].get<bool>());
                       return TypedValue::structure({{"index", i}, {"rules", rules->size()}});
                     }});
  methods.push_back({{"set_active", MethodRole::Update,
                      {param("index", SemanticType::Integer, "rule index"),
                       param("active", SemanticType::Boolean, "new activation flag")},
                      SemanticType::Table, "activate or deactivate a rule"},
                     [rules](const Json& args, CallContext&) {
                       rules->set_active(as_index(args["index"]), args["active"].get<bool>());
                       return TypedValue{DataType::Table, rules->to_json()};
                     }});
  methods.push_back({{"delete_rule", MethodRole::Delete,
                      {param("index", SemanticType::Integer, "rule index")}, SemanticType::Table,
                      "remove a rule"},
                     [rules](const Json& args, CallContext&) {
                       rules->remove(as_index(args["index"]));
                       return TypedValue{DataType::Table, rules->to_json()};
                     }});
  methods.push_back({{"audit", MethodRole::Read, {}, SemanticType::Text,
                      "fired events, one JSON record per line"},
                     [rules](const Json&, CallContext&) {
                       return TypedValue::text(rules->audit().to_lines());
                     }});
}

Json rules_digest(const RuleSet& rules) {
  return {{"rules", rules.to_json()}, {"audit_total", rules.audit().total()}};
}

}  // namespace

// ---------------------------------------------------------------------------
// AuditLog

void AuditLog::append(Json event) {
  std::lock_guard lock(mutex_);
  events_.push_back(std::move(event));
  ++total_;
  while (events_.size() > kCapacity) events_.pop_front();
}

std::size_t AuditLog::size() const {
  std::lock_guard lock(mutex_);
  return events_.size();
}

std::uint64_t AuditLog::total() const {
  std::lock_guard lock(mutex_);
  return total_;
}

Json AuditLog::to_json() const {
  std::lock_guard lock(mutex_);
  return Json(std::vector<Json>(events_.begin(), events_.end()));
}

std::string AuditLog::to_lines() const {
  std::lock_guard lock(mutex_);
  std::string out;
  for (const auto& e : events_) {
    out += dump_decimal(e);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// RuleSet

RuleSet::RuleSet(rules::BindSchema schema) : schema_(std::move(schema)) {}

std::size_t RuleSet::add(const std::string& text, bool active) {
  rules::RuleAst ast = rules::parse_rule(text);
  rules::bind(ast, schema_);
  std::lock_guard lock(mutex_);
  entries_.push_back({std::move(ast), active});
  return entries_.size() - 1;
}

void RuleSet::check_index(std::size_t index) const {
  if (index >= entries_.size()) {
    throw Error(ErrorCode::IndexOutOfRange, "rule " + std::to_string(index) + " out of range (" +
                                                std::to_string(entries_.size()) + " rules)");
  }
}

void RuleSet::set_active(std::size_t index, bool active) {
  std::lock_guard lock(mutex_);
  check_index(index);
  entries_[index].active = active;
}

void RuleSet::remove(std::size_t index) {
  std::lock_guard lock(mutex_);
  check_index(index);
  entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(index));
}

std::size_t RuleSet::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::size_t RuleSet::active_count() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [](const Entry& e) { return e.active; }));
}

std::optional<RuleSet::Fired> RuleSet::first_firing(
    rules::EvalContext& ctx, const std::function<void(rules::EvalContext&)>& fill_attribution,
    bool dry_run) {
  std::vector<std::pair<std::size_t, rules::RuleAst>> active;
  {
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].active) active.emplace_back(i, entries_[i].ast);
    }
  }
  for (const auto& [index, ast] : active) {
    if (!ctx.attribution && fill_attribution && rules::needs_attribution(*ast.condition)) {
      fill_attribution(ctx);
    }
    try {
      if (auto action = rules::evaluate(ast, ctx)) return Fired{index, *action};
    } catch (const Error& e) {
      if (e.code() == ErrorCode::AttributionUnavailable) throw;
      if (dry_run) continue;
      {
        std::lock_guard lock(mutex_);
        if (index < entries_.size()) entries_[index].active = false;
      }
      audit_.append({{"type", "rule_deactivated"}, {"rule_index", index}, {"reason", e.what()},
                     {"timestamp", now_ms()}});
    }
  }
  return std::nullopt;
}

Json RuleSet::to_json() const {
  std::lock_guard lock(mutex_);
  Json out = Json::array();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    out.push_back({{"index", i},
                   {"rule", rules::format_rule(entries_[i].ast)},
                   {"active", entries_[i].active}});
  }
  return out;
}

namespace {

std::map<std::string, bool> input_fields(const std::vector<ColumnSchema>& features) {
  std::map<std::string, bool> fields;
  for (const auto& c : features) fields[c.name] = !c.is_numeric();
  return fields;
}

}  // namespace

rules::BindSchema guard_schema(const std::vector<ColumnSchema>& features,
                               std::vector<std::string> classes) {
  rules::BindSchema s;
  s.input_fields = input_fields(features);
  s.output_available = true;
  s.labels = std::move(classes);
  s.allowed_actions = {"override"};
  return s;
}

rules::BindSchema filter_schema(const std::vector<ColumnSchema>& features) {
  rules::BindSchema s;
  s.input_fields = input_fields(features);
  s.allowed_actions = {"reject"};
  return s;
}

rules::BindSchema bomb_schema(const std::vector<ColumnSchema>& features,
                              std::vector<std::string> classes, bool attribution_available) {
  rules::BindSchema s;
  s.input_fields = input_fields(features);
  s.output_available = true;
  s.labels = std::move(classes);
  s.attribution_allowed = attribution_available;
  for (const auto& c : features) s.attribution_fields.insert(c.name);
  s.allowed_actions = {"shutdown", "reset"};
  return s;
}

// ---------------------------------------------------------------------------
// Splitter

SplitterState::SplitterState(std::size_t arity, const std::vector<ColumnSchema>& features,
                             DefaultPolicy policy)
    : arity_(arity), policy_(policy) {
  schema_.input_fields = input_fields(features);
}

void SplitterState::add_route(std::size_t branch, const std::string& condition) {
  if (branch >= arity_) {
    throw Error(ErrorCode::ArityMismatch, "branch " + std::to_string(branch) +
                                              " out of range for " + std::to_string(arity_) +
                                              " branches");
  }
  rules::ExprPtr expr;
  std::string trimmed = condition;
  trimmed.erase(0, trimmed.find_first_not_of(" \t"));
  trimmed.erase(trimmed.find_last_not_of(" \t") + 1);
  std::string upper = trimmed;
  std::transform(upper.begin(), upper.end(), upper.begin(), ::toupper);
  if (upper != "ALL") {
    expr = rules::parse_condition(condition);
    rules::bind_condition(*expr, schema_);
  }
  std::lock_guard lock(mutex_);
  routes_.push_back({branch, std::move(expr)});
}

void SplitterState::remove_route(std::size_t index) {
  std::lock_guard lock(mutex_);
  if (index >= routes_.size()) {
    throw Error(ErrorCode::IndexOutOfRange, "route " + std::to_string(index) + " out of range");
  }
  routes_.erase(routes_.begin() + static_cast<std::ptrdiff_t>(index));
}

void SplitterState::set_policy(DefaultPolicy policy) {
  std::lock_guard lock(mutex_);
  policy_ = policy;
}

std::vector<std::size_t> SplitterState::route(const Json& row) const {
  std::lock_guard lock(mutex_);
  rules::EvalContext ctx;
  ctx.input = row;
  std::vector<bool> hit(arity_, false);
  bool any = false;
  for (const auto& r : routes_) {
    if (!r.condition || rules::evaluate_condition(*r.condition, ctx)) {
      hit[r.branch] = true;
      any = true;
    }
  }
  if (!any) {
    if (policy_ == DefaultPolicy::Reject) {
      throw Error(ErrorCode::NoBranchMatched, "no splitter route matched the input");
    }
    std::fill(hit.begin(), hit.end(), true);
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < arity_; ++i) {
    if (hit[i]) out.push_back(i);
  }
  return out;
}

Json SplitterState::to_json() const {
  std::lock_guard lock(mutex_);
  Json routes = Json::array();
  for (const auto& r : routes_) {
    routes.push_back({{"branch", r.branch},
                      {"condition", r.condition ? rules::format_expr(*r.condition) : "ALL"}});
  }
  return {{"arity", arity_},
          {"routes", routes},
          {"default", policy_ == DefaultPolicy::RouteToAll ? "route_to_all" : "reject"}};
}

namespace {

SplitterState::DefaultPolicy policy_from_string(const std::string& name) {
  if (name == "route_to_all") return SplitterState::DefaultPolicy::RouteToAll;
  if (name == "reject") return SplitterState::DefaultPolicy::Reject;
  throw Error(ErrorCode::TypeMismatch, "unknown default policy '" + name + "'", "policy");
}

}  // namespace

BlockHandle make_splitter_block(Registry& registry, std::string display_name,
                                std::shared_ptr<SplitterState> state) {
  auto s = state;
  std::vector<Method> methods;
  methods.push_back({{"route", MethodRole::Transform,
                      {param("row", SemanticType::Row, "input row")}, SemanticType::Table,
                      "choose the parallel branches that receive the row"},
                     [s](const Json& args, CallContext& ctx) {
                       auto branches = s->route(args["row"]);
                       ctx.emit({{"type", "routed"}, {"branches", branches}});
                       return TypedValue::structure(make_routing_plan(branches, args["row"]));
                     }});
  methods.push_back({{"routes", MethodRole::Read, {}, SemanticType::Table, "routing table"},
                     [s](const Json&, CallContext&) { return TypedValue::structure(s->to_json()); }});
  methods.push_back({{"add_route", MethodRole::Create,
                      {param("branch", SemanticType::Integer, "branch index"),
                       param("condition", SemanticType::Text, "rule condition or ALL")},
                      SemanticType::Table, "append a route"},
                     [s](const Json& args, CallContext&) {
                       s->add_route(as_index(args["branch"]), args["condition"].get<std::string>());
                       return TypedValue::structure(s->to_json());
                     }});
  methods.push_back({{"delete_route", MethodRole::Delete,
                      {param("index", SemanticType::Integer, "route index")}, SemanticType::Table,
                      "remove a route"},
                     [s](const Json& args, CallContext&) {
                       s->remove_route(as_index(args["index"]));
                       return TypedValue::structure(s->to_json());
                     }});
  methods.push_back({{"set_default", MethodRole::Update,
                      {param("policy", SemanticType::Text, "route_to_all or reject")},
                      SemanticType::Table, "policy when no route matches"},
                     [s](const Json& args, CallContext&) {
                       s->set_policy(policy_from_string(args["policy"].get<std::string>()));
                       return TypedValue::structure(s->to_json());
                     }});
  return registry.register_block(std::move(display_name), "splitter", std::move(methods),
                                 [s] { return s->to_json(); });
}

// ---------------------------------------------------------------------------
// Aggregator

std::string_view to_string(AggregatorConfig::Strategy strategy) {
  switch (strategy) {
    case AggregatorConfig::Strategy::MajorityVote: return "majority_vote";
    case AggregatorConfig::Strategy::AverageProbability: return "average_probability";
    case AggregatorConfig::Strategy::WeightedVote: return "weighted_vote";
    case AggregatorConfig::Strategy::MaxConfidence: return "max_confidence";
  }
  return "majority_vote";
}

AggregatorConfig::Strategy strategy_from_string(std::string_view name) {
  for (auto s : {AggregatorConfig::Strategy::MajorityVote,
                 AggregatorConfig::Strategy::AverageProbability,
                 AggregatorConfig::Strategy::WeightedVote,
                 AggregatorConfig::Strategy::MaxConfidence}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::TypeMismatch, "unknown aggregation strategy '" + std::string(name) + "'",
              "strategy");
}

Json AggregatorConfig::to_json() const {
  return {{"strategy", std::string(to_string(strategy))}, {"weights", weights}};
}

AggregatorConfig AggregatorConfig::from_json(const Json& doc) {
  AggregatorConfig c;
  c.strategy = strategy_from_string(doc.value("strategy", std::string("majority_vote")));
  if (doc.contains("weights") && !doc["weights"].is_null()) {
    if (!doc["weights"].is_array()) throw Error(ErrorCode::TypeMismatch, "weights must be a list", "weights");
    for (const auto& w : doc["weights"]) {
      if (!w.is_number()) throw Error(ErrorCode::TypeMismatch, "weights must be numbers", "weights");
      c.weights.push_back(w.get<double>());
    }
  }
  if (c.strategy == Strategy::WeightedVote) {
    double sum = 0;
    for (double w : c.weights) {
      if (!(w >= 0)) throw Error(ErrorCode::TypeMismatch, "weights must be non-negative", "weights");
      sum += w;
    }
    if (!(sum > 0)) throw Error(ErrorCode::TypeMismatch, "weights must sum to a positive value", "weights");
  }
  return c;
}

namespace {

struct BranchOutput {
  std::size_t branch = 0;
  std::size_t vote = 0;                // argmax class index
  std::optional<std::vector<double>> proba;
};

std::size_t argmax_first(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TypedValue aggregate(const AggregatorConfig& config, const Json& outputs) {
  using Strategy = AggregatorConfig::Strategy;
  if (!outputs.is_array()) throw Error(ErrorCode::TypeMismatch, "outputs must be a list", "outputs");
  std::vector<BranchOutput> present;
  std::optional<std::vector<std::string>> classes;
  bool all_indices = true;
  std::size_t arity = 0;
  for (std::size_t b = 0; b < outputs.size(); ++b) {
    const Json& o = outputs[b];
    if (o.is_null()) continue;
    BranchOutput out{b};
    if (o.is_number()) {
      out.vote = static_cast<std::size_t>(o.get<double>());
    } else {
      all_indices = false;
      const Json& p = o.is_object() ? o.at("probabilities") : o;
      auto proba = p.get<std::vector<double>>();
      if (o.is_object() && o.contains("classes")) {
        auto cls = o["classes"].get<std::vector<std::string>>();
        if (classes && *classes != cls) {
          throw Error(ErrorCode::ArityMismatch, "branches disagree on the class list");
        }
        classes = std::move(cls);
      }
      if (arity != 0 && proba.size() != arity) {
        throw Error(ErrorCode::ArityMismatch, "branches disagree on the number of classes");
      }
      arity = proba.size();
      out.vote = argmax_first(proba);
      if (o.is_object() && o.contains("label") && o["label"].is_string() && classes) {
        // A guard inside a branch may have overridden the argmax label.
        auto it = std::find(classes->begin(), classes->end(), o["label"].get<std::string>());
        if (it != classes->end()) out.vote = static_cast<std::size_t>(it - classes->begin());
      }
      out.proba = std::move(proba);
    }
    present.push_back(std::move(out));
  }
  if (present.empty()) throw Error(ErrorCode::EmptyOutputs, "no branch produced an output");

  std::size_t n_classes = arity;
  for (const auto& p : present) n_classes = std::max(n_classes, p.vote + 1);

  std::size_t label = 0;
  std::optional<std::vector<double>> combined;
  switch (config.strategy) {
    case Strategy::MajorityVote:
    case Strategy::WeightedVote: {
      if (config.strategy == Strategy::WeightedVote && config.weights.size() != outputs.size()) {
        throw Error(ErrorCode::ArityMismatch, "weights length " +
                                                  std::to_string(config.weights.size()) +
                                                  " does not match " +
                                                  std::to_string(outputs.size()) + " branches");
      }
      std::vector<double> tally(n_classes, 0.0);
      for (const auto& p : present) {
        tally[p.vote] += config.strategy == Strategy::WeightedVote ? config.weights[p.branch] : 1.0;
      }
      label = argmax_first(tally);
      break;
    }
    case Strategy::AverageProbability: {
      if (all_indices) {
        throw Error(ErrorCode::ArityMismatch, "average_probability needs probability vectors");
      }
      std::vector<double> mean(arity, 0.0);
      std::size_t count = 0;
      for (const auto& p : present) {
        if (!p.proba) throw Error(ErrorCode::ArityMismatch, "mixed class indices and probabilities");
        for (std::size_t c = 0; c < arity; ++c) mean[c] += (*p.proba)[c];
        ++count;
      }
      for (double& m : mean) m /= static_cast<double>(count);
      label = argmax_first(mean);
      combined = std::move(mean);
      break;
    }
    case Strategy::MaxConfidence: {
      double best = -1;
      for (const auto& p : present) {
        const double conf = p.proba ? (*p.proba)[p.vote] : 1.0;
        if (conf > best) {
          best = conf;
          label = p.vote;
          combined = p.proba;
        }
      }
      break;
    }
  }

  if (all_indices) return TypedValue::scalar(static_cast<double>(label));

  Json per_branch = Json::array();
  for (const auto& o : outputs) per_branch.push_back(o);
  Json record = {{"strategy", std::string(to_string(config.strategy))}, {"per_branch", per_branch}};
  if (classes) {
    record["label"] = classes->at(label);
    record["classes"] = *classes;
  } else {
    record["label"] = label;
  }
  if (combined) {
    record["probabilities"] = *combined;
    record["probability"] = (*combined)[label];
  } else {
    // Vote share of the winning class.
    double votes = 0, total = 0;
    for (const auto& p : present) {
      const double w = config.strategy == Strategy::WeightedVote ? config.weights[p.branch] : 1.0;
      total += w;
      if (p.vote == label) votes += w;
    }
    record["probability"] = votes / total;
  }
  return TypedValue::structure(std::move(record));
}

AggregatorConfig AggregatorState::get() const {
  std::lock_guard lock(mutex_);
  return config_;
}

void AggregatorState::set(AggregatorConfig config) {
  AggregatorConfig checked = AggregatorConfig::from_json(config.to_json());
  std::lock_guard lock(mutex_);
  config_ = std::move(checked);
}

BlockHandle make_aggregator_block(Registry& registry, std::string display_name,
                                  std::shared_ptr<AggregatorState> state) {
  auto s = state;
  std::vector<Method> methods;
  methods.push_back({{"combine", MethodRole::Transform,
                      {param("outputs", SemanticType::Table, "branch outputs in declaration order")},
                      SemanticType::Table, "combine branch outputs into one decision"},
                     [s](const Json& args, CallContext&) { return aggregate(s->get(), args["outputs"]); }});
  methods.push_back({{"strategy", MethodRole::Read, {}, SemanticType::Table, "current strategy"},
                     [s](const Json&, CallContext&) { return TypedValue::structure(s->get().to_json()); }});
  methods.push_back({{"set_strategy", MethodRole::Update,
                      {param("strategy", SemanticType::Text,
                             "majority_vote, average_probability, weighted_vote or max_confidence"),
                       param("weights", SemanticType::Table, "per-branch weights for weighted_vote",
                             Json::array())},
                      SemanticType::Table, "change the aggregation strategy"},
                     [s](const Json& args, CallContext&) {
                       s->set(AggregatorConfig::from_json(args));
                       return TypedValue::structure(s->get().to_json());
                     }});
  return registry.register_block(std::move(display_name), "aggregator", std::move(methods),
                                 [s] { return s->get().to_json(); });
}

// ---------------------------------------------------------------------------
// Guard, filter, shutdown

Json guard_apply(RuleSet& rules, const Json& input_row, const Json& decision, CallContext& ctx) {
  rules::EvalContext ectx = context_from(input_row, decision);
  auto fired = rules.first_firing(ectx, {}, ctx.dry_run);
  if (!fired) return decision;
  const auto& label = std::get<rules::Override>(fired->action).label;
  Json out = decision;
  out["label"] = label;
  out["overridden"] = true;
  out["rule_index"] = fired->index;
  out["original"] = decision;
  if (decision.contains("classes") && decision.contains("probabilities")) {
    const auto classes = decision["classes"].get<std::vector<std::string>>();
    auto it = std::find(classes.begin(), classes.end(), label);
    if (it != classes.end()) {
      out["probability"] = decision["probabilities"][static_cast<std::size_t>(it - classes.begin())];
    }
  }
  record(rules, ctx, *fired,
         {{"original_label", decision.is_object() ? decision.value("label", Json(nullptr)) : Json(nullptr)}});
  return out;
}

void filter_check(RuleSet& rules, const Json& row, CallContext& ctx) {
  rules::EvalContext ectx = context_from(row, Json());
  auto fired = rules.first_firing(ectx, {}, ctx.dry_run);
  if (!fired) return;
  record(rules, ctx, *fired);
  throw Error(ErrorCode::RejectedByFilter, std::get<rules::Reject>(fired->action).message);
}

BlockHandle make_guard_block(Registry& registry, std::string display_name,
                             std::shared_ptr<RuleSet> rules) {
  auto r = rules;
  std::vector<Method> methods;
  methods.push_back({{"apply", MethodRole::Predict,
                      {param("decision", SemanticType::Table, "upstream decision record")},
                      SemanticType::Table, "override the decision when a rule fires"},
                     [r](const Json& args, CallContext& ctx) {
                       return as_value(guard_apply(*r, ctx.request_row, args["decision"], ctx));
                     }});
  add_rule_methods(methods, r);
  return registry.register_block(std::move(display_name), "guard", std::move(methods),
                                 [r] { return rules_digest(*r); });
}

BlockHandle make_filter_block(Registry& registry, std::string display_name,
                              std::shared_ptr<RuleSet> rules,
                              std::vector<ColumnSchema> features) {
  auto r = rules;
  std::vector<Method> methods;
  Param row = param("row", SemanticType::Row, "input row");
  if (!features.empty()) {
    for (const auto& col : features) row.fields[col.name] = col.describe();
    row.validator = row_validator(std::move(features));
  }
  methods.push_back({{"check", MethodRole::Predict, {row},
                      SemanticType::Row, "reject inputs matching a rule; pass others unchanged"},
                     [r](const Json& args, CallContext& ctx) {
                       filter_check(*r, args["row"], ctx);
                       return TypedValue::row(args["row"]);
                     }});
  add_rule_methods(methods, r);
  return registry.register_block(std::move(display_name), "filter", std::move(methods),
                                 [r] { return rules_digest(*r); });
}

BlockHandle make_shutdown_block(Registry& registry, std::string display_name,
                                std::shared_ptr<ShutdownState> state) {
  auto s = state;
  std::vector<Method> methods;
  methods.push_back({{"trip", MethodRole::Create,
                      {param("reason", SemanticType::Text, "why the pipeline stops", Json("manual"))},
                      SemanticType::Table, "emergency stop: every prediction fails until reset"},
                     [s](const Json& args, CallContext& ctx) {
                       s->trip(args["reason"].get<std::string>());
                       ctx.emit({{"type", "shutdown"}, {"reason", s->snapshot().reason}});
                       return TypedValue::structure(s->to_json());
                     }});
  methods.push_back({{"reset", MethodRole::Delete, {}, SemanticType::Table, "clear the emergency stop"},
                     [s](const Json&, CallContext& ctx) {
                       s->reset();
                       ctx.emit({{"type", "shutdown_reset"}});
                       return TypedValue::structure(s->to_json());
                     }});
  methods.push_back({{"status", MethodRole::Read, {}, SemanticType::Table, "shutdown state"},
                     [s](const Json&, CallContext&) { return TypedValue::structure(s->to_json()); }});
  return registry.register_block(std::move(display_name), "shutdown", std::move(methods),
                                 [s] { return s->to_json(); });
}

// ---------------------------------------------------------------------------
// Bias injector

void CorrectionStore::submit(Json row, std::string label) {
  std::lock_guard lock(mutex_);
  corrections_.push_back({std::move(row), std::move(label), false});
}

std::vector<CorrectionStore::Correction> CorrectionStore::all() const {
  std::lock_guard lock(mutex_);
  return corrections_;
}

std::vector<CorrectionStore::Correction> CorrectionStore::pending() const {
  std::lock_guard lock(mutex_);
  std::vector<Correction> out;
  for (const auto& c : corrections_) {
    if (!c.applied) out.push_back(c);
  }
  return out;
}

void CorrectionStore::mark_all_applied() {
  std::lock_guard lock(mutex_);
  for (auto& c : corrections_) c.applied = true;
}

std::size_t CorrectionStore::size() const {
  std::lock_guard lock(mutex_);
  return corrections_.size();
}

void CorrectionStore::restore_snapshot() {
  std::lock_guard lock(mutex_);
  corrections_.clear();
}

Json CorrectionStore::to_json() const {
  std::lock_guard lock(mutex_);
  Json out = Json::array();
  for (const auto& c : corrections_) {
    out.push_back({{"row", c.row}, {"label", c.label}, {"applied", c.applied}});
  }
  return out;
}

namespace {

std::size_t class_index(const Model& model, const std::string& label) {
  auto it = std::find(model.classes.begin(), model.classes.end(), label);
  if (it == model.classes.end()) {
    throw Error(ErrorCode::UnknownLabel, "unknown label '" + label + "'", label);
  }
  return static_cast<std::size_t>(it - model.classes.begin());
}

}  // namespace

Model bias_apply(const std::vector<CorrectionStore::Correction>& pending, const Model& model,
                 const BiasConfig& config) {
  if (pending.empty()) throw Error(ErrorCode::NoPendingCorrections, "no pending corrections");
  TrainingSet set;
  for (const auto& c : pending) {
    set.rows.push_back(model.encoder.encode(model.encoder.row_from_json(c.row)));
    set.labels.push_back(class_index(model, c.label));
  }
  Model out = model;
  if (model.kind == ModelKind::Tree) {
    for (std::size_t i = 0; i < set.rows.size(); ++i) out.overrides[set.rows[i]] = set.labels[i];
    return out;
  }
  const bool output_only = model.kind == ModelKind::Mlp;
  std::vector<double> params = flat_parameters(out);
  std::vector<double> grad;
  double loss = loss_and_gradient(out, set, &grad, output_only);
  for (int it = 0; it < config.iterations; ++it) {
    // Backtracking keeps every accepted step a strict improvement.
    double step = config.step_size;
    bool improved = false;
    for (int halving = 0; halving < 40 && !improved; ++halving, step *= 0.5) {
      std::vector<double> candidate = params;
      for (std::size_t k = 0; k < candidate.size(); ++k) candidate[k] -= step * grad[k];
      set_flat_parameters(out, candidate);
      const double next = loss_and_gradient(out, set, nullptr, output_only);
      if (next < loss) {
        params = std::move(candidate);
        loss = next;
        improved = true;
      }
    }
    set_flat_parameters(out, params);
    if (!improved) break;
    loss = loss_and_gradient(out, set, &grad, output_only);
  }
  return out;
}

BlockHandle make_bias_block(Registry& registry, std::string display_name,
                            std::shared_ptr<CorrectionStore> store,
                            std::shared_ptr<ModelState> model) {
  auto s = store;
  auto m = model;
  const auto features = m->current()->encoder.features();
  std::vector<Method> methods;
  Param row = param("row", SemanticType::Row, "feature values of the corrected case");
  row.validator = row_validator(features);
  methods.push_back({{"submit", MethodRole::Update,
                      {row, param("label", SemanticType::Text, "desired label")}, SemanticType::Table,
                      "store a relabelled prediction; applied only by apply"},
                     [s, m](const Json& args, CallContext&) {
                       const auto label = args["label"].get<std::string>();
                       class_index(*m->current(), label);
                       s->submit(args["row"], label);
                       return TypedValue::structure({{"corrections", s->size()}});
                     }});
  methods.push_back({{"apply", MethodRole::Update,
                      {param("iterations", SemanticType::Integer, "gradient steps"),
                       param("step_size", SemanticType::Number, "initial step size", Json(0.5))},
                      SemanticType::Table, "fold pending corrections into the model"},
                     [s, m](const Json& args, CallContext& ctx) {
                       BiasConfig config;
                       config.iterations = static_cast<int>(args["iterations"].get<double>());
                       config.step_size = args["step_size"].get<double>();
                       const auto pending = s->pending();
                       m->replace(bias_apply(pending, *m->current(), config));
                       s->mark_all_applied();
                       ctx.emit({{"type", "bias_applied"}, {"corrections", pending.size()}});
                       return TypedValue::structure({{"applied", pending.size()}});
                     }});
  methods.push_back({{"corrections", MethodRole::Read, {}, SemanticType::Table, "submitted corrections"},
                     [s](const Json&, CallContext&) { return TypedValue{DataType::Table, s->to_json()}; }});
  return registry.register_block(std::move(display_name), "bias", std::move(methods),
                                 [s] { return s->to_json(); });
}

// ---------------------------------------------------------------------------
// Logic bomb

std::optional<RuleSet::Fired> bomb_monitor(BombState& state, const Json& input_row,
                                           const Json& decision, CallContext& ctx) {
  rules::EvalContext ectx = context_from(input_row, decision);
  auto fill = [&](rules::EvalContext& c) {
    if (!state.attribution) {
      throw Error(ErrorCode::AttributionUnavailable, "on-demand attribution is disabled");
    }
    c.attribution = state.attribution(input_row);
  };
  auto fired = state.rules->first_firing(ectx, fill, ctx.dry_run);
  if (!fired) return fired;
  if (std::holds_alternative<rules::Shutdown>(fired->action)) {
    const std::string reason = "logic bomb rule " + std::to_string(fired->index);
    if (state.shutdown && !ctx.dry_run) state.shutdown->trip(reason);
    record(*state.rules, ctx, *fired, {{"reason", reason}});
  } else {
    if (!ctx.dry_run) {
      for (const auto& r : state.resettables) r->restore_snapshot();
    }
    record(*state.rules, ctx, *fired);
  }
  return fired;
}

BlockHandle make_bomb_block(Registry& registry, std::string display_name,
                            std::shared_ptr<BombState> state) {
  auto s = state;
  std::vector<Method> methods;
  methods.push_back({{"monitor", MethodRole::Predict,
                      {param("decision", SemanticType::Table, "upstream decision record")},
                      SemanticType::Table, "shut down or reset when a monitoring rule fires"},
                     [s](const Json& args, CallContext& ctx) {
                       bomb_monitor(*s, ctx.request_row, args["decision"], ctx);
                       return as_value(args["decision"]);
                     }});
  add_rule_methods(methods, s->rules);
  return registry.register_block(std::move(display_name), "bomb", std::move(methods),
                                 [s] { return rules_digest(*s->rules); });
}

}  // namespace matchlike
