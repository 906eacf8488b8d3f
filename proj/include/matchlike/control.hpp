#pragma once

// Control building blocks: splitter, aggregator, rule guard, input filter,
// shutdown switch, bias injector and logic bomb.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "matchlike/blocks.hpp"
#include "matchlike/pipeline.hpp"
#include "matchlike/rules.hpp"

namespace matchlike {

/// Append-only event ring.
class AuditLog {
 public:
  static constexpr std::size_t kCapacity = 10000;

  void append(Json event);
  std::size_t size() const;
  /// Total events ever appended, including evicted ones.
  std::uint64_t total() const;
  Json to_json() const;
  /// One JSON record per line.
  std::string to_lines() const;

 private:
  mutable std::mutex mutex_;
  std::deque<Json> events_;
  std::uint64_t total_ = 0;
};

/// Ordered rule list with activation flags. Rules are parsed and bound when
/// added. Evaluation errors deactivate the offending rule.
class RuleSet {
 public:
  explicit RuleSet(rules::BindSchema schema);

  std::size_t add(const std::string& text, bool active = true);
  void set_active(std::size_t index, bool active);
  void remove(std::size_t index);
  std::size_t size() const;
  std::size_t active_count() const;
  const rules::BindSchema& schema() const { return schema_; }

  struct Fired {
    std::size_t index = 0;
    rules::Action action;
  };

  /// First active rule whose condition holds. `fill_attribution` is called
  /// once, before the first rule that reads the attribution namespace, when the
  /// context has none. A rule whose evaluation fails is deactivated, except in
  /// a dry run where it is only skipped.
  std::optional<Fired> first_firing(rules::EvalContext& ctx,
                                    const std::function<void(rules::EvalContext&)>& fill_attribution = {},
                                    bool dry_run = false);

  Json to_json() const;
  AuditLog& audit() { return audit_; }
  const AuditLog& audit() const { return audit_; }

 private:
  struct Entry {
    rules::RuleAst ast;
    bool active = true;
  };

  void check_index(std::size_t index) const;

  rules::BindSchema schema_;
  mutable std::mutex mutex_;
  std::vector<Entry> entries_;
  AuditLog audit_;
};

/// Binding schemas for the rule-carrying blocks.
rules::BindSchema guard_schema(const std::vector<ColumnSchema>& features,
                               std::vector<std::string> classes);
rules::BindSchema filter_schema(const std::vector<ColumnSchema>& features);
rules::BindSchema bomb_schema(const std::vector<ColumnSchema>& features,
                              std::vector<std::string> classes, bool attribution_available);

// ---------------------------------------------------------------------------
// Splitter

class SplitterState {
 public:
  enum class DefaultPolicy { RouteToAll, Reject };

  SplitterState(std::size_t arity, const std::vector<ColumnSchema>& features,
                DefaultPolicy policy = DefaultPolicy::RouteToAll);

  /// `condition` is a rule condition or "ALL".
  void add_route(std::size_t branch, const std::string& condition);
  void remove_route(std::size_t index);
  void set_policy(DefaultPolicy policy);
  std::size_t arity() const { return arity_; }

  /// Sorted branch indices for `row`. Throws NoBranchMatched.
  std::vector<std::size_t> route(const Json& row) const;
  Json to_json() const;

 private:
  struct Route {
    std::size_t branch;
    rules::ExprPtr condition;  // null: ALL
  };

  std::size_t arity_;
  rules::BindSchema schema_;
  mutable std::mutex mutex_;
  std::vector<Route> routes_;
  DefaultPolicy policy_;
};

BlockHandle make_splitter_block(Registry& registry, std::string display_name,
                                std::shared_ptr<SplitterState> state);

// ---------------------------------------------------------------------------
// Aggregator

struct AggregatorConfig {
  enum class Strategy { MajorityVote, AverageProbability, WeightedVote, MaxConfidence };

  Strategy strategy = Strategy::MajorityVote;
  std::vector<double> weights;

  Json to_json() const;
  static AggregatorConfig from_json(const Json& doc);
};

std::string_view to_string(AggregatorConfig::Strategy strategy);
AggregatorConfig::Strategy strategy_from_string(std::string_view name);

/// Branch outputs are decision records, probability vectors or class indices;
/// null marks a skipped branch. Ties go to the first class.
TypedValue aggregate(const AggregatorConfig& config, const Json& outputs);

class AggregatorState {
 public:
  explicit AggregatorState(AggregatorConfig config) { set(std::move(config)); }
  AggregatorConfig get() const;
  void set(AggregatorConfig config);

 private:
  mutable std::mutex mutex_;
  AggregatorConfig config_;
};

BlockHandle make_aggregator_block(Registry& registry, std::string display_name,
                                  std::shared_ptr<AggregatorState> state);

// ---------------------------------------------------------------------------
// Guard, filter, shutdown

/// Returns `decision` unchanged when no active rule fires.
Json guard_apply(RuleSet& rules, const Json& input_row, const Json& decision, CallContext& ctx);
/// Throws RejectedByFilter with the rule message.
void filter_check(RuleSet& rules, const Json& row, CallContext& ctx);

BlockHandle make_guard_block(Registry& registry, std::string display_name,
                             std::shared_ptr<RuleSet> rules);
BlockHandle make_filter_block(Registry& registry, std::string display_name,
                              std::shared_ptr<RuleSet> rules,
                              std::vector<ColumnSchema> features = {});
BlockHandle make_shutdown_block(Registry& registry, std::string display_name,
                                std::shared_ptr<ShutdownState> state);

// ---------------------------------------------------------------------------
// Bias injector

class CorrectionStore : public Resettable {
 public:
  struct Correction {
    Json row;
    std::string label;
    bool applied = false;
  };

  void submit(Json row, std::string label);
  std::vector<Correction> all() const;
  std::vector<Correction> pending() const;
  void mark_all_applied();
  std::size_t size() const;
  void restore_snapshot() override;
  Json to_json() const;

 private:
  mutable std::mutex mutex_;
  std::vector<Correction> corrections_;
};

struct BiasConfig {
  double step_size = 0.5;
  int iterations = 50;
};

/// Gradient steps on the cross-entropy of the pending corrections: output layer
/// only for the MLP, every weight for logistic regression. Tree models get
/// exact-match overrides. Throws NoPendingCorrections and UnknownLabel.
Model bias_apply(const std::vector<CorrectionStore::Correction>& pending, const Model& model,
                 const BiasConfig& config);

BlockHandle make_bias_block(Registry& registry, std::string display_name,
                            std::shared_ptr<CorrectionStore> store,
                            std::shared_ptr<ModelState> model);

// ---------------------------------------------------------------------------
// Logic bomb

using AttributionProvider = std::function<std::map<std::string, double>(const Json& row)>;

struct BombState {
  std::shared_ptr<RuleSet> rules;
  std::shared_ptr<ShutdownState> shutdown;
  std::vector<std::shared_ptr<Resettable>> resettables;
  /// Empty disables on-demand attribution.
  AttributionProvider attribution;
};

/// Evaluates the bomb rules against one prediction and executes the first
/// firing action. Returns the fired rule, if any.
std::optional<RuleSet::Fired> bomb_monitor(BombState& state, const Json& input_row,
                                           const Json& decision, CallContext& ctx);

BlockHandle make_bomb_block(Registry& registry, std::string display_name,
                            std::shared_ptr<BombState> state);

}  // namespace matchlike
