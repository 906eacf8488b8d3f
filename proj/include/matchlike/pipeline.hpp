#pragma once

// Building blocks, their composition into chains and parallel groups, and the
// execution semantics over the resulting tree: predict routing, standalone
// transforms and downstream update propagation.

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "matchlike/error.hpp"
#include "matchlike/value.hpp"

namespace matchlike {

enum class MethodRole { Predict, Transform, Create, Read, Update, Delete };
enum class SemanticType { Number, Integer, Text, Boolean, Row, Table };

std::string_view to_string(MethodRole role);
std::string_view to_string(SemanticType type);
std::optional<MethodRole> method_role_from_string(std::string_view name);

inline bool is_mutating(MethodRole role) {
  return role == MethodRole::Create || role == MethodRole::Update || role == MethodRole::Delete;
}

struct Param {
  std::string name;
  SemanticType type = SemanticType::Number;
  /// Present means the parameter is optional.
  std::optional<Json> default_value;
  std::string description;
  /// Extra shape check for row/table values; throws TypeMismatch naming the
  /// offending field.
  std::function<void(const Json&)> validator;
  /// Field document for row parameters, published in tool schemas.
  Json fields;
};

struct MethodDescriptor {
  std::string name;
  MethodRole role = MethodRole::Read;
  std::vector<Param> params;
  SemanticType returns = SemanticType::Table;
  std::string description;

  /// True when every parameter has a default, i.e. the method can be invoked
  /// with no arguments. Only such Update methods are propagation hooks.
  bool nullary() const;
};

class ShutdownState;

/// Per-call execution context. Carries the original request row so that
/// control blocks sitting after a model can still see the input, and collects
/// fired control events and the invocation trace.
struct CallContext {
  Json request_row;  // null when the call has no row input
  Json events = Json::array();
  std::vector<std::pair<std::string, std::string>> trace;  // (block id, method)
  ShutdownState* shutdown = nullptr;
  std::string current_block;
  /// Explanation probes: control blocks report what would happen but write no
  /// audit entries and trip or reset nothing.
  bool dry_run = false;

  void emit(Json event);
};

using MethodFn = std::function<TypedValue(const Json& args, CallContext& ctx)>;

struct Method {
  MethodDescriptor descriptor;
  MethodFn fn;
};

class Block {
 public:
  Block(std::string id, std::string display_name, std::string kind,
        std::vector<Method> methods, std::function<Json()> state_digest = {});

  const std::string& id() const { return id_; }
  const std::string& display_name() const { return display_name_; }
  const std::string& kind() const { return kind_; }
  const std::vector<Method>& methods() const { return methods_; }

  const Method* find(std::string_view method_name) const;
  const Method* predict_method() const;
  const Method* transform_method() const;

  /// Snapshot of mutable internal state; empty object when the block is
  /// stateless. Used to check that reads do not mutate.
  Json state_digest() const { return digest_ ? digest_() : Json::object(); }

 private:
  std::string id_;
  std::string display_name_;
  std::string kind_;
  std::vector<Method> methods_;
  std::function<Json()> digest_;
};

using BlockHandle = std::shared_ptr<const Block>;

/// Lower-case identifier built from a display name.
std::string slugify(std::string_view display_name);

class Registry {
 public:
  /// Validates the method list and assigns a fresh id derived from the display
  /// name (numeric suffix on collision).
  BlockHandle register_block(std::string display_name, std::string kind,
                             std::vector<Method> methods,
                             std::function<Json()> state_digest = {});

  BlockHandle find(std::string_view id) const;
  std::vector<BlockHandle> blocks() const;

 private:
  std::map<std::string, BlockHandle, std::less<>> blocks_;
  std::vector<std::string> order_;
};

class RunnableNode {
 public:
  enum class Kind { Block, Chain, Parallel };

  RunnableNode(BlockHandle block);  // NOLINT(google-explicit-constructor)

  Kind kind() const;
  const BlockHandle& block() const;
  const RunnableNode& left() const;
  const RunnableNode& right() const;
  const std::vector<RunnableNode>& branches() const;

  /// Blocks in left-to-right order.
  std::vector<BlockHandle> flatten() const;
  bool contains(std::string_view block_id) const;
  BlockHandle find(std::string_view block_id) const;

  friend bool operator==(const RunnableNode& a, const RunnableNode& b);

 private:
  struct Impl;
  explicit RunnableNode(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<const Impl> impl_;

  friend RunnableNode compose_sequential(RunnableNode left, RunnableNode right);
  friend RunnableNode compose_parallel(std::vector<RunnableNode> branches);
};

RunnableNode compose_sequential(RunnableNode left, RunnableNode right);
RunnableNode compose_parallel(std::vector<RunnableNode> branches);

inline RunnableNode operator|(RunnableNode left, RunnableNode right) {
  return compose_sequential(std::move(left), std::move(right));
}

/// Emergency-stop state shared by a pipeline and the blocks that may trip it.
/// Tripping is the one mutation allowed concurrently with readers.
class ShutdownState {
 public:
  struct Snapshot {
    bool active = false;
    std::string reason;
    std::chrono::system_clock::time_point since{};
  };

  void trip(std::string reason);
  void reset();
  bool active() const { return active_.load(std::memory_order_acquire); }
  Snapshot snapshot() const;
  Json to_json() const;

 private:
  std::atomic<bool> active_{false};
  mutable std::mutex mutex_;
  std::string reason_;
  std::chrono::system_clock::time_point since_{};
};

// A splitter emits this structure; the parallel group that receives it only
// runs the listed branches.
Json make_routing_plan(std::vector<std::size_t> branches, Json input);
bool is_routing_plan(const TypedValue& value);

TypedValue run_predict(const RunnableNode& node, const TypedValue& input, CallContext& ctx);
TypedValue run_transform(const RunnableNode& node, const TypedValue& input, CallContext& ctx);

struct UpdateReport {
  std::string origin;
  std::vector<std::pair<std::string, std::string>> visited;
  std::vector<std::pair<std::string, std::string>> errors;

  Json to_json() const;
};

UpdateReport propagate_update(const RunnableNode& node, std::string_view origin);

Json serialize_structure(const RunnableNode& node);
Json serialize_method(const MethodDescriptor& method);

struct InvokeResult {
  TypedValue value;
  bool updated = false;
};

/// Checks `args` against the method descriptor, fills defaults and returns the
/// completed argument object. Throws TypeMismatch naming the parameter.
Json check_arguments(const MethodDescriptor& method, const Json& args);

InvokeResult invoke_method(const RunnableNode& node, std::string_view block_id,
                           std::string_view method_name, const Json& args,
                           CallContext& ctx);

/// A composed pipeline with its shutdown switch and the single-writer lock.
class Pipeline {
 public:
  explicit Pipeline(RunnableNode root,
                    std::shared_ptr<ShutdownState> shutdown = std::make_shared<ShutdownState>());

  const RunnableNode& root() const { return root_; }
  ShutdownState& shutdown() const { return *shutdown_; }
  const std::shared_ptr<ShutdownState>& shutdown_ptr() const { return shutdown_; }
  BlockHandle find_block(std::string_view id) const { return root_.find(id); }

  struct PredictResult {
    TypedValue value;
    Json events;
    std::vector<std::pair<std::string, std::string>> trace;
  };

  /// Shared-lock predict through the whole tree.
  PredictResult predict(const TypedValue& input) const;
  /// Same without taking the lock; for callers already holding it.
  PredictResult predict_unlocked(const TypedValue& input, bool dry_run = false) const;
  TypedValue transform(const TypedValue& input) const;

  struct MutationResult {
    InvokeResult result;
    std::optional<UpdateReport> report;
    Json events = Json::array();
  };

  /// Invokes a method. Mutating roles run under the exclusive lock together
  /// with the downstream update sweep.
  MutationResult invoke(std::string_view block_id, std::string_view method,
                        const Json& args) const;

  /// Digest of every block's internal state.
  Json state_document() const;

  std::shared_mutex& mutex() const { return mutex_; }

 private:
  RunnableNode root_;
  std::shared_ptr<ShutdownState> shutdown_;
  mutable std::shared_mutex mutex_;
};

}  // namespace matchlike
