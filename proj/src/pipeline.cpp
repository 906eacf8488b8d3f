#include "matchlike/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <variant>

namespace matchlike {

std::string_view to_string(MethodRole role) {
  switch (role) {
    case MethodRole::Predict: return "predict";
    case MethodRole::Transform: return "transform";
    case MethodRole::Create: return "create";
    case MethodRole::Read: return "read";
    case MethodRole::Update: return "update";
    case MethodRole::Delete: return "delete";
  }
  return "read";
}

std::optional<MethodRole> method_role_from_string(std::string_view name) {
  for (auto r : {MethodRole::Predict, MethodRole::Transform, MethodRole::Create,
                 MethodRole::Read, MethodRole::Update, MethodRole::Delete}) {
    if (to_string(r) == name) return r;
  }
  return std::nullopt;
}

std::string_view to_string(SemanticType type) {
  switch (type) {
    case SemanticType::Number: return "number";
    case SemanticType::Integer: return "integer";
    case SemanticType::Text: return "text";
    case SemanticType::Boolean: return "boolean";
    case SemanticType::Row: return "row";
    case SemanticType::Table: return "table";
  }
  return "table";
}

bool MethodDescriptor::nullary() const {
  return std::all_of(params.begin(), params.end(),
                     [](const Param& p) { return p.default_value.has_value(); });
}

void CallContext::emit(Json event) {
  if (!current_block.empty() && !event.contains("block")) event["block"] = current_block;
  events.push_back(std::move(event));
}

// ---------------------------------------------------------------------------
// Blocks and registry

Block::Block(std::string id, std::string display_name, std::string kind,
             std::vector<Method> methods, std::function<Json()> state_digest)
    : id_(std::move(id)),
      display_name_(std::move(display_name)),
      kind_(std::move(kind)),
      methods_(std::move(methods)),
      digest_(std::move(state_digest)) {}

const Method* Block::find(std::string_view method_name) const {
  for (const auto& m : methods_) {
    if (m.descriptor.name == method_name) return &m;
  }
  return nullptr;
}

const Method* Block::predict_method() const {
  for (const auto& m : methods_) {
    if (m.descriptor.role == MethodRole::Predict) return &m;
  }
  return nullptr;
}

const Method* Block::transform_method() const {
  for (const auto& m : methods_) {
    if (m.descriptor.role == MethodRole::Transform) return &m;
  }
  return nullptr;
}

std::string slugify(std::string_view display_name) {
  std::string slug;
  bool pending_sep = false;
  for (char c : display_name) {
    auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc)) {
      if (pending_sep && !slug.empty()) slug.push_back('_');
      pending_sep = false;
      slug.push_back(static_cast<char>(std::tolower(uc)));
    } else {
      pending_sep = true;
    }
  }
  if (slug.empty()) slug = "block";
  if (std::isdigit(static_cast<unsigned char>(slug.front()))) slug.insert(0, "b");
  return slug;
}

namespace {

void validate_methods(const std::vector<Method>& methods) {
  std::set<std::string, std::less<>> names;
  int predicts = 0;
  int transforms = 0;
  for (const auto& m : methods) {
    if (!names.insert(m.descriptor.name).second) {
      throw Error(ErrorCode::DuplicateMethodName,
                  "duplicate method name '" + m.descriptor.name + "'", m.descriptor.name);
    }
    std::set<std::string, std::less<>> params;
    for (const auto& p : m.descriptor.params) {
      if (!params.insert(p.name).second) {
        throw Error(ErrorCode::DuplicateMethodName,
                    "duplicate parameter '" + p.name + "' in method '" + m.descriptor.name + "'",
                    p.name);
      }
    }
    if (m.descriptor.role == MethodRole::Predict) ++predicts;
    if (m.descriptor.role == MethodRole::Transform) ++transforms;
  }
  if (predicts > 1) {
    throw Error(ErrorCode::MultiplePredictMethods, "a block may expose at most one predict method");
  }
  if (transforms > 1) {
    throw Error(ErrorCode::MultipleTransformMethods,
                "a block may expose at most one transform method");
  }
}

}  // namespace

BlockHandle Registry::register_block(std::string display_name, std::string kind,
                                     std::vector<Method> methods,
                                     std::function<Json()> state_digest) {
  validate_methods(methods);
  const std::string base = slugify(display_name);
  std::string id = base;
  for (int suffix = 2; blocks_.count(id) != 0; ++suffix) {
    id = base + "_" + std::to_string(suffix);
  }
  auto block = std::make_shared<const Block>(id, std::move(display_name), std::move(kind),
                                             std::move(methods), std::move(state_digest));
  blocks_.emplace(id, block);
  order_.push_back(id);
  return block;
}

BlockHandle Registry::find(std::string_view id) const {
  auto it = blocks_.find(id);
  return it == blocks_.end() ? nullptr : it->second;
}

std::vector<BlockHandle> Registry::blocks() const {
  std::vector<BlockHandle> out;
  out.reserve(order_.size());
  for (const auto& id : order_) out.push_back(blocks_.at(id));
  return out;
}

// ---------------------------------------------------------------------------
// Runnable tree

struct RunnableNode::Impl {
  Kind kind;
  BlockHandle block;
  std::vector<RunnableNode> children;  // chain: {left, right}; parallel: branches
};

RunnableNode::RunnableNode(BlockHandle block) {
  if (!block) throw Error(ErrorCode::UnknownBlock, "null block handle");
  impl_ = std::make_shared<const Impl>(Impl{Kind::Block, std::move(block), {}});
}

RunnableNode::Kind RunnableNode::kind() const { return impl_->kind; }
const BlockHandle& RunnableNode::block() const { return impl_->block; }
const RunnableNode& RunnableNode::left() const { return impl_->children.at(0); }
const RunnableNode& RunnableNode::right() const { return impl_->children.at(1); }
const std::vector<RunnableNode>& RunnableNode::branches() const { return impl_->children; }

namespace {

void flatten_into(const RunnableNode& node, std::vector<BlockHandle>& out) {
  if (node.kind() == RunnableNode::Kind::Block) {
    out.push_back(node.block());
    return;
  }
  for (const auto& child : node.branches()) flatten_into(child, out);
}

void require_disjoint(const std::vector<const RunnableNode*>& parts) {
  std::set<std::string, std::less<>> seen;
  for (const auto* part : parts) {
    for (const auto& b : part->flatten()) {
      if (!seen.insert(b->id()).second) {
        throw Error(ErrorCode::DuplicateBlockInChain,
                    "block '" + b->id() + "' appears more than once", b->id());
      }
    }
  }
}

}  // namespace

std::vector<BlockHandle> RunnableNode::flatten() const {
  std::vector<BlockHandle> out;
  flatten_into(*this, out);
  return out;
}

bool RunnableNode::contains(std::string_view block_id) const { return find(block_id) != nullptr; }

BlockHandle RunnableNode::find(std::string_view block_id) const {
  if (kind() == Kind::Block) return block()->id() == block_id ? block() : nullptr;
  for (const auto& child : branches()) {
    if (auto b = child.find(block_id)) return b;
  }
  return nullptr;
}

bool operator==(const RunnableNode& a, const RunnableNode& b) {
  if (a.kind() != b.kind()) return false;
  if (a.kind() == RunnableNode::Kind::Block) return a.block()->id() == b.block()->id();
  const auto& ca = a.branches();
  const auto& cb = b.branches();
  if (ca.size() != cb.size()) return false;
  for (std::size_t i = 0; i < ca.size(); ++i) {
    if (!(ca[i] == cb[i])) return false;
  }
  return true;
}

RunnableNode compose_sequential(RunnableNode left, RunnableNode right) {
  require_disjoint({&left, &right});
  return RunnableNode(std::make_shared<const RunnableNode::Impl>(RunnableNode::Impl{
      RunnableNode::Kind::Chain, nullptr, {std::move(left), std::move(right)}}));
}

RunnableNode compose_parallel(std::vector<RunnableNode> branches) {
  if (branches.size() < 2) {
    throw Error(ErrorCode::TooFewBranches, "a parallel block needs at least two branches");
  }
  std::vector<const RunnableNode*> parts;
  for (const auto& b : branches) parts.push_back(&b);
  require_disjoint(parts);
  return RunnableNode(std::make_shared<const RunnableNode::Impl>(
      RunnableNode::Impl{RunnableNode::Kind::Parallel, nullptr, std::move(branches)}));
}

// ---------------------------------------------------------------------------
// Shutdown

void ShutdownState::trip(std::string reason) {
  std::lock_guard lock(mutex_);
  if (active_.load()) return;
  reason_ = std::move(reason);
  since_ = std::chrono::system_clock::now();
  active_.store(true, std::memory_order_release);
}

void ShutdownState::reset() {
  std::lock_guard lock(mutex_);
  active_.store(false, std::memory_order_release);
  reason_.clear();
  since_ = {};
}

ShutdownState::Snapshot ShutdownState::snapshot() const {
  std::lock_guard lock(mutex_);
  return {active_.load(), reason_, since_};
}

Json ShutdownState::to_json() const {
  auto s = snapshot();
  Json doc = {{"active", s.active}, {"reason", s.reason}};
  doc["since"] = s.active ? std::chrono::duration_cast<std::chrono::milliseconds>(
                                s.since.time_since_epoch()).count()
                          : 0;
  return doc;
}

// ---------------------------------------------------------------------------
// Execution

Json make_routing_plan(std::vector<std::size_t> branches, Json input) {
  return Json{{"kind", "routing_plan"}, {"branches", std::move(branches)}, {"input", std::move(input)}};
}

bool is_routing_plan(const TypedValue& value) {
  return value.data_type == DataType::Structure && value.payload.is_object() &&
         value.payload.value("kind", "") == "routing_plan";
}

namespace {

bool type_matches(SemanticType type, const Json& v) {
  switch (type) {
    case SemanticType::Number: return v.is_number();
    case SemanticType::Integer:
      return v.is_number_integer() ||
             (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>());
    case SemanticType::Text: return v.is_string();
    case SemanticType::Boolean: return v.is_boolean();
    case SemanticType::Row:
      return payload_matches(DataType::Row, v);
    case SemanticType::Table: return v.is_array() || v.is_object();
  }
  return false;
}

void check_one(const MethodDescriptor& method, const Param& p, const Json& v) {
  if (!type_matches(p.type, v)) {
    throw Error(ErrorCode::TypeMismatch,
                "parameter '" + p.name + "' of '" + method.name + "' expects " +
                    std::string(to_string(p.type)),
                p.name);
  }
  if (p.validator) p.validator(v);
}

TypedValue call_stage(const Block& block, const Method& method, const TypedValue& input,
                      CallContext& ctx) {
  const auto& desc = method.descriptor;
  Json args = Json::object();
  if (!desc.params.empty()) {
    const Json& payload = is_routing_plan(input) ? input.payload["input"] : input.payload;
    args[desc.params.front().name] = payload;
  }
  args = check_arguments(desc, args);
  ctx.trace.emplace_back(block.id(), desc.name);
  const std::string saved = std::exchange(ctx.current_block, block.id());
  TypedValue out = method.fn(args, ctx);
  ctx.current_block = saved;
  return out;
}

enum class Mode { Predict, Transform };

TypedValue run_node(const RunnableNode& node, const TypedValue& input, CallContext& ctx,
                    Mode mode) {
  switch (node.kind()) {
    case RunnableNode::Kind::Block: {
      const Block& block = *node.block();
      const Method* method = nullptr;
      if (mode == Mode::Predict) {
        method = block.predict_method();
        if (!method) method = block.transform_method();
      } else {
        method = block.transform_method();
      }
      if (!method) return input;
      return call_stage(block, *method, input, ctx);
    }
    case RunnableNode::Kind::Chain: {
      TypedValue mid = run_node(node.left(), input, ctx, mode);
      return run_node(node.right(), mid, ctx, mode);
    }
    case RunnableNode::Kind::Parallel: {
      const auto& branches = node.branches();
      std::vector<bool> selected(branches.size(), true);
      TypedValue branch_input = input;
      if (is_routing_plan(input)) {
        std::fill(selected.begin(), selected.end(), false);
        for (const auto& idx : input.payload["branches"]) {
          auto i = idx.get<std::size_t>();
          if (i >= branches.size()) {
            throw Error(ErrorCode::ArityMismatch,
                        "routing plan names branch " + std::to_string(i) + " of a " +
                            std::to_string(branches.size()) + "-branch group");
          }
          selected[i] = true;
        }
        branch_input = TypedValue::row(input.payload["input"]);
      }
      std::vector<std::optional<TypedValue>> outputs;
      bool all_scalar = true;
      for (std::size_t i = 0; i < branches.size(); ++i) {
        if (!selected[i]) {
          outputs.emplace_back();
          continue;
        }
        outputs.emplace_back(run_node(branches[i], branch_input, ctx, mode));
        all_scalar = all_scalar && outputs.back()->data_type == DataType::Scalar;
      }
      Json collected = Json::array();
      for (const auto& o : outputs) collected.push_back(o ? o->payload : Json(nullptr));
      return {all_scalar ? DataType::Vector : DataType::Table, std::move(collected)};
    }
  }
  return input;
}

bool has_transform(const RunnableNode& node) {
  for (const auto& b : node.flatten()) {
    if (b->transform_method()) return true;
  }
  return false;
}

}  // namespace

Json check_arguments(const MethodDescriptor& method, const Json& args) {
  if (!args.is_object()) {
    throw Error(ErrorCode::TypeMismatch, "arguments must be an object");
  }
  for (const auto& [key, value] : args.items()) {
    bool known = std::any_of(method.params.begin(), method.params.end(),
                             [&](const Param& p) { return p.name == key; });
    if (!known) {
      throw Error(ErrorCode::TypeMismatch,
                  "unknown parameter '" + key + "' for '" + method.name + "'", key);
    }
  }
  Json completed = Json::object();
  for (const auto& p : method.params) {
    auto it = args.find(p.name);
    if (it == args.end() || it->is_null()) {
      if (!p.default_value) {
        throw Error(ErrorCode::TypeMismatch,
                    "missing parameter '" + p.name + "' for '" + method.name + "'", p.name);
      }
      completed[p.name] = *p.default_value;
      continue;
    }
    check_one(method, p, *it);
    completed[p.name] = *it;
  }
  return completed;
}

TypedValue run_predict(const RunnableNode& node, const TypedValue& input, CallContext& ctx) {
  if (ctx.shutdown && ctx.shutdown->active()) {
    throw Error(ErrorCode::ShutdownActive, "pipeline is shut down: " + ctx.shutdown->snapshot().reason);
  }
  if (ctx.request_row.is_null() && input.data_type == DataType::Row) ctx.request_row = input.payload;
  return run_node(node, input, ctx, Mode::Predict);
}

TypedValue run_transform(const RunnableNode& node, const TypedValue& input, CallContext& ctx) {
  if (!has_transform(node)) {
    throw Error(ErrorCode::NoTransformMethod, "runnable has no transform method");
  }
  if (ctx.request_row.is_null() && input.data_type == DataType::Row) ctx.request_row = input.payload;
  return run_node(node, input, ctx, Mode::Transform);
}

Json UpdateReport::to_json() const {
  Json doc = {{"origin", origin}, {"visited", Json::array()}, {"errors", Json::array()}};
  for (const auto& [b, m] : visited) doc["visited"].push_back({{"block", b}, {"method", m}});
  for (const auto& [b, e] : errors) doc["errors"].push_back({{"block", b}, {"message", e}});
  return doc;
}

UpdateReport propagate_update(const RunnableNode& node, std::string_view origin) {
  const auto blocks = node.flatten();
  auto it = std::find_if(blocks.begin(), blocks.end(),
                         [&](const BlockHandle& b) { return b->id() == origin; });
  if (it == blocks.end()) {
    throw Error(ErrorCode::UnknownBlock, "unknown block '" + std::string(origin) + "'",
                std::string(origin));
  }
  UpdateReport report;
  report.origin = std::string(origin);
  for (++it; it != blocks.end(); ++it) {
    const Block& block = **it;
    for (const auto& m : block.methods()) {
      if (m.descriptor.role != MethodRole::Update || !m.descriptor.nullary()) continue;
      report.visited.emplace_back(block.id(), m.descriptor.name);
      try {
        CallContext ctx;
        ctx.current_block = block.id();
        m.fn(check_arguments(m.descriptor, Json::object()), ctx);
      } catch (const std::exception& e) {
        report.errors.emplace_back(block.id(), e.what());
      }
    }
  }
  return report;
}

Json serialize_method(const MethodDescriptor& method) {
  Json params = Json::array();
  for (const auto& p : method.params) {
    Json doc = {{"name", p.name}, {"type", to_string(p.type)}, {"required", !p.default_value}};
    if (p.default_value) doc["default"] = *p.default_value;
    if (!p.description.empty()) doc["description"] = p.description;
    params.push_back(std::move(doc));
  }
  return {{"name", method.name},
          {"role", to_string(method.role)},
          {"params", std::move(params)},
          {"returns", to_string(method.returns)},
          {"description", method.description}};
}

Json serialize_structure(const RunnableNode& node) {
  switch (node.kind()) {
    case RunnableNode::Kind::Block: {
      const Block& b = *node.block();
      Json methods = Json::array();
      for (const auto& m : b.methods()) methods.push_back(serialize_method(m.descriptor));
      return {{"kind", "block"},
              {"id", b.id()},
              {"display_name", b.display_name()},
              {"block_kind", b.kind()},
              {"methods", std::move(methods)}};
    }
    case RunnableNode::Kind::Chain:
      return {{"kind", "chain"},
              {"children", Json::array({serialize_structure(node.left()),
                                        serialize_structure(node.right())})}};
    case RunnableNode::Kind::Parallel: {
      Json branches = Json::array();
      for (const auto& b : node.branches()) branches.push_back(serialize_structure(b));
      return {{"kind", "parallel"}, {"branches", std::move(branches)}};
    }
  }
  return {};
}

InvokeResult invoke_method(const RunnableNode& node, std::string_view block_id,
                           std::string_view method_name, const Json& args, CallContext& ctx) {
  auto block = node.find(block_id);
  if (!block) {
    throw Error(ErrorCode::UnknownBlock, "unknown block '" + std::string(block_id) + "'",
                std::string(block_id));
  }
  const Method* method = block->find(method_name);
  if (!method) {
    throw Error(ErrorCode::UnknownMethod,
                "block '" + block->id() + "' has no method '" + std::string(method_name) + "'",
                std::string(method_name));
  }
  Json completed = check_arguments(method->descriptor, args);
  ctx.trace.emplace_back(block->id(), method->descriptor.name);
  const std::string saved = std::exchange(ctx.current_block, block->id());
  InvokeResult result{method->fn(completed, ctx), is_mutating(method->descriptor.role)};
  ctx.current_block = saved;
  return result;
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(RunnableNode root, std::shared_ptr<ShutdownState> shutdown)
    : root_(std::move(root)), shutdown_(std::move(shutdown)) {}

Pipeline::PredictResult Pipeline::predict_unlocked(const TypedValue& input, bool dry_run) const {
  CallContext ctx;
  ctx.shutdown = shutdown_.get();
  ctx.dry_run = dry_run;
  TypedValue out = run_predict(root_, input, ctx);
  return {std::move(out), std::move(ctx.events), std::move(ctx.trace)};
}

Pipeline::PredictResult Pipeline::predict(const TypedValue& input) const {
  std::shared_lock lock(mutex_);
  return predict_unlocked(input);
}

TypedValue Pipeline::transform(const TypedValue& input) const {
  std::shared_lock lock(mutex_);
  CallContext ctx;
  ctx.shutdown = shutdown_.get();
  return run_transform(root_, input, ctx);
}

Pipeline::MutationResult Pipeline::invoke(std::string_view block_id, std::string_view method,
                                          const Json& args) const {
  auto block = root_.find(block_id);
  const Method* m = block ? block->find(method) : nullptr;
  const bool mutating = m && is_mutating(m->descriptor.role);
  if (m && m->descriptor.role == MethodRole::Predict && shutdown_->active()) {
    throw Error(ErrorCode::ShutdownActive,
                "pipeline is shut down: " + shutdown_->snapshot().reason);
  }
  CallContext ctx;
  ctx.shutdown = shutdown_.get();
  MutationResult out;
  if (mutating) {
    std::unique_lock lock(mutex_);
    out.result = invoke_method(root_, block_id, method, args, ctx);
    out.report = propagate_update(root_, block_id);
  } else {
    std::shared_lock lock(mutex_);
    out.result = invoke_method(root_, block_id, method, args, ctx);
  }
  out.events = std::move(ctx.events);
  return out;
}

Json Pipeline::state_document() const {
  Json doc = Json::object();
  for (const auto& b : root_.flatten()) doc[b->id()] = b->state_digest();
  doc["__shutdown"] = shutdown_->to_json();
  return doc;
}

}  // namespace matchlike
