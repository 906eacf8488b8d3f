#pragma once

// Declarative pipeline configs: the chain expression language and the builder
// that turns a JSON config into a running pipeline and its API service.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "matchlike/api.hpp"
#include "matchlike/control.hpp"
#include "matchlike/pipeline.hpp"

namespace matchlike {

/// expr := term ("|" term)* ; term := id | "ParallelBlock(" expr ("," expr)+ ")".
/// Pipes associate to the left. Throws ParseError (position, expected) and
/// UnknownBlockId.
RunnableNode parse_chain_expression(std::string_view text,
                                    const std::map<std::string, BlockHandle, std::less<>>& blocks);

/// Inverse of parse_chain_expression for left-associated trees.
std::string format_chain_expression(const RunnableNode& node);

struct BuiltPipeline {
  Registry registry;
  std::map<std::string, BlockHandle, std::less<>> blocks;
  std::shared_ptr<DatasetState> dataset;
  std::map<std::string, std::shared_ptr<ModelState>> models;
  std::shared_ptr<Pipeline> pipeline;
  std::shared_ptr<Service> service;
  std::uint64_t seed = 0;
};

struct BuildOptions {
  /// Directory that relative dataset paths resolve against.
  std::string base_dir = ".";
  std::optional<std::uint64_t> seed_override;
  /// Directory written by `train`; models found there are loaded instead of
  /// trained.
  std::optional<std::string> models_dir;
};

/// Validates the config, loads the dataset, builds and trains every block and
/// composes the chain. Throws InvalidConfig naming the offending entry.
std::unique_ptr<BuiltPipeline> build_pipeline(const Json& config, const BuildOptions& options);

Json load_json_file(const std::string& path);

/// MATCHLIKE_SEED when set to an unsigned integer.
std::optional<std::uint64_t> seed_from_environment();

/// Persisted model document: {"version": 1, "block", "model"}.
Json model_document(const std::string& block_id, const Model& model);
Model model_from_document(const Json& doc);

}  // namespace matchlike
