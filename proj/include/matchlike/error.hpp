#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace matchlike {

enum class ErrorCode {
  // core pipeline
  DuplicateMethodName,
  MultiplePredictMethods,
  MultipleTransformMethods,
  DuplicateBlockInChain,
  TooFewBranches,
  ShutdownActive,
  TypeMismatch,
  RejectedByFilter,
  NoTransformMethod,
  UnknownBlock,
  UnknownMethod,
  // tabular data and models
  SchemaMismatch,
  MissingHeader,
  EmptyDataset,
  SingleClassDataset,
  DimensionMismatch,
  IndexOutOfRange,
  // rules
  ParseError,
  UnboundField,
  AttributionUnavailable,
  // control blocks
  NoBranchMatched,
  EmptyOutputs,
  ArityMismatch,
  UnknownLabel,
  NoPendingCorrections,
  // explainers
  TargetNotPredictive,
  TooManyFeaturesForExact,
  KTooLarge,
  // api / agent / cli
  UnknownRoute,
  UnknownTool,
  UnknownBlockId,
  InvalidConfig,
};

std::string_view to_string(ErrorCode code);

/// Single exception type used across the library. `detail` carries the
/// offending name (parameter, column, block id) when there is one, and
/// `position` the byte offset for parse errors.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, std::string detail = {},
        std::size_t position = npos)
      : std::runtime_error(std::move(message)),
        code_(code),
        detail_(std::move(detail)),
        position_(position) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  std::size_t position() const noexcept { return position_; }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  ErrorCode code_;
  std::string detail_;
  std::size_t position_;
};

}  // namespace matchlike
