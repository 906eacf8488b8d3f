#include "matchlike/value.hpp"

#include <array>
#include <charconv>
#include <cmath>

#include "matchlike/error.hpp"

namespace matchlike {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DuplicateMethodName: return "DuplicateMethodName";
    case ErrorCode::MultiplePredictMethods: return "MultiplePredictMethods";
    case ErrorCode::MultipleTransformMethods: return "MultipleTransformMethods";
    case ErrorCode::DuplicateBlockInChain: return "DuplicateBlockInChain";
    case ErrorCode::TooFewBranches: return "TooFewBranches";
    case ErrorCode::ShutdownActive: return "ShutdownActive";
    case ErrorCode::TypeMismatch: return "TypeMismatch";
    case ErrorCode::RejectedByFilter: return "RejectedByFilter";
    case ErrorCode::NoTransformMethod: return "NoTransformMethod";
    case ErrorCode::UnknownBlock: return "UnknownBlock";
    case ErrorCode::UnknownMethod: return "UnknownMethod";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::MissingHeader: return "MissingHeader";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::SingleClassDataset: return "SingleClassDataset";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnboundField: return "UnboundField";
    case ErrorCode::AttributionUnavailable: return "AttributionUnavailable";
    case ErrorCode::NoBranchMatched: return "NoBranchMatched";
    case ErrorCode::EmptyOutputs: return "EmptyOutputs";
    case ErrorCode::ArityMismatch: return "ArityMismatch";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::NoPendingCorrections: return "NoPendingCorrections";
    case ErrorCode::TargetNotPredictive: return "TargetNotPredictive";
    case ErrorCode::TooManyFeaturesForExact: return "TooManyFeaturesForExact";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::UnknownRoute: return "UnknownRoute";
    case ErrorCode::UnknownTool: return "UnknownTool";
    case ErrorCode::UnknownBlockId: return "UnknownBlockId";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

std::string_view to_string(DataType type) {
  switch (type) {
    case DataType::Scalar: return "scalar";
    case DataType::Vector: return "vector";
    case DataType::Table: return "table";
    case DataType::Row: return "row";
    case DataType::Attribution: return "attribution";
    case DataType::Text: return "text";
    case DataType::Structure: return "structure";
  }
  return "structure";
}

std::optional<DataType> data_type_from_string(std::string_view name) {
  for (auto t : {DataType::Scalar, DataType::Vector, DataType::Table, DataType::Row,
                 DataType::Attribution, DataType::Text, DataType::Structure}) {
    if (to_string(t) == name) return t;
  }
  return std::nullopt;
}

bool payload_matches(DataType type, const Json& payload) {
  switch (type) {
    case DataType::Scalar:
      return payload.is_number() || payload.is_boolean();
    case DataType::Vector:
      if (!payload.is_array()) return false;
      for (const auto& v : payload) {
        if (!v.is_number() && !v.is_null()) return false;
      }
      return true;
    case DataType::Table:
      if (!payload.is_array()) return false;
      for (const auto& v : payload) {
        if (!v.is_object() && !v.is_array() && !v.is_null()) return false;
      }
      return true;
    case DataType::Row:
      if (!payload.is_object()) return false;
      for (const auto& [k, v] : payload.items()) {
        if (!v.is_number() && !v.is_string() && !v.is_boolean()) return false;
      }
      return true;
    case DataType::Attribution:
      return payload.is_object() && payload.contains("values") &&
             payload["values"].is_object() && payload.contains("method");
    case DataType::Text:
      return payload.is_string();
    case DataType::Structure:
      return payload.is_object();
  }
  return false;
}

void TypedValue::validate() const {
  if (!payload_matches(data_type, payload)) {
    throw Error(ErrorCode::TypeMismatch,
                "payload does not match data type '" + std::string(to_string(data_type)) + "'");
  }
}

std::string format_decimal(double value) {
  if (!std::isfinite(value)) return "null";
  if (value == 0.0) return "0";
  std::array<char, 400> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value,
                                 std::chars_format::fixed);
  if (ec != std::errc{}) return "null";
  return std::string(buf.data(), end);
}

namespace {

void dump_into(const Json& doc, std::string& out) {
  switch (doc.type()) {
    case Json::value_t::object: {
      out.push_back('{');
      bool first = true;
      for (const auto& [k, v] : doc.items()) {
        if (!first) out.push_back(',');
        first = false;
        out += Json(k).dump();
        out.push_back(':');
        dump_into(v, out);
      }
      out.push_back('}');
      break;
    }
    case Json::value_t::array: {
      out.push_back('[');
      bool first = true;
      for (const auto& v : doc) {
        if (!first) out.push_back(',');
        first = false;
        dump_into(v, out);
      }
      out.push_back(']');
      break;
    }
    case Json::value_t::number_float:
      out += format_decimal(doc.get<double>());
      break;
    default:
      out += doc.dump(-1, ' ', false, Json::error_handler_t::replace);
  }
}

}  // namespace

std::string dump_decimal(const Json& doc) {
  std::string out;
  dump_into(doc, out);
  return out;
}

}  // namespace matchlike
