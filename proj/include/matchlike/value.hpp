#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"

namespace matchlike {

using Json = nlohmann::json;

/// Shape tag carried by every value that flows between blocks and out of the
/// API envelope.
enum class DataType { Scalar, Vector, Table, Row, Attribution, Text, Structure };

std::string_view to_string(DataType type);
std::optional<DataType> data_type_from_string(std::string_view name);

// Payload shapes:
//   scalar      number or boolean
//   vector      array of numbers (null marks an absent entry)
//   table       array whose elements are objects, arrays or null
//   row         object of field -> number | string | boolean
//   attribution object with "values" (object of numbers) and "method"
//   text        string
//   structure   any object
bool payload_matches(DataType type, const Json& payload);

struct TypedValue {
  DataType data_type = DataType::Structure;
  Json payload = Json::object();

  static TypedValue scalar(double v) { return {DataType::Scalar, v}; }
  static TypedValue text(std::string s) { return {DataType::Text, std::move(s)}; }
  static TypedValue row(Json fields) { return {DataType::Row, std::move(fields)}; }
  static TypedValue structure(Json doc) { return {DataType::Structure, std::move(doc)}; }

  /// Throws TypeMismatch when the payload does not have the tagged shape.
  void validate() const;

  friend bool operator==(const TypedValue& a, const TypedValue& b) {
    return a.data_type == b.data_type && a.payload == b.payload;
  }
};

/// Serializes JSON with floating point numbers in plain decimal notation
/// (never scientific). Integral doubles print without a fractional part.
std::string dump_decimal(const Json& doc);

/// Formats a double the way dump_decimal does.
std::string format_decimal(double value);

}  // namespace matchlike
