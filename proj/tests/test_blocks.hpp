#pragma once

// Small blocks shared by the unit tests.

#include <atomic>
#include <memory>
#include <string>
#include <vector>

#include "matchlike/pipeline.hpp"

namespace matchlike::testing {

inline Method transform_method(std::string name, std::function<Json(const Json&)> fn) {
  MethodDescriptor d{std::move(name), MethodRole::Transform, {Param{"x", SemanticType::Number}},
                     SemanticType::Number, "test transform"};
  return {d, [fn](const Json& args, CallContext&) { return TypedValue::scalar(fn(args["x"]).get<double>()); }};
}

inline Method constant_predict(double value) {
  MethodDescriptor d{"predict", MethodRole::Predict, {Param{"x", SemanticType::Number, Json(0)}},
                     SemanticType::Number, "constant"};
  return {d, [value](const Json&, CallContext&) { return TypedValue::scalar(value); }};
}

/// Update method that counts its invocations.
inline Method counting_update(std::string name, std::shared_ptr<std::atomic<int>> counter) {
  MethodDescriptor d{std::move(name), MethodRole::Update, {}, SemanticType::Table, "refresh"};
  return {d, [counter](const Json&, CallContext&) {
            ++*counter;
            return TypedValue::structure({{"ok", true}});
          }};
}

inline Method read_method(std::string name) {
  MethodDescriptor d{std::move(name), MethodRole::Read, {}, SemanticType::Table, "read"};
  return {d, [](const Json&, CallContext&) { return TypedValue::structure({{"read", true}}); }};
}

}  // namespace matchlike::testing
