#pragma once

#include <memory>
#include <string>

#include "fixtures.hpp"
#include "matchlike/config.hpp"

namespace matchlike::testing {

inline Json fixture_config(const std::string& name) { return load_json_file(data_path(name)); }

inline std::unique_ptr<BuiltPipeline> build_fixture(const Json& config) {
  BuildOptions options;
  options.base_dir = MATCHLIKE_TEST_DATA;
  return build_pipeline(config, options);
}

inline std::unique_ptr<BuiltPipeline> build_named(const std::string& name) {
  return build_fixture(fixture_config(name));
}

}  // namespace matchlike::testing
