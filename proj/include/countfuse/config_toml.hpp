#pragma once

#include <string>

#include "countfuse/pipeline.hpp"

namespace countfuse {

// Loads a TOML config file into the run configuration. Supported subset:
// comments, [section] tables, string/number/boolean scalars and single-line
// arrays. Unknown or ill-typed keys raise input_error naming the field path.
void apply_config_file(RunConfig& cfg, const std::string& path);

}  // namespace countfuse
