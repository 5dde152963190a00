#pragma once

#include <string>
#include <vector>

#include "stvit/model.hpp"

namespace stvit {

/// Names of all built-in model configurations.
std::vector<std::string> preset_names();

/// Throws ConfigError listing the known names when `name` is unknown.
ModelConfig preset(const std::string& name);

/// Presets swept by the FLOPs table, in table order.
std::vector<std::string> table_presets();

/// One CSV row per table preset (header included).
std::string flops_table_csv();

}  // namespace stvit
