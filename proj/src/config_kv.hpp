#pragma once

#include <string>

#include "kv_text.hpp"
#include "mata/model.hpp"

namespace mata::detail {

/// Applies one ModelConfig field. Returns false if the key is not a config field.
bool apply_config_entry(ModelConfig& config, const KvEntry& e, const std::string& source);

}  // namespace mata::detail
