#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tst/cli/config.hpp"

namespace tst::cli {

struct Preset {
  std::string name;
  std::size_t n_blocks = 3;
  std::size_t n_heads = 16;
  std::size_t d_model = 128;
  std::size_t d_ff = 256;
  std::optional<std::size_t> batch_size;
};

enum class PresetTable { Supervised, Unsupervised };

inline constexpr std::string_view kDefaultPreset = "good-default";

/// Architecture for a dataset name; unsupervised runs use the pretraining
/// table. Returns nullopt for names not in either table.
std::optional<Preset> find_preset(std::string_view name, PresetTable table);

/// Names present in the tables (plus good-default).
std::vector<std::string> preset_names();

/// Settings a preset contributes, falling back to good-default for unknown
/// names. `resolved` receives the preset actually used.
Settings preset_settings(std::string_view name, PresetTable table, std::string* resolved = nullptr);

}  // namespace tst::cli
