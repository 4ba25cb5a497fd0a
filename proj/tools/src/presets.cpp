#include "tst/cli/presets.hpp"

#include <array>

namespace tst::cli {

namespace {

struct Row {
  std::string_view name;
  std::size_t blocks, heads, d_model, d_ff;
};

// Supervised and pretraining architectures per dataset.
constexpr std::array<Row, 16> kSupervised = {{
    {"AppliancesEnergy", 3, 8, 128, 512},
    {"BenzeneConcentration", 3, 8, 128, 256},
    {"BeijingPM10Quality", 3, 8, 64, 256},
    {"BeijingPM25Quality", 3, 8, 64, 256},  // listed as "64 (128)"
    {"LiveFuelMoistureContent", 3, 8, 64, 256},
    {"IEEEPPG", 3, 8, 512, 512},
    {"EthanolConcentration", 1, 8, 64, 256},
    {"FaceDetection", 3, 8, 128, 256},
    {"Handwriting", 1, 8, 128, 256},
    {"Heartbeat", 1, 8, 64, 256},
    {"JapaneseVowels", 3, 8, 128, 256},
    {"PEMS-SF", 1, 8, 128, 512},
    {"SelfRegulationSCP1", 3, 8, 128, 256},
    {"SelfRegulationSCP2", 3, 8, 128, 256},
    {"SpokenArabicDigits", 3, 8, 64, 256},
    {"UWaveGestureLibrary", 3, 16, 256, 256},
}};

constexpr std::array<Row, 16> kUnsupervised = {{
    {"AppliancesEnergy", 3, 16, 128, 512},
    {"BenzeneConcentration", 1, 8, 128, 256},
    {"BeijingPM10Quality", 3, 8, 64, 256},
    {"BeijingPM25Quality", 3, 8, 128, 256},
    {"LiveFuelMoistureContent", 3, 8, 64, 256},
    {"IEEEPPG", 4, 16, 512, 512},
    {"EthanolConcentration", 1, 8, 64, 256},
    {"FaceDetection", 3, 8, 128, 256},
    {"Handwriting", 3, 16, 64, 256},
    {"Heartbeat", 1, 8, 64, 256},
    {"JapaneseVowels", 3, 8, 128, 256},
    {"PEMS-SF", 1, 8, 256, 512},
    {"SelfRegulationSCP1", 3, 16, 256, 512},
    {"SelfRegulationSCP2", 3, 8, 256, 512},
    {"SpokenArabicDigits", 3, 8, 64, 256},
    {"UWaveGestureLibrary", 3, 16, 256, 512},
}};

Preset good_default() {
  Preset p;
  p.name = std::string(kDefaultPreset);
  p.n_blocks = 3;
  p.n_heads = 16;
  p.d_model = 128;
  p.d_ff = 256;
  p.batch_size = 128;
  return p;
}

}  // namespace

std::optional<Preset> find_preset(std::string_view name, PresetTable table) {
  if (name == kDefaultPreset) return good_default();
  const auto& rows = table == PresetTable::Supervised ? kSupervised : kUnsupervised;
  for (const auto& r : rows) {
    if (r.name == name) return Preset{std::string(r.name), r.blocks, r.heads, r.d_model, r.d_ff, std::nullopt};
  }
  return std::nullopt;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out{std::string(kDefaultPreset)};
  for (const auto& r : kSupervised) out.emplace_back(r.name);
  return out;
}

Settings preset_settings(std::string_view name, PresetTable table, std::string* resolved) {
  Preset p = find_preset(name, table).value_or(good_default());
  if (resolved) *resolved = p.name;
  Settings s{
      {"model.n_blocks", std::to_string(p.n_blocks)},
      {"model.n_heads", std::to_string(p.n_heads)},
      {"model.d_model", std::to_string(p.d_model)},
      {"model.d_ff", std::to_string(p.d_ff)},
      {"model.dropout", "0.1"},
      {"model.positional", "learnable"},
      {"train.lr", "0.001"},
  };
  if (p.batch_size) s["train.batch_size"] = std::to_string(*p.batch_size);
  return s;
}

}  // namespace tst::cli
