#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tst/data.hpp"
#include "tst/masking.hpp"
#include "tst/model.hpp"

namespace tst {

/// Unreadable, incompatible or corrupt checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loop position needed to resume training exactly.
struct TrainState {
  std::uint64_t epoch = 0;            // completed epochs
  std::string rng_state;              // serialize_rng of the loop engine
  double best_metric = 0.0;
  double best_loss = 0.0;
  std::uint64_t best_epoch = 0;
  std::uint64_t stale_epochs = 0;
  std::uint64_t optimizer_step = 0;
  bool has_best = false;
};

/// Everything a run leaves behind.
///
/// Byte layout (little endian):
///   "TSTCKPT\0"                    8 bytes magic
///   u32 version                    currently 1
///   u64 n, n bytes                 JSON metadata (config, normalization, loop state)
///   u64 tensor count
///   per tensor: u32 name length, name bytes, u8 dtype (0 = f64, 1 = f32),
///               u32 rank, u64 dims[rank], u64 byte count, raw values
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig model;
  std::vector<NamedTensor> tensors;  // model state (parameters and norm buffers)
  std::vector<NamedTensor> aux;      // optimizer moments, best-so-far snapshot
  NormStats norm;
  NormalizationMode norm_mode = NormalizationMode::StdDev;
  TrainState train;
  std::optional<MaskSpec> mask;
  std::vector<std::string> class_names;
  std::map<std::string, std::string> meta;  // free-form run settings

  TSTModel build_model() const;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws CheckpointError naming the first encoder setting that differs.
/// The head is not compared.
void check_encoder_compatible(const ModelConfig& saved, const ModelConfig& wanted);

struct TensorDiff {
  std::string name;
  double max_abs = 0.0;  // infinity when shapes differ or one side lacks it
};

/// Tensors of `a.tensors` and `b.tensors` that are not bitwise identical.
std::vector<TensorDiff> diff_checkpoints(const Checkpoint& a, const Checkpoint& b);

}  // namespace tst
