#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "datacl/trainer.hpp"

namespace datacl {

struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;  // row-major, little-endian on disk
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t config_hash = 0;
  std::uint32_t task_index = 0;  // tasks completed
  std::uint64_t step = 0;        // global optimizer step
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Full training state at a task boundary, including RNG stream positions,
// the replay buffer and the partial accuracy matrices.
Checkpoint snapshot_state(const TrainState& st);

// Rebuilds the state for `cfg`; throws if the checkpoint's config hash does
// not match the config.
TrainState restore_state(const RunConfig& cfg, const Checkpoint& ck);

}  // namespace datacl
