#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "datacl/matrix.hpp"

namespace datacl {

enum class ShiftKind { kRotation, kPermutation, kClusterDrift };

const char* to_string(ShiftKind kind);
ShiftKind shift_kind_from_string(const std::string& s);

struct StreamConfig {
  std::size_t n_tasks = 5;
  std::size_t d_in = 32;
  std::size_t classes = 4;
  ShiftKind shift_kind = ShiftKind::kClusterDrift;
  double shift_magnitude = 1.7;
  double shared_weight = 0.25;  // 1 = no shift reaches the data
  std::uint64_t seed = 1;
  std::size_t train_per_task = 1000;
  std::size_t val_per_task = 500;
  std::size_t test_per_task = 500;
};

struct Dataset {
  Matrix x;            // samples x d_in
  std::vector<int> y;  // class labels
  std::size_t size() const { return y.size(); }
};

struct Task {
  int id = 0;  // position in the generated stream, 0-based
  std::uint64_t gen_seed = 0;
  Dataset train;
  Dataset val;
  Dataset test;
};

struct TaskStream {
  StreamConfig config;
  std::vector<Task> tasks;
};

// Class-conditional Gaussian tasks. Every task shares the same class
// geometry; task t sees it through a transform whose strength grows with t
// (rotation angle, transposition count, or centroid drift) and is damped by
// the shared-structure weight. All draws are deterministic under the seed.
TaskStream gen_task_stream(const StreamConfig& cfg);

// Samples from the shared geometry with no task shift, for backbone
// pretraining. Disjoint RNG stream from every task split.
Dataset gen_generic_dataset(const StreamConfig& cfg, std::size_t n);

// Same tasks in permuted order; order_seed 0 keeps the natural order.
TaskStream order_shuffle(const TaskStream& stream, std::uint64_t order_seed);

// CSV layout: feature_0..feature_{d-1}, label, task_id, split.
void export_stream_csv(const TaskStream& stream, std::ostream& out);

}  // namespace datacl
