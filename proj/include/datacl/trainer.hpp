#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "datacl/lifecycle.hpp"
#include "datacl/metrics.hpp"
#include "datacl/model.hpp"
#include "datacl/rng.hpp"
#include "datacl/tasks.hpp"

namespace datacl {

enum class Method { kData, kSeqLora, kDataReplay, kLoraReplay };

const char* to_string(Method m);
Method method_from_string(const std::string& s);
bool method_uses_replay(Method m);

// Ablation switches resolved per method: the LoRA baselines run the same
// code path with a single high-rank branch and everything else off.
ModelFlags flags_for_method(Method m);

struct RunConfig {
  Method method = Method::kData;
  ModelFlags flags = flags_for_method(Method::kData);
  double beta = 10.0;
  double lr = 1e-4;
  std::size_t epochs = 80;
  std::size_t batch_size = 8;
  double replay_ratio = 0.02;
  std::uint64_t seed = 1;
  std::size_t d_l = 2;
  std::size_t d_h = 8;
  std::size_t l_w = 8;
  std::size_t per_task_components = 2;
  std::size_t hidden = 64;
  RestorationPolicy restore_policy{0.01, 200};
  std::size_t pretrain_steps = 300;
  StreamConfig stream;
  std::uint64_t order_seed = 0;
  std::size_t stop_after_task = 0;  // 0 = run the full stream
  std::string gradcheck_corrupt_group;

  ModelConfig model_config() const;
};

struct AdamOptimizer {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t t = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  void reset(const std::vector<ParamRef>& params);
  void step(const std::vector<ParamRef>& params, const std::vector<Matrix>& grads);
};

// Uniform samples from completed tasks, fixed fraction per task.
struct ReplayBuffer {
  Matrix x;
  std::vector<int> y;
  std::vector<int> task_id;

  std::size_t size() const { return y.size(); }
  // Stores ceil(ratio * train size) samples drawn without replacement.
  void add_task_samples(const Dataset& train, int task, double ratio, Rng& rng);
};

struct StepLogRow {
  std::size_t step = 0;  // global across the run
  std::size_t task = 0;
  double loss = 0.0;
  double ortho = 0.0;
  std::size_t restored = 0;
};

struct TrainState {
  RunConfig cfg;
  ModelState model;
  ReplayBuffer buffer;
  AccuracyMatrix acc;
  AccuracyMatrix acc_static;
  bool has_static = false;
  std::size_t tasks_done = 0;
  std::size_t global_step = 0;
  Rng rng_train{0};
  Rng rng_replay{0};
  Rng rng_restore{0};
  Rng rng_init{0};
  std::vector<StepLogRow> log;
};

// Builds the model and pretrains the backbone on the generic distribution,
// then freezes it.
TrainState init_train_state(const RunConfig& cfg);

// Appends and freezes bank components for the upcoming task (weighting
// methods only).
void expand_for_new_task(TrainState& st);

// Gradient steps on the current task; expansion must already have happened.
// Throws on divergence (non-finite loss or 1000x the initial loss).
void train_task(TrainState& st, const Task& task);

// expand + train + fill column tasks_done of the accuracy matrices.
void train_one_task(TrainState& st, const TaskStream& stream);

// Zeroes gradient entries of frozen components; the optimizer must never see
// them. Grads run parallel to params.
void mask_frozen_gradients(const ModelState& model, const std::vector<ParamRef>& params,
                           std::vector<Matrix>& grads);

struct RunResult {
  AccuracyMatrix acc;
  std::optional<AccuracyMatrix> acc_static;
  std::vector<StepLogRow> log;
};

using TaskHook = std::function<void(const TrainState&)>;

// Full sequential run over the stream (honours cfg.stop_after_task). The
// hook fires after every completed task.
RunResult train_sequence(const RunConfig& cfg, const TaskStream& stream,
                         const TaskHook& hook = {});

struct AblationRow {
  std::string name;
  ModelFlags flags;
};

// Table rows E1..E8: branch, restoration, weighting, attention and
// orthogonality switches stacked in the usual order.
std::vector<AblationRow> ablation_rows();

struct AblationResult {
  std::string row;
  std::vector<double> fp_per_seed;  // 0-100 scale
  double mean_fp = 0.0;
};

// One run per (row, seed) with the stream seed paired to the run seed.
// `threads` bounds parallel runs.
std::vector<AblationResult> ablation_grid(const RunConfig& base,
                                          const std::vector<std::uint64_t>& seeds,
                                          std::size_t threads = 1);

}  // namespace datacl
