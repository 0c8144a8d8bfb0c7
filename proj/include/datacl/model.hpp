#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "datacl/adapter.hpp"
#include "datacl/matrix.hpp"
#include "datacl/rng.hpp"
#include "datacl/tape.hpp"
#include "datacl/tasks.hpp"
#include "datacl/weighting.hpp"

namespace datacl {

struct ModelFlags {
  bool high_branch = true;
  bool low_branch = true;
  bool weighting = true;
  bool attention = true;
  bool ortho = true;
  bool restore = true;
  bool scalar_lambda = false;
  bool dual_bank = false;
};

struct ModelConfig {
  std::size_t d_in = 32;
  std::size_t classes = 4;
  std::size_t hidden = 64;
  std::size_t d_l = 2;
  std::size_t d_h = 8;
  std::size_t l_w = 8;
  std::size_t per_task_components = 2;
  double beta = 10.0;
  ModelFlags flags;
};

struct LinearLayer {
  Matrix W;  // d_out x d_in
  Matrix b;  // 1 x d_out
};

// Frozen 3-layer classifier with decomposed adapters on both hidden linear
// layers. The head stays shared across tasks; every task uses the same
// label space.
struct ModelState {
  ModelConfig cfg;
  std::vector<DecomposedAdapterLayer> hidden;  // 2 adapted layers
  LinearLayer head;
  std::vector<ComponentBank> banks;      // per adapted layer (shared, or high when dual)
  std::vector<ComponentBank> banks_low;  // per adapted layer, dual-bank mode only
  // Stored per-task mean queries for static-mode evaluation: [task][layer].
  std::vector<std::vector<Matrix>> task_queries;

  bool use_adapters() const { return cfg.flags.high_branch || cfg.flags.low_branch; }
  std::size_t adapted_layers() const { return hidden.size(); }
};

// Backbone with random init; adapters and banks attached per flags. The
// backbone is trained separately (see trainer) and then frozen.
ModelState build_model(const ModelConfig& cfg, Rng& init_rng);

struct ParamRef {
  std::string name;
  std::string group;  // gradcheck/reporting bucket
  Matrix* value = nullptr;
};

// Trainable parameters in a stable order. Backbone weights appear only when
// `include_backbone` (pretraining phase).
std::vector<ParamRef> collect_trainable(ModelState& model, bool include_backbone);

struct LossBuild {
  Tape::NodeId total = -1;
  Tape::NodeId task = -1;
  Tape::NodeId ortho = -1;  // -1 when no penalty contributes
  std::vector<Tape::NodeId> param_nodes;  // parallel to the ParamRef list used
  std::vector<Matrix> queries;            // per adapted layer (empty when unused)
};

// Records the full forward pass and loss on the tape. `params` must come
// from collect_trainable on the same model. Queries are pooled from the
// batch unless `pinned_queries` supplies them (finite-difference checks pin
// them to honour the stop-gradient).
LossBuild build_loss(Tape& tape, ModelState& model, const std::vector<ParamRef>& params,
                     const Matrix& x, const std::vector<int>& labels, double beta,
                     bool backbone_trainable = false,
                     const std::vector<Matrix>* pinned_queries = nullptr);

enum class EvalMode { kDynamic, kStatic };

// Value-only forward. Dynamic mode pools the query from the given rows;
// static mode reparameterizes each adapted layer with the stored query of
// `task` and runs the merged weights.
Matrix forward_logits(const ModelState& model, const Matrix& x);
Matrix forward_logits_static(const ModelState& model, const Matrix& x, std::size_t task);

// Fraction of correctly classified samples. Dynamic mode scores each sample
// with its own query.
double evaluate_accuracy(const ModelState& model, const Dataset& data, EvalMode mode,
                         std::size_t task = 0);

// Mean queries of each adapted layer over a dataset, for static-mode reuse.
std::vector<Matrix> layer_queries(const ModelState& model, const Matrix& x);

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  bool skipped = false;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_err = 0.0;
};

// Central finite differences against the tape gradients, grouped by
// parameter role. `corrupt_group` perturbs one analytic gradient entry to
// exercise the failure path.
GradCheckReport grad_check(ModelState& model, const Matrix& x, const std::vector<int>& labels,
                           double beta, double eps, const std::string& corrupt_group = "");

}  // namespace datacl
