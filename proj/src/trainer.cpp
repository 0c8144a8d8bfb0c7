#include "datacl/trainer.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>

namespace datacl {

namespace {

constexpr std::size_t kPretrainSamples = 2048;
constexpr std::size_t kPretrainBatch = 32;
constexpr double kPretrainLr = 1e-3;
constexpr double kDivergenceFactor = 1e3;

std::size_t ceil_frac(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n)));
}

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
  Matrix out(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(idx[i], j);
  return out;
}

}  // namespace

const char* to_string(Method m) {
  switch (m) {
    case Method::kData: return "data";
    case Method::kSeqLora: return "seqlora";
    case Method::kDataReplay: return "data_replay";
    case Method::kLoraReplay: return "lora_replay";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "data") return Method::kData;
  if (s == "seqlora") return Method::kSeqLora;
  if (s == "data_replay") return Method::kDataReplay;
  if (s == "lora_replay") return Method::kLoraReplay;
  throw std::invalid_argument("unknown method '" + s +
                              "' (expected data, seqlora, data_replay or lora_replay)");
}

bool method_uses_replay(Method m) {
  return m == Method::kDataReplay || m == Method::kLoraReplay;
}

ModelFlags flags_for_method(Method m) {
  ModelFlags flags;
  if (m == Method::kSeqLora || m == Method::kLoraReplay) {
    flags.high_branch = true;
    flags.low_branch = false;
    flags.weighting = false;
    flags.attention = false;
    flags.ortho = false;
    flags.restore = false;
  }
  return flags;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.d_in = stream.d_in;
  mc.classes = stream.classes;
  mc.hidden = hidden;
  mc.d_l = d_l;
  mc.d_h = d_h;
  mc.l_w = l_w;
  mc.per_task_components = per_task_components;
  mc.beta = beta;
  mc.flags = flags;
  return mc;
}

void AdamOptimizer::reset(const std::vector<ParamRef>& params) {
  t = 0;
  m.clear();
  v.clear();
  for (const ParamRef& p : params) {
    m.emplace_back(p.value->rows(), p.value->cols());
    v.emplace_back(p.value->rows(), p.value->cols());
  }
}

void AdamOptimizer::step(const std::vector<ParamRef>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size() || params.size() != m.size()) {
    throw std::invalid_argument("AdamOptimizer::step: parameter/gradient mismatch");
  }
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i].value;
    const Matrix& g = grads[i];
    for (std::size_t e = 0; e < p.size(); ++e) {
      const double ge = g.data()[e];
      m[i].data()[e] = beta1 * m[i].data()[e] + (1.0 - beta1) * ge;
      v[i].data()[e] = beta2 * v[i].data()[e] + (1.0 - beta2) * ge * ge;
      const double mhat = m[i].data()[e] / bc1;
      const double vhat = v[i].data()[e] / bc2;
      p.data()[e] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void ReplayBuffer::add_task_samples(const Dataset& train, int task, double ratio, Rng& rng) {
  const std::size_t k = ceil_frac(ratio, train.size());
  if (k == 0) return;
  std::vector<std::size_t> idx(train.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // Partial Fisher-Yates: the first k entries are a uniform sample without
  // replacement.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  Matrix nx(size() + k, train.x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) nx.data()[i] = x.data()[i];
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < train.x.cols(); ++j) nx(size() + i, j) = train.x(idx[i], j);
  x = std::move(nx);
  for (std::size_t i = 0; i < k; ++i) {
    y.push_back(train.y[idx[i]]);
    task_id.push_back(task);
  }
}

TrainState init_train_state(const RunConfig& cfg) {
  TrainState st;
  st.cfg = cfg;
  st.rng_train = derive_rng(cfg.seed, "train");
  st.rng_replay = derive_rng(cfg.seed, "replay");
  st.rng_restore = derive_rng(cfg.seed, "restore");
  st.rng_init = derive_rng(cfg.seed, "init");
  st.acc = AccuracyMatrix(cfg.stream.n_tasks);
  st.acc_static = AccuracyMatrix(cfg.stream.n_tasks);
  st.has_static = cfg.flags.weighting;

  Rng model_rng = derive_rng(cfg.seed, "model");
  st.model = build_model(cfg.model_config(), model_rng);

  // Brief supervised pretraining on the shared geometry, then frozen.
  if (cfg.pretrain_steps > 0) {
    const Dataset generic = gen_generic_dataset(cfg.stream, kPretrainSamples);
    std::vector<ParamRef> params = collect_trainable(st.model, true);
    AdamOptimizer adam;
    adam.lr = kPretrainLr;
    adam.reset(params);
    Rng rng = derive_rng(cfg.seed, "pretrain");
    for (std::size_t step = 0; step < cfg.pretrain_steps; ++step) {
      std::vector<std::size_t> idx(kPretrainBatch);
      std::vector<int> labels(kPretrainBatch);
      for (std::size_t i = 0; i < kPretrainBatch; ++i) {
        idx[i] = static_cast<std::size_t>(rng.below(generic.size()));
        labels[i] = generic.y[idx[i]];
      }
      const Matrix bx = gather_rows(generic.x, idx);
      Tape tape;
      LossBuild lb = build_loss(tape, st.model, params, bx, labels, 0.0, true);
      tape.backward(lb.total);
      std::vector<Matrix> grads;
      for (std::size_t i = 0; i < params.size(); ++i) grads.push_back(tape.grad(lb.param_nodes[i]));
      adam.step(params, grads);
    }
  }
  return st;
}

void expand_for_new_task(TrainState& st) {
  if (!st.cfg.flags.weighting || !st.model.use_adapters()) return;
  const std::size_t t = st.tasks_done + 1;  // 1-based task index
  for (ComponentBank& bank : st.model.banks) {
    expand_for_task(bank, t, st.cfg.per_task_components, st.rng_init);
  }
  for (ComponentBank& bank : st.model.banks_low) {
    expand_for_task(bank, t, st.cfg.per_task_components, st.rng_init);
  }
}

void mask_frozen_gradients(const ModelState& model, const std::vector<ParamRef>& params,
                           std::vector<Matrix>& grads) {
  std::vector<const ComponentBank*> all;
  for (const auto& b : model.banks) all.push_back(&b);
  for (const auto& b : model.banks_low) all.push_back(&b);
  for (const ComponentBank* bank : all) {
    const std::size_t nf = bank->frozen_count();
    if (nf == 0) continue;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].value == &bank->W) {
        for (std::size_t r = 0; r < nf * bank->l_w; ++r)
          for (std::size_t c = 0; c < grads[i].cols(); ++c) grads[i](r, c) = 0.0;
      } else if (params[i].value == &bank->K || params[i].value == &bank->A) {
        for (std::size_t r = 0; r < grads[i].rows(); ++r)
          for (std::size_t c = 0; c < nf; ++c) grads[i](r, c) = 0.0;
      }
    }
  }
}

void train_task(TrainState& st, const Task& task) {
  const RunConfig& cfg = st.cfg;
  std::vector<ParamRef> params = collect_trainable(st.model, false);
  if (params.empty() || cfg.epochs == 0 || task.train.size() == 0) return;

  AdamOptimizer adam;
  adam.lr = cfg.lr;
  adam.reset(params);

  // Restoration-eligible set: up-projections reset toward the source model
  // (zero), unfrozen bank slices toward their task-start values.
  std::vector<RestorableParam> restorables;
  if (cfg.flags.restore) {
    for (DecomposedAdapterLayer& layer : st.model.hidden) {
      if (cfg.flags.low_branch) {
        restorables.push_back({&layer.A1, Matrix(layer.A1.rows(), layer.A1.cols()), 0,
                               layer.A1.rows()});
      }
      if (cfg.flags.high_branch) {
        restorables.push_back({&layer.A2, Matrix(layer.A2.rows(), layer.A2.cols()), 0,
                               layer.A2.rows()});
      }
    }
    std::vector<ComponentBank*> all;
    for (auto& b : st.model.banks) all.push_back(&b);
    for (auto& b : st.model.banks_low) all.push_back(&b);
    for (ComponentBank* bank : all) {
      if (bank->components() == bank->frozen_count()) continue;
      restorables.push_back({&bank->W, bank->W, bank->frozen_count() * bank->l_w,
                             bank->components() * bank->l_w});
    }
  }

  const bool replay_active =
      method_uses_replay(cfg.method) && cfg.replay_ratio > 0.0 && st.buffer.size() > 0;
  const std::size_t replay_k = replay_active ? ceil_frac(cfg.replay_ratio, cfg.batch_size) : 0;

  double initial_loss = -1.0;
  std::size_t step_in_task = 0;
  std::vector<std::size_t> order(task.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    st.rng_train.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
      Matrix bx = gather_rows(task.train.x, idx);
      std::vector<int> by;
      for (std::size_t i : idx) by.push_back(task.train.y[i]);
      if (replay_k > 0) {
        Matrix mixed(bx.rows() + replay_k, bx.cols());
        for (std::size_t i = 0; i < bx.size(); ++i) mixed.data()[i] = bx.data()[i];
        for (std::size_t r = 0; r < replay_k; ++r) {
          const std::size_t bi = static_cast<std::size_t>(st.rng_replay.below(st.buffer.size()));
          for (std::size_t j = 0; j < bx.cols(); ++j) mixed(bx.rows() + r, j) = st.buffer.x(bi, j);
          by.push_back(st.buffer.y[bi]);
        }
        bx = std::move(mixed);
      }

      Tape tape;
      LossBuild lb = build_loss(tape, st.model, params, bx, by, cfg.beta, false);
      const double loss = tape.value(lb.total)(0, 0);
      // Floor at 1 so a task that starts nearly solved does not trip the
      // guard on benign restoration bumps.
      if (initial_loss < 0.0) initial_loss = std::max(std::abs(loss), 1.0);
      if (!std::isfinite(loss) || loss > kDivergenceFactor * initial_loss) {
        throw std::runtime_error("training diverged on task " + std::to_string(task.id) +
                                 " at step " + std::to_string(st.global_step) +
                                 " (loss=" + std::to_string(loss) + ")");
      }
      tape.backward(lb.total);
      std::vector<Matrix> grads;
      for (std::size_t i = 0; i < params.size(); ++i) grads.push_back(tape.grad(lb.param_nodes[i]));
      mask_frozen_gradients(st.model, params, grads);
      adam.step(params, grads);

      ++step_in_task;
      ++st.global_step;
      std::size_t restored = 0;
      if (cfg.flags.restore && !restorables.empty() &&
          step_in_task % cfg.restore_policy.interval == 0) {
        restored = apply_restoration(restorables, cfg.restore_policy, st.rng_restore);
      }
      st.log.push_back({st.global_step, static_cast<std::size_t>(st.tasks_done), loss,
                        lb.ortho >= 0 ? tape.value(lb.ortho)(0, 0) : 0.0, restored});
    }
  }
}

void train_one_task(TrainState& st, const TaskStream& stream) {
  if (st.tasks_done >= stream.tasks.size()) {
    throw std::invalid_argument("train_one_task: stream exhausted");
  }
  const Task& task = stream.tasks[st.tasks_done];
  expand_for_new_task(st);
  train_task(st, task);

  if (method_uses_replay(st.cfg.method)) {
    st.buffer.add_task_samples(task.train, task.id, st.cfg.replay_ratio, st.rng_replay);
  }
  if (st.has_static && st.model.use_adapters()) {
    st.model.task_queries.push_back(layer_queries(st.model, task.train.x));
  }

  const std::size_t m = st.tasks_done;
  for (std::size_t q = 0; q < stream.tasks.size(); ++q) {
    st.acc.set(q, m, evaluate_accuracy(st.model, stream.tasks[q].test, EvalMode::kDynamic));
  }
  if (st.has_static && st.model.use_adapters()) {
    for (std::size_t q = 0; q <= m; ++q) {
      st.acc_static.set(q, m,
                        evaluate_accuracy(st.model, stream.tasks[q].test, EvalMode::kStatic, q));
    }
  }
  ++st.tasks_done;
}

RunResult train_sequence(const RunConfig& cfg, const TaskStream& stream, const TaskHook& hook) {
  if (stream.tasks.size() < 2) throw std::invalid_argument("train_sequence: need at least 2 tasks");
  TrainState st = init_train_state(cfg);
  const std::size_t last = cfg.stop_after_task == 0
                               ? stream.tasks.size()
                               : std::min(cfg.stop_after_task, stream.tasks.size());
  while (st.tasks_done < last) {
    train_one_task(st, stream);
    if (hook) hook(st);
  }
  RunResult result{st.acc, std::nullopt, std::move(st.log)};
  if (st.has_static && st.model.use_adapters()) result.acc_static = st.acc_static;
  return result;
}

std::vector<AblationRow> ablation_rows() {
  const auto make = [](bool high, bool low, bool weight, bool attn, bool ortho, bool rest) {
    ModelFlags f;
    f.high_branch = high;
    f.low_branch = low;
    f.weighting = weight;
    f.attention = attn;
    f.ortho = ortho;
    f.restore = rest;
    return f;
  };
  return {
      {"E1", make(false, false, false, false, false, false)},
      {"E2", make(true, false, false, false, false, false)},
      {"E3", make(false, true, false, false, false, false)},
      {"E4", make(true, true, false, false, false, false)},
      {"E5", make(true, true, false, false, false, true)},
      {"E6", make(true, true, true, false, false, true)},
      {"E7", make(true, true, true, true, false, true)},
      {"E8", make(true, true, true, true, true, true)},
  };
}

std::vector<AblationResult> ablation_grid(const RunConfig& base,
                                          const std::vector<std::uint64_t>& seeds,
                                          std::size_t threads) {
  const std::vector<AblationRow> rows = ablation_rows();
  std::vector<AblationResult> results(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    results[r].row = rows[r].name;
    results[r].fp_per_seed.resize(seeds.size(), 0.0);
  }

  struct Cell {
    std::size_t row;
    std::size_t seed_idx;
  };
  std::vector<Cell> cells;
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t s = 0; s < seeds.size(); ++s) cells.push_back({r, s});

  const std::size_t nthreads = std::max<std::size_t>(1, std::min(threads, cells.size()));
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const Cell cell = cells[i];
      RunConfig cfg = base;
      cfg.method = Method::kData;
      cfg.flags = rows[cell.row].flags;
      cfg.seed = seeds[cell.seed_idx];
      cfg.stream.seed = seeds[cell.seed_idx];
      const TaskStream stream = order_shuffle(gen_task_stream(cfg.stream), cfg.order_seed);
      const RunResult res = train_sequence(cfg, stream);
      results[cell.row].fp_per_seed[cell.seed_idx] = 100.0 * fp(res.acc);
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i + 1 < nthreads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (AblationResult& r : results) {
    double sum = 0.0;
    for (double v : r.fp_per_seed) sum += v;
    r.mean_fp = r.fp_per_seed.empty() ? 0.0 : sum / static_cast<double>(r.fp_per_seed.size());
  }
  return results;
}

}  // namespace datacl
