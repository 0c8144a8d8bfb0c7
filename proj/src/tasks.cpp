#include "datacl/tasks.hpp"

#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "datacl/rng.hpp"

namespace datacl {

namespace {

constexpr double kMeanScale = 6.0;
constexpr double kNoiseSigma = 1.6;
constexpr double kClassDriftRatio = 0.6;

// Rotation by `angle` applied in the disjoint coordinate planes
// (0,1), (2,3), ...; every vector turns by exactly that angle.
void rotate_in_place(std::vector<double>& v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  for (std::size_t i = 0; i + 1 < v.size(); i += 2) {
    const double a = v[i];
    const double b = v[i + 1];
    v[i] = c * a - s * b;
    v[i + 1] = s * a + c * b;
  }
}

std::vector<std::size_t> task_permutation(std::size_t d, std::size_t swaps, Rng& rng) {
  std::vector<std::size_t> perm(d);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t s = 0; s < swaps; ++s) {
    const std::size_t i = rng.below(d);
    const std::size_t j = rng.below(d);
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

std::vector<double> random_unit(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  double n = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

// Class means for task `t` (0-based). Task shift strength grows linearly
// with the task index, damped by the shared-structure weight; index 0
// already sits one step away from the generic geometry.
std::vector<std::vector<double>> task_means(const StreamConfig& cfg,
                                            const std::vector<std::vector<double>>& shared,
                                            std::size_t t) {
  const double strength = (1.0 - cfg.shared_weight) * cfg.shift_magnitude *
                          static_cast<double>(t + 1);
  std::vector<std::vector<double>> means = shared;
  switch (cfg.shift_kind) {
    case ShiftKind::kRotation:
      for (auto& m : means) rotate_in_place(m, strength);
      break;
    case ShiftKind::kPermutation: {
      const std::size_t swaps =
          static_cast<std::size_t>(std::llround(strength * static_cast<double>(cfg.d_in)));
      Rng rng = derive_rng(cfg.seed, "perm/" + std::to_string(t));
      const auto perm = task_permutation(cfg.d_in, swaps, rng);
      for (auto& m : means) {
        std::vector<double> p(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) p[i] = m[perm[i]];
        m = std::move(p);
      }
      break;
    }
    case ShiftKind::kClusterDrift: {
      // A task-common drift carries the task identity on every sample; the
      // per-class drifts reshape the class geometry and drive forgetting.
      // Drift strength is uniform across tasks (fresh directions already
      // separate them), unlike the cumulative rotation angle.
      const double drift = (1.0 - cfg.shared_weight) * cfg.shift_magnitude * kMeanScale;
      Rng rng = derive_rng(cfg.seed, "drift/" + std::to_string(t));
      const std::vector<double> shared_dir = random_unit(cfg.d_in, rng);
      for (auto& m : means) {
        const std::vector<double> class_dir = random_unit(cfg.d_in, rng);
        for (std::size_t i = 0; i < m.size(); ++i) {
          m[i] += drift * (shared_dir[i] + kClassDriftRatio * class_dir[i]);
        }
      }
      break;
    }
  }
  return means;
}

Dataset sample_dataset(const std::vector<std::vector<double>>& means, std::size_t n,
                       std::size_t d, Rng& rng) {
  Dataset ds;
  ds.x = Matrix(n, d);
  ds.y.resize(n);
  const std::size_t classes = means.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    ds.y[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < d; ++j) ds.x(i, j) = means[c][j] + rng.normal(0.0, kNoiseSigma);
  }
  return ds;
}

std::vector<std::vector<double>> shared_means(const StreamConfig& cfg) {
  Rng rng = derive_rng(cfg.seed, "means");
  std::vector<std::vector<double>> means(cfg.classes);
  for (auto& m : means) {
    m = random_unit(cfg.d_in, rng);
    for (double& x : m) x *= kMeanScale;
  }
  return means;
}

void validate(const StreamConfig& cfg) {
  if (cfg.n_tasks < 2) throw std::invalid_argument("stream requires at least 2 tasks");
  if (cfg.d_in < 1) throw std::invalid_argument("stream feature dimension must be positive");
  if (cfg.classes < 2) throw std::invalid_argument("stream requires at least 2 classes");
  if (cfg.shift_magnitude < 0.0) throw std::invalid_argument("shift magnitude must be >= 0");
  if (cfg.d_in < 64 && static_cast<double>(cfg.classes) > std::pow(2.0, cfg.d_in)) {
    throw std::invalid_argument("class count exceeds the 2^d_in separability bound");
  }
}

}  // namespace

const char* to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::kRotation: return "rotation";
    case ShiftKind::kPermutation: return "permutation";
    case ShiftKind::kClusterDrift: return "cluster-drift";
  }
  return "?";
}

ShiftKind shift_kind_from_string(const std::string& s) {
  if (s == "rotation") return ShiftKind::kRotation;
  if (s == "permutation") return ShiftKind::kPermutation;
  if (s == "cluster-drift") return ShiftKind::kClusterDrift;
  throw std::invalid_argument("unknown shift kind '" + s +
                              "' (expected rotation, permutation or cluster-drift)");
}

TaskStream gen_task_stream(const StreamConfig& cfg) {
  validate(cfg);
  TaskStream stream;
  stream.config = cfg;
  const auto shared = shared_means(cfg);
  for (std::size_t t = 0; t < cfg.n_tasks; ++t) {
    const auto means = task_means(cfg, shared, t);
    Task task;
    task.id = static_cast<int>(t);
    task.gen_seed = derive_rng(cfg.seed, "task/" + std::to_string(t)).state();
    Rng train_rng = derive_rng(cfg.seed, "task/" + std::to_string(t) + "/train");
    Rng val_rng = derive_rng(cfg.seed, "task/" + std::to_string(t) + "/val");
    Rng test_rng = derive_rng(cfg.seed, "task/" + std::to_string(t) + "/test");
    task.train = sample_dataset(means, cfg.train_per_task, cfg.d_in, train_rng);
    task.val = sample_dataset(means, cfg.val_per_task, cfg.d_in, val_rng);
    task.test = sample_dataset(means, cfg.test_per_task, cfg.d_in, test_rng);
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

Dataset gen_generic_dataset(const StreamConfig& cfg, std::size_t n) {
  validate(cfg);
  Rng rng = derive_rng(cfg.seed, "generic");
  return sample_dataset(shared_means(cfg), n, cfg.d_in, rng);
}

TaskStream order_shuffle(const TaskStream& stream, std::uint64_t order_seed) {
  TaskStream out = stream;
  if (order_seed == 0) return out;
  std::vector<std::size_t> order(stream.tasks.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(order_seed);
  rng.shuffle(order);
  for (std::size_t i = 0; i < order.size(); ++i) out.tasks[i] = stream.tasks[order[i]];
  return out;
}

void export_stream_csv(const TaskStream& stream, std::ostream& out) {
  const std::size_t d = stream.config.d_in;
  for (std::size_t j = 0; j < d; ++j) out << "feature_" << j << ",";
  out << "label,task_id,split\n";
  char buf[32];
  const auto emit = [&](const Dataset& ds, int task_id, const char* split) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", ds.x(i, j));
        out << buf << ",";
      }
      out << ds.y[i] << "," << task_id << "," << split << "\n";
    }
  };
  for (const Task& t : stream.tasks) {
    emit(t.train, t.id, "train");
    emit(t.val, t.id, "val");
    emit(t.test, t.id, "test");
  }
}

}  // namespace datacl
