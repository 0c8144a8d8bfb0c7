#include "datacl/config.hpp"

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "datacl/rng.hpp"

namespace datacl {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "method", "seed", "high_branch", "low_branch", "weighting", "attention", "ortho",
      "restore", "scalar_lambda", "dual_bank", "beta", "lr", "epochs", "batch_size",
      "replay_ratio", "d_l", "d_h", "l_w", "per_task_components", "restore_p",
      "restore_interval", "pretrain_steps", "stop_after_task", "gradcheck_corrupt_group",
      "tasks", "d_in", "classes", "shift_kind", "shift_magnitude", "shared_weight",
      "train_per_task", "val_per_task", "test_per_task", "stream_seed", "order_seed",
      "hidden"};
  return keys;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(key + " must be true or false, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    throw std::invalid_argument(key + " must be a number, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return u;
  } catch (...) {
    throw std::invalid_argument(key + " must be a non-negative integer, got '" + v + "'");
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> unknown;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (std::find(known_keys().begin(), known_keys().end(), key) == known_keys().end()) {
      unknown.push_back(key);
      continue;
    }
    if (kv.count(key)) {
      throw std::invalid_argument("config: duplicate key '" + key + "'");
    }
    kv[key] = value;
  }
  if (!unknown.empty()) {
    std::string msg = "config: unknown keys:";
    for (const std::string& k : unknown) msg += " " + k;
    throw std::invalid_argument(msg);
  }
  if (!kv.count("method")) {
    throw std::invalid_argument("config: required key 'method' is missing");
  }

  RunConfig cfg;
  cfg.method = method_from_string(kv.at("method"));
  cfg.flags = flags_for_method(cfg.method);

  const bool flags_allowed = cfg.method == Method::kData || cfg.method == Method::kDataReplay;
  const auto flag_key = [&](const std::string& key, bool& slot) {
    if (!kv.count(key)) return;
    if (!flags_allowed) {
      throw std::invalid_argument("config: key '" + key + "' is fixed for method '" +
                                  to_string(cfg.method) + "'");
    }
    slot = parse_bool(key, kv.at(key));
  };
  flag_key("high_branch", cfg.flags.high_branch);
  flag_key("low_branch", cfg.flags.low_branch);
  flag_key("weighting", cfg.flags.weighting);
  flag_key("attention", cfg.flags.attention);
  flag_key("ortho", cfg.flags.ortho);
  flag_key("restore", cfg.flags.restore);
  flag_key("scalar_lambda", cfg.flags.scalar_lambda);
  flag_key("dual_bank", cfg.flags.dual_bank);

  if (kv.count("replay_ratio") && !method_uses_replay(cfg.method)) {
    throw std::invalid_argument("config: key 'replay_ratio' applies only to replay methods");
  }

  const auto get_u64 = [&](const std::string& key, std::uint64_t def) {
    return kv.count(key) ? parse_u64(key, kv.at(key)) : def;
  };
  const auto get_double = [&](const std::string& key, double def) {
    return kv.count(key) ? parse_double(key, kv.at(key)) : def;
  };

  cfg.seed = get_u64("seed", cfg.seed);
  cfg.beta = get_double("beta", cfg.beta);
  cfg.lr = get_double("lr", cfg.lr);
  cfg.epochs = get_u64("epochs", cfg.epochs);
  cfg.batch_size = get_u64("batch_size", cfg.batch_size);
  cfg.replay_ratio = get_double("replay_ratio", cfg.replay_ratio);
  cfg.d_l = get_u64("d_l", cfg.d_l);
  cfg.d_h = get_u64("d_h", cfg.d_h);
  cfg.l_w = get_u64("l_w", cfg.l_w);
  cfg.per_task_components = get_u64("per_task_components", cfg.per_task_components);
  cfg.hidden = get_u64("hidden", cfg.hidden);
  cfg.restore_policy.p = get_double("restore_p", cfg.restore_policy.p);
  cfg.restore_policy.interval = get_u64("restore_interval", cfg.restore_policy.interval);
  cfg.pretrain_steps = get_u64("pretrain_steps", cfg.pretrain_steps);
  cfg.stop_after_task = get_u64("stop_after_task", cfg.stop_after_task);
  if (kv.count("gradcheck_corrupt_group")) {
    cfg.gradcheck_corrupt_group = kv.at("gradcheck_corrupt_group");
  }

  cfg.stream.n_tasks = get_u64("tasks", cfg.stream.n_tasks);
  cfg.stream.d_in = get_u64("d_in", cfg.stream.d_in);
  cfg.stream.classes = get_u64("classes", cfg.stream.classes);
  if (kv.count("shift_kind")) cfg.stream.shift_kind = shift_kind_from_string(kv.at("shift_kind"));
  cfg.stream.shift_magnitude = get_double("shift_magnitude", cfg.stream.shift_magnitude);
  cfg.stream.shared_weight = get_double("shared_weight", cfg.stream.shared_weight);
  cfg.stream.train_per_task = get_u64("train_per_task", cfg.stream.train_per_task);
  cfg.stream.val_per_task = get_u64("val_per_task", cfg.stream.val_per_task);
  cfg.stream.test_per_task = get_u64("test_per_task", cfg.stream.test_per_task);
  cfg.stream.seed = get_u64("stream_seed", 0);
  if (cfg.stream.seed == 0) cfg.stream.seed = cfg.seed;
  cfg.order_seed = get_u64("order_seed", cfg.order_seed);

  // Range checks; every message names the field and the bound.
  const auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("config: " + msg);
  };
  require(cfg.beta >= 0.0, "beta must be >= 0 (got " + fmt_double(cfg.beta) + ")");
  require(cfg.lr > 0.0, "lr must be > 0 (got " + fmt_double(cfg.lr) + ")");
  require(cfg.batch_size >= 1, "batch_size must be >= 1");
  require(cfg.replay_ratio >= 0.0 && cfg.replay_ratio <= 0.5,
          "replay_ratio must lie in [0, 0.5] (got " + fmt_double(cfg.replay_ratio) + ")");
  require(cfg.d_l >= 1, "d_l must be >= 1");
  require(cfg.d_h > cfg.d_l, "d_h must be > d_l (got d_l=" + std::to_string(cfg.d_l) +
                                 ", d_h=" + std::to_string(cfg.d_h) + ")");
  require(cfg.l_w >= 2 && cfg.l_w % 2 == 0,
          "l_w must be even and >= 2 (got " + std::to_string(cfg.l_w) + ")");
  require(cfg.per_task_components >= 1, "per_task_components must be >= 1");
  require(cfg.hidden >= 2, "hidden must be >= 2");
  require(cfg.restore_policy.p >= 0.0 && cfg.restore_policy.p <= 1.0,
          "restore_p must lie in [0, 1] (got " + fmt_double(cfg.restore_policy.p) + ")");
  require(cfg.restore_policy.interval >= 1, "restore_interval must be >= 1");
  require(cfg.stream.n_tasks >= 2, "tasks must be >= 2");
  require(cfg.stream.d_in >= 2, "d_in must be >= 2");
  require(cfg.stream.classes >= 2, "classes must be >= 2");
  require(cfg.stream.d_in >= 64 ||
              static_cast<double>(cfg.stream.classes) <= std::pow(2.0, cfg.stream.d_in),
          "classes must be <= 2^d_in");
  require(cfg.stream.shift_magnitude >= 0.0, "shift_magnitude must be >= 0");
  require(cfg.stream.shared_weight >= 0.0 && cfg.stream.shared_weight <= 1.0,
          "shared_weight must lie in [0, 1]");
  require(cfg.stream.train_per_task >= 1, "train_per_task must be >= 1");
  require(cfg.stream.test_per_task >= 1, "test_per_task must be >= 1");
  require(cfg.stop_after_task <= cfg.stream.n_tasks,
          "stop_after_task must be <= tasks (got " + std::to_string(cfg.stop_after_task) + ")");
  const std::size_t rank_cap = std::min(cfg.stream.d_in, cfg.hidden);
  require(cfg.d_h <= rank_cap,
          "d_h must be <= min(d_in, hidden) = " + std::to_string(rank_cap));
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("config file not found: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string canonical_config_text(const RunConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["method"] = to_string(cfg.method);
  kv["seed"] = std::to_string(cfg.seed);
  kv["high_branch"] = cfg.flags.high_branch ? "true" : "false";
  kv["low_branch"] = cfg.flags.low_branch ? "true" : "false";
  kv["weighting"] = cfg.flags.weighting ? "true" : "false";
  kv["attention"] = cfg.flags.attention ? "true" : "false";
  kv["ortho"] = cfg.flags.ortho ? "true" : "false";
  kv["restore"] = cfg.flags.restore ? "true" : "false";
  kv["scalar_lambda"] = cfg.flags.scalar_lambda ? "true" : "false";
  kv["dual_bank"] = cfg.flags.dual_bank ? "true" : "false";
  kv["beta"] = fmt_double(cfg.beta);
  kv["lr"] = fmt_double(cfg.lr);
  kv["epochs"] = std::to_string(cfg.epochs);
  kv["batch_size"] = std::to_string(cfg.batch_size);
  kv["replay_ratio"] = fmt_double(cfg.replay_ratio);
  kv["d_l"] = std::to_string(cfg.d_l);
  kv["d_h"] = std::to_string(cfg.d_h);
  kv["l_w"] = std::to_string(cfg.l_w);
  kv["per_task_components"] = std::to_string(cfg.per_task_components);
  kv["hidden"] = std::to_string(cfg.hidden);
  kv["restore_p"] = fmt_double(cfg.restore_policy.p);
  kv["restore_interval"] = std::to_string(cfg.restore_policy.interval);
  kv["pretrain_steps"] = std::to_string(cfg.pretrain_steps);
  kv["tasks"] = std::to_string(cfg.stream.n_tasks);
  kv["d_in"] = std::to_string(cfg.stream.d_in);
  kv["classes"] = std::to_string(cfg.stream.classes);
  kv["shift_kind"] = to_string(cfg.stream.shift_kind);
  kv["shift_magnitude"] = fmt_double(cfg.stream.shift_magnitude);
  kv["shared_weight"] = fmt_double(cfg.stream.shared_weight);
  kv["train_per_task"] = std::to_string(cfg.stream.train_per_task);
  kv["val_per_task"] = std::to_string(cfg.stream.val_per_task);
  kv["test_per_task"] = std::to_string(cfg.stream.test_per_task);
  kv["stream_seed"] = std::to_string(cfg.stream.seed);
  kv["order_seed"] = std::to_string(cfg.order_seed);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(canonical_config_text(cfg)); }

std::string example_config_text() {
  return R"(# Continual-learning run configuration.
# method: data | seqlora | data_replay | lora_replay
method = data
seed = 1

# Component switches (data / data_replay only; the LoRA baselines fix them).
high_branch = true
low_branch = true
weighting = true
attention = true
ortho = true
restore = true
scalar_lambda = false
dual_bank = false

# Optimization.
beta = 10
lr = 1e-4
epochs = 80
batch_size = 8
d_l = 2
d_h = 8
l_w = 8
per_task_components = 2
restore_p = 0.01
restore_interval = 200
pretrain_steps = 300

# Synthetic task stream.
tasks = 5
d_in = 32
classes = 4
shift_kind = cluster-drift
shift_magnitude = 1.7
shared_weight = 0.25
train_per_task = 1000
val_per_task = 500
test_per_task = 500
# stream_seed defaults to seed; order_seed 0 keeps the natural task order.
order_seed = 0
)";
}

}  // namespace datacl
