#include "datacl/runner.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "datacl/checkpoint.hpp"
#include "datacl/config.hpp"
#include "datacl/metrics.hpp"

namespace datacl {

namespace {

namespace fs = std::filesystem;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string task_checkpoint_name(std::size_t tasks_done) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_task_%03zu.bin", tasks_done);
  return buf;
}

void write_steps_csv(const std::vector<StepLogRow>& log, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "step,task,loss,ortho_loss,restored_count\n";
  for (const StepLogRow& row : log) {
    out << row.step << "," << row.task << "," << fmt_double(row.loss) << ","
        << fmt_double(row.ortho) << "," << row.restored << "\n";
  }
}

void write_metrics(const TrainState& st, const std::string& dir) {
  nlohmann::ordered_json j;
  j["method"] = to_string(st.cfg.method);
  j["order"] = st.cfg.order_seed;
  j["seed"] = st.cfg.seed;
  j["fp"] = 100.0 * fp(st.acc);
  j["ap"] = 100.0 * ap(st.acc);
  j["forget"] = 100.0 * forget(st.acc);
  const bool has_static = st.has_static && st.model.use_adapters();
  if (has_static) {
    j["static"] = {{"fp", 100.0 * fp(st.acc_static)},
                   {"ap", 100.0 * ap(st.acc_static)},
                   {"forget", 100.0 * forget(st.acc_static)}};
  }
  std::ofstream out(dir + "/metrics.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open metrics.json for writing");
  out << j.dump(2) << "\n";

  std::ofstream csv(dir + "/metrics.csv", std::ios::trunc);
  csv << "method,order,seed,fp,ap,forget\n";
  csv << to_string(st.cfg.method) << "," << st.cfg.order_seed << "," << st.cfg.seed << ","
      << fmt_double(100.0 * fp(st.acc)) << "," << fmt_double(100.0 * ap(st.acc)) << ","
      << fmt_double(100.0 * forget(st.acc)) << "\n";
}

}  // namespace

void write_accuracy_csv(const AccuracyMatrix& acc, const std::string& path, double scale) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "q";
  for (std::size_t m = 0; m < acc.n(); ++m) out << ",after_task_" << m;
  out << "\n";
  for (std::size_t q = 0; q < acc.n(); ++q) {
    out << q;
    for (std::size_t m = 0; m < acc.n(); ++m) {
      out << ",";
      if (acc.filled(q, m)) out << fmt_double(scale * acc.at(q, m));
    }
    out << "\n";
  }
}

AccuracyMatrix read_accuracy_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty accuracy csv: " + path);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    // A trailing empty cell is dropped by getline; normalize below.
    rows.push_back(cells);
  }
  const std::size_t n = rows.size();
  AccuracyMatrix acc(n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t m = 0; m < n; ++m) {
      if (m + 1 < rows[q].size() && !rows[q][m + 1].empty()) {
        acc.set(q, m, std::stod(rows[q][m + 1]));
      }
    }
  }
  return acc;
}

void run_to_files(const RunConfig& cfg, const std::string& out_dir,
                  const std::string& resume_path) {
  fs::create_directories(out_dir);
  TaskStream stream = gen_task_stream(cfg.stream);
  if (cfg.order_seed != 0) stream = order_shuffle(stream, cfg.order_seed);

  TrainState st = resume_path.empty() ? init_train_state(cfg)
                                      : restore_state(cfg, load_checkpoint(resume_path));

  const std::size_t last = cfg.stop_after_task == 0
                               ? stream.tasks.size()
                               : std::min(cfg.stop_after_task, stream.tasks.size());
  while (st.tasks_done < last) {
    train_one_task(st, stream);
    save_checkpoint(snapshot_state(st), out_dir + "/" + task_checkpoint_name(st.tasks_done));
  }

  write_steps_csv(st.log, out_dir + "/steps.csv");
  write_accuracy_csv(st.acc, out_dir + "/accuracy_matrix.csv", 100.0);
  if (st.has_static && st.model.use_adapters()) {
    write_accuracy_csv(st.acc_static, out_dir + "/accuracy_matrix_static.csv", 100.0);
  }
  if (st.tasks_done == stream.tasks.size()) {
    write_metrics(st, out_dir);
  }
}

}  // namespace datacl
