#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "datacl/config.hpp"
#include "datacl/model.hpp"
#include "datacl/report.hpp"
#include "datacl/runner.hpp"
#include "datacl/tasks.hpp"
#include "datacl/trainer.hpp"

namespace {

using namespace datacl;

std::size_t thread_budget(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DATA_CL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

RunConfig load_config_with_seed(const std::string& path, std::int64_t seed_override) {
  RunConfig cfg = load_run_config(path);
  if (seed_override >= 0) {
    cfg.seed = static_cast<std::uint64_t>(seed_override);
    // A seed override re-pairs the stream unless the config pinned one.
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (text.find("stream_seed") == std::string::npos) cfg.stream.seed = cfg.seed;
  }
  return cfg;
}

int cmd_run(const std::string& config_path, std::int64_t seed, const std::string& out_dir,
            const std::string& resume) {
  const RunConfig cfg = load_config_with_seed(config_path, seed);
  run_to_files(cfg, out_dir, resume);
  std::cout << "run complete: " << out_dir << "\n";
  return 0;
}

int cmd_report(const std::string& results_dir) {
  const std::size_t n = write_report(results_dir);
  if (n == 0) {
    std::cerr << "error: no completed runs found under '" << results_dir << "'\n";
    return 1;
  }
  std::cout << "report written for " << n << " run(s) under " << results_dir << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& config_path, std::int64_t seed) {
  RunConfig cfg = load_config_with_seed(config_path, seed);
  if (cfg.stream.d_in > 16) {
    std::cerr << "error: gradcheck requires a small model (d_in <= 16), got d_in = "
              << cfg.stream.d_in << "\n";
    return 1;
  }
  // Train one task, then expand: the check runs on a non-trivial parameter
  // point with a frozen/unfrozen component mix.
  TrainState st = init_train_state(cfg);
  const TaskStream stream = gen_task_stream(cfg.stream);
  train_one_task(st, stream);
  expand_for_new_task(st);

  const Dataset batch_src = gen_generic_dataset(cfg.stream, 8);
  const GradCheckReport report = grad_check(st.model, batch_src.x, batch_src.y, cfg.beta, 1e-5,
                                            cfg.gradcheck_corrupt_group);
  bool ok = true;
  for (const GradCheckGroup& g : report.groups) {
    if (g.skipped) {
      std::cout << g.name << ": skipped\n";
      continue;
    }
    const bool pass = g.max_rel_err < 1e-4;
    ok = ok && pass;
    std::cout << g.name << ": max relative error " << g.max_rel_err
              << (pass ? "" : "  <-- FAIL") << "\n";
  }
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (max "
            << report.max_rel_err << ")\n";
  return ok ? 0 : 1;
}

int cmd_ablate(const std::string& config_path, std::int64_t seed, const std::string& out_dir,
               const std::string& seeds_csv) {
  const RunConfig base = load_config_with_seed(config_path, seed);
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(seeds_csv);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (!token.empty()) seeds.push_back(std::stoull(token));
  }
  if (seeds.empty()) {
    std::cerr << "error: --seeds produced an empty seed list\n";
    return 1;
  }
  const auto results = ablation_grid(base, seeds, thread_budget(8 * seeds.size()));
  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir + "/ablation.csv", std::ios::trunc);
  csv << "row";
  for (std::uint64_t s : seeds) csv << ",fp_seed_" << s;
  csv << ",mean_fp\n";
  for (const AblationResult& r : results) {
    csv << r.row;
    char buf[32];
    for (double v : r.fp_per_seed) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      csv << "," << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", r.mean_fp);
    csv << "," << buf << "\n";
    std::printf("%-4s mean FP %6.2f\n", r.row.c_str(), r.mean_fp);
  }
  std::cout << "ablation table written to " << out_dir << "/ablation.csv\n";
  return 0;
}

int cmd_genstream(const std::string& config_path, std::int64_t seed, const std::string& out_file) {
  const RunConfig cfg = load_config_with_seed(config_path, seed);
  TaskStream stream = gen_task_stream(cfg.stream);
  if (cfg.order_seed != 0) stream = order_shuffle(stream, cfg.order_seed);
  std::ofstream out(out_file, std::ios::trunc);
  if (!out) {
    std::cerr << "error: cannot open '" << out_file << "' for writing\n";
    return 1;
  }
  export_stream_csv(stream, out);
  std::cout << "stream written to " << out_file << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual-learning engine with decomposed dual-rank adapters"};
  app.require_subcommand(1);

  std::string config_path, out_dir, resume, results_dir, out_file;
  std::string seeds_csv = "1,2,3,4,5";
  std::int64_t seed = -1;

  CLI::App* run = app.add_subcommand("run", "Train a task sequence and write metrics");
  run->add_option("--config", config_path, "Config file path")->required();
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--seed", seed, "Seed override");
  run->add_option("--resume", resume, "Checkpoint to resume from");

  CLI::App* report = app.add_subcommand("report", "Summaries and charts for completed runs");
  report->add_option("dir", results_dir, "Directory containing run outputs")->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  gradcheck->add_option("--config", config_path, "Config file path")->required();
  gradcheck->add_option("--seed", seed, "Seed override");

  CLI::App* ablate = app.add_subcommand("ablate", "Component ablation grid (rows E1-E8)");
  ablate->add_option("--config", config_path, "Config file path")->required();
  ablate->add_option("--out", out_dir, "Output directory")->required();
  ablate->add_option("--seed", seed, "Seed override");
  ablate->add_option("--seeds", seeds_csv, "Comma-separated seed list");

  CLI::App* genstream = app.add_subcommand("genstream", "Export the synthetic stream as CSV");
  genstream->add_option("--config", config_path, "Config file path")->required();
  genstream->add_option("--out", out_file, "Output CSV file")->required();
  genstream->add_option("--seed", seed, "Seed override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, seed, out_dir, resume);
    if (report->parsed()) return cmd_report(results_dir);
    if (gradcheck->parsed()) return cmd_gradcheck(config_path, seed);
    if (ablate->parsed()) return cmd_ablate(config_path, seed, out_dir, seeds_csv);
    if (genstream->parsed()) return cmd_genstream(config_path, seed, out_file);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
