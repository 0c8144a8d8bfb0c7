#include <doctest.h>

#include <stdexcept>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "datacl/checkpoint.hpp"
#include "datacl/config.hpp"
#include "datacl/report.hpp"
#include "datacl/runner.hpp"

using namespace datacl;
namespace fs = std::filesystem;

namespace {

std::string tiny_run_config(const std::string& method = "data") {
  return "method = " + method + R"(
seed = 4
epochs = 2
batch_size = 10
hidden = 16
pretrain_steps = 50
d_l = 1
d_h = 4
l_w = 4
per_task_components = 2
tasks = 2
d_in = 8
classes = 3
train_per_task = 60
val_per_task = 10
test_per_task = 30
)";
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("datacl_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Minimal well-formedness scan: tag stack balance plus header checks.
bool xml_well_formed(const std::string& text) {
  if (text.rfind("<?xml", 0) != 0) return false;
  std::vector<std::string> stack;
  std::size_t i = 0;
  while ((i = text.find('<', i)) != std::string::npos) {
    if (text.compare(i, 2, "<?") == 0) {
      i = text.find("?>", i);
      if (i == std::string::npos) return false;
      continue;
    }
    const std::size_t end = text.find('>', i);
    if (end == std::string::npos) return false;
    std::string tag = text.substr(i + 1, end - i - 1);
    const bool closing = !tag.empty() && tag[0] == '/';
    const bool self_closing = !tag.empty() && tag.back() == '/';
    if (closing) {
      tag = tag.substr(1);
      if (stack.empty() || stack.back() != tag.substr(0, tag.find_first_of(" \t"))) return false;
      stack.pop_back();
    } else if (!self_closing) {
      stack.push_back(tag.substr(0, tag.find_first_of(" \t")));
    }
    i = end + 1;
  }
  return stack.empty();
}

}  // namespace

TEST_CASE("config: unknown keys are listed") {
  try {
    parse_run_config("method = data\nbogus_key = 1\nother = x\n");
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bogus_key") != std::string::npos);
    CHECK(msg.find("other") != std::string::npos);
  }
}

TEST_CASE("config: range errors name the field and bound") {
  try {
    parse_run_config("method = data\nbeta = -1\n");
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("beta") != std::string::npos);
    CHECK(msg.find(">= 0") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_run_config("method = data\nl_w = 5\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("method = data_replay\nreplay_ratio = 0.6\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("method = data\nd_l = 4\nd_h = 4\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("method = nonsense\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("seed = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("method = data\nmethod = data\n"), std::invalid_argument);
}

TEST_CASE("config: baseline methods pin the component switches") {
  CHECK_THROWS_AS(parse_run_config("method = seqlora\nweighting = true\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("method = seqlora\nreplay_ratio = 0.02\n"),
                  std::invalid_argument);
  const RunConfig cfg = parse_run_config("method = seqlora\n");
  CHECK(cfg.flags.high_branch);
  CHECK_FALSE(cfg.flags.low_branch);
  CHECK_FALSE(cfg.flags.weighting);
  CHECK_FALSE(cfg.flags.restore);
}

TEST_CASE("config: defaults follow the documented values") {
  const RunConfig cfg = parse_run_config("method = data\n");
  CHECK(cfg.beta == 10.0);
  CHECK(cfg.lr == 1e-4);
  CHECK(cfg.d_l == 2);
  CHECK(cfg.d_h == 8);
  CHECK(cfg.l_w == 8);
  CHECK(cfg.replay_ratio == 0.02);
  CHECK(cfg.restore_policy.p == 0.01);
  CHECK(cfg.restore_policy.interval == 200);
  CHECK(cfg.stream.n_tasks == 5);
  CHECK(cfg.stream.d_in == 32);
  CHECK(cfg.stream.classes == 4);
  CHECK(cfg.stream.seed == cfg.seed);
}

TEST_CASE("config: example text parses and the hash ignores operational keys") {
  const RunConfig a = parse_run_config(example_config_text());
  RunConfig b = a;
  b.stop_after_task = 1;
  b.gradcheck_corrupt_group = "bank.K";
  CHECK(config_hash(a) == config_hash(b));
  RunConfig c = a;
  c.seed = a.seed + 1;
  CHECK(config_hash(a) != config_hash(c));
}

TEST_CASE("checkpoint: save/load round trip is byte identical") {
  Checkpoint ck;
  ck.config_hash = 0xDEADBEEFCAFEF00DULL;
  ck.task_index = 3;
  ck.step = 1234;
  ck.arrays.push_back({"alpha", {2, 3}, {1.0, -2.5, 3e-17, 4.0, 5.0, -0.0}});
  ck.arrays.push_back({"beta/gamma", {4}, {9, 8, 7, 6}});

  const fs::path dir = fresh_dir("ckpt");
  const std::string p1 = (dir / "a.bin").string();
  const std::string p2 = (dir / "b.bin").string();
  save_checkpoint(ck, p1);
  const Checkpoint back = load_checkpoint(p1);
  CHECK(back.config_hash == ck.config_hash);
  CHECK(back.task_index == ck.task_index);
  CHECK(back.step == ck.step);
  REQUIRE(back.arrays.size() == 2);
  CHECK(back.arrays[0].name == "alpha");
  CHECK(back.arrays[0].shape == std::vector<std::uint64_t>{2, 3});
  CHECK(back.arrays[0].data == ck.arrays[0].data);
  save_checkpoint(back, p2);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("checkpoint: resume refuses a config hash mismatch") {
  const RunConfig cfg = parse_run_config(tiny_run_config());
  const TaskStream stream = gen_task_stream(cfg.stream);
  TrainState st = init_train_state(cfg);
  train_one_task(st, stream);
  const Checkpoint ck = snapshot_state(st);

  RunConfig other = cfg;
  other.epochs += 1;
  CHECK_THROWS_AS(restore_state(other, ck), std::runtime_error);
  const TrainState resumed = restore_state(cfg, ck);
  CHECK(resumed.tasks_done == 1);
  CHECK(resumed.global_step == st.global_step);
}

TEST_CASE("resumed training state continues the exact trajectory") {
  const RunConfig cfg = parse_run_config(tiny_run_config());
  const TaskStream stream = gen_task_stream(cfg.stream);

  TrainState full = init_train_state(cfg);
  train_one_task(full, stream);
  TrainState resumed = restore_state(cfg, snapshot_state(full));
  train_one_task(full, stream);
  train_one_task(resumed, stream);
  for (std::size_t q = 0; q < full.acc.n(); ++q)
    for (std::size_t m = 0; m < full.acc.n(); ++m) {
      REQUIRE(full.acc.filled(q, m) == resumed.acc.filled(q, m));
      if (full.acc.filled(q, m)) CHECK(full.acc.at(q, m) == resumed.acc.at(q, m));
    }
}

TEST_CASE("run outputs are complete and byte reproducible") {
  const RunConfig cfg = parse_run_config(tiny_run_config());
  const fs::path out1 = fresh_dir("run1");
  const fs::path out2 = fresh_dir("run2");
  run_to_files(cfg, out1.string());
  run_to_files(cfg, out2.string());

  for (const char* name : {"metrics.json", "metrics.csv", "accuracy_matrix.csv", "steps.csv"}) {
    CHECK(fs::exists(out1 / name));
    CHECK(slurp(out1 / name) == slurp(out2 / name));
  }
  const std::string metrics = slurp(out1 / "metrics.json");
  CHECK(metrics.find("\"fp\"") != std::string::npos);
  CHECK(metrics.find("\"ap\"") != std::string::npos);
  CHECK(metrics.find("\"forget\"") != std::string::npos);
  CHECK(slurp(out1 / "ckpt_task_002.bin") == slurp(out2 / "ckpt_task_002.bin"));

  // Matrix csv round trip.
  const AccuracyMatrix acc = read_accuracy_csv((out1 / "accuracy_matrix.csv").string());
  CHECK(acc.n() == cfg.stream.n_tasks);
  CHECK(acc.filled(0, 1));
}

TEST_CASE("interrupted plus resumed run reproduces the uninterrupted metrics") {
  const std::string base = tiny_run_config();
  const RunConfig full_cfg = parse_run_config(base);
  RunConfig partial_cfg = parse_run_config(base + "stop_after_task = 1\n");

  const fs::path full_dir = fresh_dir("full");
  const fs::path part_dir = fresh_dir("part");
  run_to_files(full_cfg, full_dir.string());
  run_to_files(partial_cfg, part_dir.string());
  CHECK_FALSE(fs::exists(part_dir / "metrics.json"));
  // Resume with the full config from the partial checkpoint.
  run_to_files(full_cfg, part_dir.string(), (part_dir / "ckpt_task_001.bin").string());
  CHECK(slurp(full_dir / "metrics.json") == slurp(part_dir / "metrics.json"));
  CHECK(slurp(full_dir / "accuracy_matrix.csv") == slurp(part_dir / "accuracy_matrix.csv"));
}

TEST_CASE("report emits summaries and well-formed charts") {
  const RunConfig cfg = parse_run_config(tiny_run_config());
  RunConfig seq = parse_run_config(tiny_run_config("seqlora"));
  const fs::path results = fresh_dir("results");
  run_to_files(cfg, (results / "data_run").string());
  run_to_files(seq, (results / "seqlora_run").string());

  CHECK(write_report(results.string()) == 2);
  CHECK(fs::exists(results / "summary.csv"));
  CHECK(fs::exists(results / "summary.txt"));
  const std::string svg = slurp(results / "data_run_accuracy.svg");
  CHECK(xml_well_formed(svg));
  CHECK(svg.find("</svg>") != std::string::npos);

  const std::string summary = slurp(results / "summary.csv");
  // Sorted by method name: data before seqlora.
  CHECK(summary.find("data") < summary.find("seqlora"));

  const fs::path empty = fresh_dir("empty");
  CHECK(write_report(empty.string()) == 0);
}
