#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <cstring>

#include "datacl/tape.hpp"
#include "datacl/trainer.hpp"

using namespace datacl;

namespace {

RunConfig tiny_config(Method method, std::uint64_t seed = 1) {
  RunConfig cfg;
  cfg.method = method;
  cfg.flags = flags_for_method(method);
  cfg.seed = seed;
  cfg.hidden = 16;
  cfg.epochs = 2;
  cfg.batch_size = 10;
  cfg.pretrain_steps = 60;
  cfg.stream.n_tasks = 2;
  cfg.stream.d_in = 8;
  cfg.stream.classes = 3;
  cfg.stream.train_per_task = 60;
  cfg.stream.val_per_task = 20;
  cfg.stream.test_per_task = 30;
  cfg.stream.seed = seed;
  cfg.d_l = 1;
  cfg.d_h = 4;
  cfg.l_w = 4;
  cfg.per_task_components = 2;
  return cfg;
}

std::vector<Matrix> snapshot_params(ModelState& model) {
  std::vector<Matrix> out;
  for (const ParamRef& p : collect_trainable(model, false)) out.push_back(*p.value);
  return out;
}

}  // namespace

TEST_CASE("zero epochs leave the state unchanged") {
  RunConfig cfg = tiny_config(Method::kData);
  cfg.epochs = 0;
  TrainState st = init_train_state(cfg);
  const TaskStream stream = gen_task_stream(cfg.stream);
  expand_for_new_task(st);
  const std::vector<Matrix> before = snapshot_params(st.model);
  train_task(st, stream.tasks[0]);
  const std::vector<Matrix> after = snapshot_params(st.model);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(bits_equal(before[i], after[i]));
  CHECK(st.log.empty());
}

TEST_CASE("seqlora trains a single branch and touches no banks") {
  RunConfig cfg = tiny_config(Method::kSeqLora);
  TrainState st = init_train_state(cfg);
  CHECK(st.model.banks.empty());
  const TaskStream stream = gen_task_stream(cfg.stream);
  const Matrix a1_before = st.model.hidden[0].A1;
  const Matrix b1_before = st.model.hidden[0].B1;
  train_task(st, stream.tasks[0]);
  // Low branch excluded from the forward pass: bytes frozen at init.
  CHECK(bits_equal(st.model.hidden[0].A1, a1_before));
  CHECK(bits_equal(st.model.hidden[0].B1, b1_before));
  // High branch trained.
  CHECK(frobenius_sq(st.model.hidden[0].A2) > 0.0);
}

TEST_CASE("frozen base weights never move during task training") {
  RunConfig cfg = tiny_config(Method::kData);
  TrainState st = init_train_state(cfg);
  const TaskStream stream = gen_task_stream(cfg.stream);
  const Matrix w0 = st.model.hidden[0].W0;
  const Matrix b0 = st.model.hidden[0].b0;
  const Matrix head = st.model.head.W;
  expand_for_new_task(st);
  train_task(st, stream.tasks[0]);
  CHECK(bits_equal(st.model.hidden[0].W0, w0));
  CHECK(bits_equal(st.model.hidden[0].b0, b0));
  CHECK(bits_equal(st.model.head.W, head));
}

TEST_CASE("gradients of frozen components are masked to exact zero") {
  RunConfig cfg = tiny_config(Method::kData);
  TrainState st = init_train_state(cfg);
  const TaskStream stream = gen_task_stream(cfg.stream);
  train_one_task(st, stream);  // task 1 done, its components now freeze
  expand_for_new_task(st);

  std::vector<ParamRef> params = collect_trainable(st.model, false);
  Tape tape;
  const Matrix bx = stream.tasks[1].train.x;
  LossBuild lb = build_loss(tape, st.model, params, bx, stream.tasks[1].train.y, cfg.beta);
  tape.backward(lb.total);
  std::vector<Matrix> grads;
  for (std::size_t i = 0; i < params.size(); ++i) grads.push_back(tape.grad(lb.param_nodes[i]));

  // Before masking, frozen components do receive gradient signal.
  double frozen_signal = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (const ComponentBank& bank : st.model.banks) {
      if (params[i].value == &bank.W) {
        for (std::size_t r = 0; r < bank.frozen_count() * bank.l_w; ++r)
          for (std::size_t c = 0; c < grads[i].cols(); ++c)
            frozen_signal += std::abs(grads[i](r, c));
      }
    }
  }
  CHECK(frozen_signal > 0.0);

  mask_frozen_gradients(st.model, params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (const ComponentBank& bank : st.model.banks) {
      const std::size_t nf = bank.frozen_count();
      if (params[i].value == &bank.W) {
        for (std::size_t r = 0; r < nf * bank.l_w; ++r)
          for (std::size_t c = 0; c < grads[i].cols(); ++c) CHECK(grads[i](r, c) == 0.0);
      } else if (params[i].value == &bank.K || params[i].value == &bank.A) {
        for (std::size_t r = 0; r < grads[i].rows(); ++r)
          for (std::size_t c = 0; c < nf; ++c) CHECK(grads[i](r, c) == 0.0);
      }
    }
  }
}

TEST_CASE("only unfrozen parameters change during the second task") {
  RunConfig cfg = tiny_config(Method::kData);
  TrainState st = init_train_state(cfg);
  const TaskStream stream = gen_task_stream(cfg.stream);
  train_one_task(st, stream);

  const std::size_t nf = st.model.banks[0].frozen.size();  // all components of task 1
  std::vector<Matrix> frozen_w, frozen_k;
  for (const ComponentBank& b : st.model.banks) {
    frozen_w.push_back(b.W);
    frozen_k.push_back(b.K);
  }
  train_one_task(st, stream);
  for (std::size_t l = 0; l < st.model.banks.size(); ++l) {
    const ComponentBank& bank = st.model.banks[l];
    CHECK(bank.frozen_count() == nf);
    // Frozen slice rows byte-identical.
    CHECK(std::memcmp(bank.W.data(), frozen_w[l].data(),
                      nf * bank.l_w * bank.d * sizeof(double)) == 0);
    for (std::size_t r = 0; r < bank.d_q; ++r)
      for (std::size_t c = 0; c < nf; ++c) CHECK(bank.K(r, c) == frozen_k[l](r, c));
  }
}

TEST_CASE("total loss content: beta 0, fresh orthogonal init, nonnegativity") {
  RunConfig cfg = tiny_config(Method::kData);
  TrainState st = init_train_state(cfg);
  const TaskStream stream = gen_task_stream(cfg.stream);
  expand_for_new_task(st);
  std::vector<ParamRef> params = collect_trainable(st.model, false);
  const Matrix bx = stream.tasks[0].train.x;
  const std::vector<int>& by = stream.tasks[0].train.y;

  Tape t0;
  LossBuild no_beta = build_loss(t0, st.model, params, bx, by, 0.0);
  CHECK(no_beta.ortho == -1);
  Tape t1;
  LossBuild with_beta = build_loss(t1, st.model, params, bx, by, 10.0);
  REQUIRE(with_beta.ortho >= 0);
  // Freshly initialized components carry no penalty, so the totals agree.
  CHECK(t1.value(with_beta.ortho)(0, 0) < 1e-18);
  CHECK(t1.value(with_beta.total)(0, 0) ==
        doctest::Approx(t0.value(no_beta.total)(0, 0)).epsilon(1e-12));
  CHECK(t1.value(with_beta.total)(0, 0) >= 0.0);
}

TEST_CASE("training loss decreases across epochs on a separable task") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RunConfig cfg = tiny_config(Method::kSeqLora, seed);
    cfg.epochs = 4;
    cfg.pretrain_steps = 0;  // adapters start from the raw frozen backbone
    cfg.stream.shift_magnitude = 0.0;
    cfg.stream.train_per_task = 200;
    cfg.lr = 1e-3;
    TrainState st = init_train_state(cfg);
    const TaskStream stream = gen_task_stream(cfg.stream);
    train_task(st, stream.tasks[0]);
    const std::size_t steps_per_epoch = st.log.size() / cfg.epochs;
    REQUIRE(steps_per_epoch > 0);
    double prev = 1e300;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      double avg = 0.0;
      for (std::size_t s = 0; s < steps_per_epoch; ++s) avg += st.log[e * steps_per_epoch + s].loss;
      avg /= static_cast<double>(steps_per_epoch);
      CHECK(avg < prev);
      prev = avg;
    }
  }
}

TEST_CASE("identical configs give bit-identical runs") {
  const RunConfig cfg = tiny_config(Method::kData, 3);
  const TaskStream stream = gen_task_stream(cfg.stream);
  const RunResult a = train_sequence(cfg, stream);
  const RunResult b = train_sequence(cfg, stream);
  REQUIRE(a.acc.n() == b.acc.n());
  for (std::size_t q = 0; q < a.acc.n(); ++q)
    for (std::size_t m = 0; m < a.acc.n(); ++m) CHECK(a.acc.at(q, m) == b.acc.at(q, m));
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].loss == b.log[i].loss);
    CHECK(a.log[i].restored == b.log[i].restored);
  }

  // The parameter trajectory itself is bit-reproducible, not just the
  // aggregates.
  TrainState s1 = init_train_state(cfg);
  TrainState s2 = init_train_state(cfg);
  while (s1.tasks_done < stream.tasks.size()) {
    train_one_task(s1, stream);
    train_one_task(s2, stream);
    const auto p1 = snapshot_params(s1.model);
    const auto p2 = snapshot_params(s2.model);
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(bits_equal(p1[i], p2[i]));
  }
}

TEST_CASE("lora_replay with ratio zero matches seqlora bit for bit") {
  RunConfig seq = tiny_config(Method::kSeqLora, 7);
  RunConfig rep = tiny_config(Method::kLoraReplay, 7);
  rep.replay_ratio = 0.0;
  const TaskStream stream = gen_task_stream(seq.stream);
  const RunResult a = train_sequence(seq, stream);
  const RunResult b = train_sequence(rep, stream);
  for (std::size_t q = 0; q < a.acc.n(); ++q)
    for (std::size_t m = 0; m < a.acc.n(); ++m) CHECK(a.acc.at(q, m) == b.acc.at(q, m));
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
}

TEST_CASE("replay buffer stores the configured fraction deterministically") {
  Rng rng_a(5), rng_b(5);
  Dataset train;
  train.x = Matrix(50, 4, 1.0);
  train.y.assign(50, 1);
  ReplayBuffer a, b;
  a.add_task_samples(train, 0, 0.02, rng_a);
  CHECK(a.size() == 1);  // ceil(0.02 * 50)
  b.add_task_samples(train, 0, 0.02, rng_b);
  CHECK(rng_a.state() == rng_b.state());
  ReplayBuffer zero;
  zero.add_task_samples(train, 0, 0.0, rng_a);
  CHECK(zero.size() == 0);
}

TEST_CASE("two identical tasks show no forgetting") {
  RunConfig cfg = tiny_config(Method::kSeqLora, 11);
  cfg.stream.shift_magnitude = 0.0;
  cfg.stream.train_per_task = 200;
  cfg.stream.test_per_task = 100;
  cfg.epochs = 4;
  const TaskStream stream = gen_task_stream(cfg.stream);
  const RunResult res = train_sequence(cfg, stream);
  CHECK(res.acc.at(0, 1) >= res.acc.at(0, 0) - 0.08);
}

TEST_CASE("divergent training aborts with a diagnostic") {
  RunConfig cfg = tiny_config(Method::kSeqLora, 13);
  cfg.lr = 1e9;
  cfg.epochs = 20;
  const TaskStream stream = gen_task_stream(cfg.stream);
  CHECK_THROWS_AS(train_sequence(cfg, stream), std::runtime_error);
}

TEST_CASE("restoration fires on the configured cadence and logs counts") {
  RunConfig cfg = tiny_config(Method::kData, 17);
  cfg.epochs = 4;
  cfg.restore_policy = {1.0, 7};
  TrainState st = init_train_state(cfg);
  const TaskStream stream = gen_task_stream(cfg.stream);
  expand_for_new_task(st);
  train_task(st, stream.tasks[0]);
  std::size_t fired = 0;
  for (std::size_t i = 0; i < st.log.size(); ++i) {
    if ((i + 1) % 7 == 0) {
      CHECK(st.log[i].restored > 0);
      ++fired;
    } else {
      CHECK(st.log[i].restored == 0);
    }
  }
  CHECK(fired == st.log.size() / 7);
  // p = 1 restores the up-projections to the source state: exact zeros.
  const std::size_t last_restore = (st.log.size() / 7) * 7;
  if (st.log.size() - last_restore == 0) {
    CHECK(frobenius_sq(st.model.hidden[0].A2) == 0.0);
  }
}

TEST_CASE("scalar lambda and dual-bank variants keep exact gradients") {
  for (const bool dual : {false, true}) {
    RunConfig cfg = tiny_config(Method::kData, 23);
    cfg.flags.scalar_lambda = !dual;
    cfg.flags.dual_bank = dual;
    TrainState st = init_train_state(cfg);
    if (dual) REQUIRE(st.model.banks_low.size() == st.model.banks.size());
    const TaskStream stream = gen_task_stream(cfg.stream);
    train_one_task(st, stream);
    expand_for_new_task(st);
    Matrix bx(5, cfg.stream.d_in);
    std::vector<int> by;
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < cfg.stream.d_in; ++j) bx(i, j) = stream.tasks[1].train.x(i, j);
      by.push_back(stream.tasks[1].train.y[i]);
    }
    const GradCheckReport report = grad_check(st.model, bx, by, cfg.beta, 1e-5);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("beta zero reports the ortho gradcheck group as skipped") {
  RunConfig cfg = tiny_config(Method::kData, 29);
  TrainState st = init_train_state(cfg);
  const TaskStream stream = gen_task_stream(cfg.stream);
  expand_for_new_task(st);
  Matrix bx(4, cfg.stream.d_in);
  std::vector<int> by;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < cfg.stream.d_in; ++j) bx(i, j) = stream.tasks[0].train.x(i, j);
    by.push_back(stream.tasks[0].train.y[i]);
  }
  const GradCheckReport report = grad_check(st.model, bx, by, 0.0, 1e-5);
  bool found = false;
  for (const GradCheckGroup& g : report.groups) {
    if (g.name == "ortho") {
      CHECK(g.skipped);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("full-model gradcheck passes on a mixed frozen/unfrozen state") {
  RunConfig cfg = tiny_config(Method::kData, 19);
  cfg.stream.d_in = 8;
  TrainState st = init_train_state(cfg);
  const TaskStream stream = gen_task_stream(cfg.stream);
  train_one_task(st, stream);
  expand_for_new_task(st);

  Matrix bx(6, cfg.stream.d_in);
  std::vector<int> by;
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < cfg.stream.d_in; ++j) bx(i, j) = stream.tasks[1].train.x(i, j);
    by.push_back(stream.tasks[1].train.y[i]);
  }
  const GradCheckReport report = grad_check(st.model, bx, by, cfg.beta, 1e-5);
  for (const GradCheckGroup& g : report.groups) {
    if (!g.skipped) CHECK(g.max_rel_err < 1e-4);
  }
  CHECK(report.max_rel_err < 1e-4);

  // Corrupted gradients must be caught and attributed.
  const GradCheckReport bad = grad_check(st.model, bx, by, cfg.beta, 1e-5, "bank.K");
  bool flagged = false;
  for (const GradCheckGroup& g : bad.groups) {
    if (g.name == "bank.K") flagged = g.max_rel_err > 1e-4;
  }
  CHECK(flagged);
}
