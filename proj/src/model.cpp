#include "datacl/model.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <unordered_map>

#include "datacl/lifecycle.hpp"

namespace datacl {

namespace {

Matrix relu_value(Matrix m) {
  for (double& v : m.flat())
    if (v < 0.0) v = 0.0;
  return m;
}

Matrix ones_row(std::size_t d) { return Matrix(1, d, 1.0); }

void for_each_param(ModelState& model, bool include_backbone,
                    const std::function<void(const std::string&, const std::string&, Matrix*)>& fn) {
  if (include_backbone) {
    for (std::size_t l = 0; l < model.hidden.size(); ++l) {
      fn("hidden" + std::to_string(l) + ".W0", "backbone", &model.hidden[l].W0);
      fn("hidden" + std::to_string(l) + ".b0", "backbone", &model.hidden[l].b0);
    }
    fn("head.W", "backbone", &model.head.W);
    fn("head.b", "backbone", &model.head.b);
    return;
  }
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    const std::string p = "hidden" + std::to_string(l) + ".";
    if (model.cfg.flags.low_branch) {
      fn(p + "B1", "adapter.B1", &model.hidden[l].B1);
      fn(p + "A1", "adapter.A1", &model.hidden[l].A1);
    }
    if (model.cfg.flags.high_branch) {
      fn(p + "B2", "adapter.B2", &model.hidden[l].B2);
      fn(p + "A2", "adapter.A2", &model.hidden[l].A2);
    }
  }
  if (model.cfg.flags.weighting && model.use_adapters()) {
    for (std::size_t l = 0; l < model.banks.size(); ++l) {
      const std::string p = "bank" + std::to_string(l) + ".";
      fn(p + "W", "bank.W", &model.banks[l].W);
      fn(p + "K", "bank.K", &model.banks[l].K);
      fn(p + "A", "bank.A", &model.banks[l].A);
    }
    for (std::size_t l = 0; l < model.banks_low.size(); ++l) {
      const std::string p = "bank_low" + std::to_string(l) + ".";
      fn(p + "W", "bank.W", &model.banks_low[l].W);
      fn(p + "K", "bank.K", &model.banks_low[l].K);
      fn(p + "A", "bank.A", &model.banks_low[l].A);
    }
  }
}

// Scale vectors for one adapted layer given a fixed query, value path.
struct LambdaPair {
  Matrix high;
  Matrix low;
};

LambdaPair lambda_for_layer(const ModelState& model, std::size_t l, const Matrix& q) {
  const std::size_t d_out = model.hidden[l].d_out();
  LambdaPair lam{ones_row(d_out), ones_row(d_out)};
  if (!model.cfg.flags.weighting) return lam;

  const ComponentBank& bank = model.banks[l];
  if (bank.components() == 0) {
    lam.high = Matrix(1, d_out);
    lam.low = Matrix(1, d_out);
    return lam;
  }
  const bool attn = model.cfg.flags.attention;
  if (model.cfg.flags.dual_bank) {
    const ComponentBank& low_bank = model.banks_low[l];
    const Matrix lam_h_full = compose_lambda(attention_weights(q, bank, attn), bank);
    const Matrix lam_l_full = compose_lambda(attention_weights(q, low_bank, attn), low_bank);
    lam.high = query(lam_h_full);  // mean over all rows
    lam.low = query(lam_l_full);
  } else {
    const Matrix lam_full = compose_lambda(attention_weights(q, bank, attn), bank);
    LambdaSplit split = split_lambda(lam_full);
    lam.high = std::move(split.high);
    lam.low = std::move(split.low);
  }
  if (model.cfg.flags.scalar_lambda) {
    for (Matrix* m : {&lam.high, &lam.low}) {
      double mean = 0.0;
      for (double v : m->flat()) mean += v;
      mean /= static_cast<double>(m->size());
      *m = Matrix(1, m->cols(), mean);
    }
  }
  return lam;
}

}  // namespace

ModelState build_model(const ModelConfig& cfg, Rng& init_rng) {
  if (cfg.l_w == 0 || cfg.l_w % 2 != 0) {
    throw std::invalid_argument("l_w must be even and positive, got " + std::to_string(cfg.l_w));
  }
  ModelState model;
  model.cfg = cfg;

  const std::size_t dims[3] = {cfg.d_in, cfg.hidden, cfg.hidden};
  for (std::size_t l = 0; l < 2; ++l) {
    const std::size_t fan_in = dims[l];
    const std::size_t fan_out = dims[l + 1];
    Matrix w(fan_out, fan_in);
    fill_normal(w, init_rng, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Matrix b(1, fan_out);
    model.hidden.push_back(make_adapter_layer(std::move(w), std::move(b), cfg.d_l, cfg.d_h,
                                              init_rng));
  }
  model.head.W = Matrix(cfg.classes, cfg.hidden);
  fill_normal(model.head.W, init_rng, 0.0, std::sqrt(1.0 / static_cast<double>(cfg.hidden)));
  model.head.b = Matrix(1, cfg.classes);

  if (cfg.flags.weighting) {
    for (const DecomposedAdapterLayer& layer : model.hidden) {
      model.banks.push_back(make_bank(cfg.l_w, layer.d_out(), layer.d_in()));
      if (cfg.flags.dual_bank) {
        model.banks_low.push_back(make_bank(cfg.l_w, layer.d_out(), layer.d_in()));
      }
    }
  }
  return model;
}

std::vector<ParamRef> collect_trainable(ModelState& model, bool include_backbone) {
  std::vector<ParamRef> out;
  for_each_param(model, include_backbone,
                 [&](const std::string& name, const std::string& group, Matrix* value) {
                   out.push_back({name, group, value});
                 });
  return out;
}

LossBuild build_loss(Tape& tape, ModelState& model, const std::vector<ParamRef>& params,
                     const Matrix& x, const std::vector<int>& labels, double beta,
                     bool backbone_trainable, const std::vector<Matrix>* pinned_queries) {
  LossBuild out;
  std::unordered_map<const Matrix*, Tape::NodeId> node_of;
  for (const ParamRef& p : params) {
    const Tape::NodeId id = tape.leaf(*p.value, true);
    node_of[p.value] = id;
    out.param_nodes.push_back(id);
  }
  const auto node_for = [&](const Matrix& m) -> Tape::NodeId {
    auto it = node_of.find(&m);
    if (it != node_of.end()) return it->second;
    return tape.constant(m);
  };

  const bool adapters_active = !backbone_trainable && model.use_adapters();
  const ModelFlags& flags = model.cfg.flags;

  Tape::NodeId h = tape.constant(x);
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    DecomposedAdapterLayer& layer = model.hidden[l];
    Tape::NodeId fx = tape.add_rowvec(tape.matmul_nt(h, node_for(layer.W0)), node_for(layer.b0));
    if (adapters_active) {
      const std::size_t d_out = layer.d_out();
      Tape::NodeId lam_h = -1;
      Tape::NodeId lam_l = -1;
      if (flags.weighting) {
        Matrix q = pinned_queries ? (*pinned_queries)[l] : query(tape.value(h));
        out.queries.push_back(q);
        ComponentBank& bank = model.banks[l];
        if (bank.components() == 0) {
          lam_h = tape.constant(Matrix(1, d_out));
          lam_l = tape.constant(Matrix(1, d_out));
        } else if (flags.dual_bank) {
          ComponentBank& low_bank = model.banks_low[l];
          const Tape::NodeId a_h =
              tape.attended_cosine(q, node_for(bank.A), node_for(bank.K), flags.attention);
          const Tape::NodeId a_l = tape.attended_cosine(q, node_for(low_bank.A),
                                                        node_for(low_bank.K), flags.attention);
          lam_h = tape.mean_rows(
              tape.weighted_sum_slices(a_h, node_for(bank.W), bank.l_w), 0, bank.l_w);
          lam_l = tape.mean_rows(
              tape.weighted_sum_slices(a_l, node_for(low_bank.W), low_bank.l_w), 0, low_bank.l_w);
        } else {
          const Tape::NodeId alpha =
              tape.attended_cosine(q, node_for(bank.A), node_for(bank.K), flags.attention);
          const Tape::NodeId lam_full =
              tape.weighted_sum_slices(alpha, node_for(bank.W), bank.l_w);
          lam_h = tape.mean_rows(lam_full, 0, bank.l_w / 2);
          lam_l = tape.mean_rows(lam_full, bank.l_w / 2, bank.l_w);
        }
        if (flags.scalar_lambda) {
          lam_h = tape.row_mean_fill(lam_h);
          lam_l = tape.row_mean_fill(lam_l);
        }
      } else {
        lam_h = tape.constant(ones_row(d_out));
        lam_l = tape.constant(ones_row(d_out));
      }
      if (flags.high_branch) {
        const Tape::NodeId f_h =
            tape.matmul_nt(tape.matmul_nt(h, node_for(layer.B2)), node_for(layer.A2));
        fx = tape.add(fx, tape.rowwise_mul(f_h, lam_h));
      }
      if (flags.low_branch) {
        const Tape::NodeId f_l =
            tape.matmul_nt(tape.matmul_nt(h, node_for(layer.B1)), node_for(layer.A1));
        fx = tape.add(fx, tape.rowwise_mul(f_l, lam_l));
      }
    }
    h = tape.relu(fx);
  }
  const Tape::NodeId logits =
      tape.add_rowvec(tape.matmul_nt(h, node_for(model.head.W)), node_for(model.head.b));
  out.task = tape.cross_entropy_mean(logits, labels);
  out.total = out.task;

  if (!backbone_trainable && beta > 0.0 && flags.ortho && flags.weighting) {
    std::vector<ComponentBank*> all_banks;
    for (auto& b : model.banks) all_banks.push_back(&b);
    for (auto& b : model.banks_low) all_banks.push_back(&b);
    Tape::NodeId ortho = -1;
    for (ComponentBank* bank : all_banks) {
      const std::size_t m_total = bank->components();
      const std::size_t m_frozen = bank->frozen_count();
      if (m_total == 0 || m_total == m_frozen) continue;
      const Tape::NodeId w_rows = tape.reshape_rows(node_for(bank->W), m_frozen * bank->l_w,
                                                    m_total * bank->l_w, bank->l_w);
      const Tape::NodeId k_rows = tape.cols_as_rows(node_for(bank->K), m_frozen, m_total);
      const Tape::NodeId a_rows = tape.cols_as_rows(node_for(bank->A), m_frozen, m_total);
      Tape::NodeId term = tape.frobenius_sq(tape.sub_identity(tape.matmul_nt(w_rows, w_rows)));
      term = tape.add(term, tape.frobenius_sq(tape.sub_identity(tape.matmul_nt(k_rows, k_rows))));
      term = tape.add(term, tape.frobenius_sq(tape.sub_identity(tape.matmul_nt(a_rows, a_rows))));
      ortho = ortho < 0 ? term : tape.add(ortho, term);
    }
    if (ortho >= 0) {
      out.ortho = ortho;
      out.total = tape.add(out.task, tape.scale(ortho, beta));
    }
  }
  return out;
}

Matrix forward_logits(const ModelState& model, const Matrix& x) {
  Matrix h = x;
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    const DecomposedAdapterLayer& layer = model.hidden[l];
    Matrix fx = base_output(layer, h);
    if (model.use_adapters()) {
      const LambdaPair lam = lambda_for_layer(model, l, query(h));
      const BranchFeatures f = branch_features(layer, h);
      for (std::size_t i = 0; i < fx.rows(); ++i) {
        for (std::size_t j = 0; j < fx.cols(); ++j) {
          if (model.cfg.flags.high_branch) fx(i, j) += lam.high(0, j) * f.high(i, j);
          if (model.cfg.flags.low_branch) fx(i, j) += lam.low(0, j) * f.low(i, j);
        }
      }
    }
    h = relu_value(std::move(fx));
  }
  Matrix logits = matmul_nt(h, model.head.W);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) += model.head.b(0, j);
  return logits;
}

Matrix forward_logits_static(const ModelState& model, const Matrix& x, std::size_t task) {
  if (task >= model.task_queries.size()) {
    throw std::invalid_argument("forward_logits_static: no stored query for task " +
                                std::to_string(task));
  }
  Matrix h = x;
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    const DecomposedAdapterLayer& layer = model.hidden[l];
    Matrix fx;
    if (model.use_adapters()) {
      LambdaPair lam = lambda_for_layer(model, l, model.task_queries[task][l]);
      if (!model.cfg.flags.high_branch) lam.high = Matrix(1, layer.d_out());
      if (!model.cfg.flags.low_branch) lam.low = Matrix(1, layer.d_out());
      const MergedLayer merged = reparameterize(layer, lam.high, lam.low);
      fx = merged_forward(merged, h);
    } else {
      fx = base_output(layer, h);
    }
    h = relu_value(std::move(fx));
  }
  Matrix logits = matmul_nt(h, model.head.W);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) += model.head.b(0, j);
  return logits;
}

double evaluate_accuracy(const ModelState& model, const Dataset& data, EvalMode mode,
                         std::size_t task) {
  if (data.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty dataset");
  std::size_t correct = 0;
  if (mode == EvalMode::kStatic) {
    const Matrix logits = forward_logits_static(model, data.x, task);
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j)
        if (logits(i, j) > logits(i, best)) best = j;
      if (static_cast<int>(best) == data.y[i]) ++correct;
    }
  } else {
    Matrix row(1, data.x.cols());
    for (std::size_t i = 0; i < data.size(); ++i) {
      for (std::size_t j = 0; j < data.x.cols(); ++j) row(0, j) = data.x(i, j);
      const Matrix logits = forward_logits(model, row);
      std::size_t best = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j)
        if (logits(0, j) > logits(0, best)) best = j;
      if (static_cast<int>(best) == data.y[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<Matrix> layer_queries(const ModelState& model, const Matrix& x) {
  std::vector<Matrix> queries;
  Matrix h = x;
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    const DecomposedAdapterLayer& layer = model.hidden[l];
    const Matrix q = query(h);
    queries.push_back(q);
    Matrix fx = base_output(layer, h);
    if (model.use_adapters()) {
      const LambdaPair lam = lambda_for_layer(model, l, q);
      const BranchFeatures f = branch_features(layer, h);
      for (std::size_t i = 0; i < fx.rows(); ++i) {
        for (std::size_t j = 0; j < fx.cols(); ++j) {
          if (model.cfg.flags.high_branch) fx(i, j) += lam.high(0, j) * f.high(i, j);
          if (model.cfg.flags.low_branch) fx(i, j) += lam.low(0, j) * f.low(i, j);
        }
      }
    }
    h = relu_value(std::move(fx));
  }
  return queries;
}

GradCheckReport grad_check(ModelState& model, const Matrix& x, const std::vector<int>& labels,
                           double beta, double eps, const std::string& corrupt_group) {
  if (!(eps > 0.0) || eps > 1e-2) {
    throw std::invalid_argument("grad_check: eps must lie in (0, 1e-2]");
  }
  std::vector<ParamRef> params = collect_trainable(model, false);

  // Queries pinned from the unperturbed state so finite differences honour
  // the stop-gradient on q.
  std::vector<Matrix> pinned;
  {
    Tape tape;
    LossBuild lb = build_loss(tape, model, params, x, labels, beta, false, nullptr);
    pinned = lb.queries;
  }
  const std::vector<Matrix>* pin = pinned.empty() ? nullptr : &pinned;

  Tape tape;
  LossBuild lb = build_loss(tape, model, params, x, labels, beta, false, pin);
  tape.backward(lb.total);
  std::vector<Matrix> analytic;
  for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(tape.grad(lb.param_nodes[i]));

  std::vector<Matrix> ortho_analytic;
  const bool has_ortho = lb.ortho >= 0;
  if (has_ortho) {
    tape.backward(lb.ortho);
    for (std::size_t i = 0; i < params.size(); ++i)
      ortho_analytic.push_back(tape.grad(lb.param_nodes[i]));
  }

  if (!corrupt_group.empty()) {
    bool found = false;
    for (std::size_t i = 0; i < params.size() && !found; ++i) {
      if (params[i].group == corrupt_group && analytic[i].size() > 0) {
        analytic[i].data()[0] += 1.0;
        found = true;
      }
    }
    if (!found) {
      throw std::invalid_argument("grad_check: unknown corrupt group '" + corrupt_group + "'");
    }
  }

  const auto eval_pair = [&]() {
    Tape t;
    LossBuild b = build_loss(t, model, params, x, labels, beta, false, pin);
    return std::pair<double, double>(t.value(b.total)(0, 0),
                                     b.ortho >= 0 ? t.value(b.ortho)(0, 0) : 0.0);
  };

  GradCheckReport report;
  std::unordered_map<std::string, std::size_t> group_index;
  const auto group_slot = [&](const std::string& g) -> GradCheckGroup& {
    auto it = group_index.find(g);
    if (it == group_index.end()) {
      group_index[g] = report.groups.size();
      report.groups.push_back({g, 0.0, false});
      return report.groups.back();
    }
    return report.groups[it->second];
  };

  GradCheckGroup ortho_group{"ortho", 0.0, !has_ortho};

  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& value = *params[i].value;
    GradCheckGroup& slot = group_slot(params[i].group);
    for (std::size_t e = 0; e < value.size(); ++e) {
      const double orig = value.data()[e];
      value.data()[e] = orig + eps;
      const auto up = eval_pair();
      value.data()[e] = orig - eps;
      const auto down = eval_pair();
      value.data()[e] = orig;
      const double fd = (up.first - down.first) / (2.0 * eps);
      const double rel =
          std::abs(analytic[i].data()[e] - fd) / std::max(1.0, std::abs(fd));
      slot.max_rel_err = std::max(slot.max_rel_err, rel);
      if (has_ortho && params[i].group.rfind("bank.", 0) == 0) {
        const double fd_o = (up.second - down.second) / (2.0 * eps);
        const double rel_o =
            std::abs(ortho_analytic[i].data()[e] - fd_o) / std::max(1.0, std::abs(fd_o));
        ortho_group.max_rel_err = std::max(ortho_group.max_rel_err, rel_o);
      }
    }
  }
  report.groups.push_back(ortho_group);
  for (const GradCheckGroup& g : report.groups) {
    if (!g.skipped) report.max_rel_err = std::max(report.max_rel_err, g.max_rel_err);
  }
  return report;
}

}  // namespace datacl
