#include "datacl/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace datacl {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

Tape::NodeId Tape::push(Matrix value) {
  nodes_.push_back({std::move(value), Matrix()});
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::leaf(const Matrix& value, bool /*requires_grad*/) { return push(value); }

Tape::NodeId Tape::constant(Matrix value) { return push(std::move(value)); }

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const NodeId out = push(datacl::matmul(value(a), value(b)));
  ops_.push_back([a, b, out](Tape& t) {
    const Matrix& g = t.grad(out);
    t.grad_ref(a) = datacl::add(t.grad(a), datacl::matmul_nt(g, t.value(b)));
    t.grad_ref(b) = datacl::add(t.grad(b), datacl::matmul_tn(t.value(a), g));
  });
  return out;
}

Tape::NodeId Tape::matmul_nt(NodeId a, NodeId b) {
  const NodeId out = push(datacl::matmul_nt(value(a), value(b)));
  ops_.push_back([a, b, out](Tape& t) {
    const Matrix& g = t.grad(out);
    t.grad_ref(a) = datacl::add(t.grad(a), datacl::matmul(g, t.value(b)));
    t.grad_ref(b) = datacl::add(t.grad(b), datacl::matmul_tn(g, t.value(a)));
  });
  return out;
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const NodeId out = push(datacl::add(value(a), value(b)));
  ops_.push_back([a, b, out](Tape& t) {
    t.grad_ref(a) = datacl::add(t.grad(a), t.grad(out));
    t.grad_ref(b) = datacl::add(t.grad(b), t.grad(out));
  });
  return out;
}

Tape::NodeId Tape::add_rowvec(NodeId x, NodeId v) {
  const Matrix& xv = value(x);
  const Matrix& vv = value(v);
  check(vv.rows() == 1 && vv.cols() == xv.cols(), "add_rowvec: broadcast shape mismatch");
  Matrix out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += vv(0, j);
  const NodeId id = push(std::move(out));
  ops_.push_back([x, v, id](Tape& t) {
    const Matrix& g = t.grad(id);
    t.grad_ref(x) = datacl::add(t.grad(x), g);
    Matrix& gv = t.grad_ref(v);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gv(0, j) += g(i, j);
  });
  return id;
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  const NodeId out = push(datacl::sub(value(a), value(b)));
  ops_.push_back([a, b, out](Tape& t) {
    t.grad_ref(a) = datacl::add(t.grad(a), t.grad(out));
    t.grad_ref(b) = datacl::sub(t.grad(b), t.grad(out));
  });
  return out;
}

Tape::NodeId Tape::sub_identity(NodeId a) {
  const Matrix& av = value(a);
  check(av.rows() == av.cols(), "sub_identity: input must be square");
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) out(i, i) -= 1.0;
  const NodeId id = push(std::move(out));
  ops_.push_back([a, id](Tape& t) { t.grad_ref(a) = datacl::add(t.grad(a), t.grad(id)); });
  return id;
}

Tape::NodeId Tape::hadamard(NodeId a, NodeId b) {
  const NodeId out = push(datacl::hadamard(value(a), value(b)));
  ops_.push_back([a, b, out](Tape& t) {
    const Matrix& g = t.grad(out);
    t.grad_ref(a) = datacl::add(t.grad(a), datacl::hadamard(g, t.value(b)));
    t.grad_ref(b) = datacl::add(t.grad(b), datacl::hadamard(g, t.value(a)));
  });
  return out;
}

Tape::NodeId Tape::rowwise_mul(NodeId x, NodeId v) {
  const Matrix& xv = value(x);
  const Matrix& vv = value(v);
  check(vv.rows() == 1 && vv.cols() == xv.cols(), "rowwise_mul: broadcast shape mismatch");
  Matrix out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= vv(0, j);
  const NodeId id = push(std::move(out));
  ops_.push_back([x, v, id](Tape& t) {
    const Matrix& g = t.grad(id);
    const Matrix& xval = t.value(x);
    const Matrix& vval = t.value(v);
    Matrix& gx = t.grad_ref(x);
    Matrix& gv = t.grad_ref(v);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) {
        gx(i, j) += g(i, j) * vval(0, j);
        gv(0, j) += g(i, j) * xval(i, j);
      }
    }
  });
  return id;
}

Tape::NodeId Tape::scale(NodeId a, double s) {
  const NodeId out = push(datacl::scale(value(a), s));
  ops_.push_back(
      [a, out, s](Tape& t) { add_scaled_into(t.grad_ref(a), t.grad(out), s); });
  return out;
}

Tape::NodeId Tape::relu(NodeId a) {
  Matrix out = value(a);
  for (double& v : out.flat())
    if (v < 0.0) v = 0.0;
  const NodeId id = push(std::move(out));
  ops_.push_back([a, id](Tape& t) {
    const Matrix& g = t.grad(id);
    const Matrix& av = t.value(a);
    Matrix& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av.data()[i] > 0.0) ga.data()[i] += g.data()[i];
  });
  return id;
}

Tape::NodeId Tape::mean_rows(NodeId a, std::size_t r0, std::size_t r1) {
  const Matrix& av = value(a);
  check(r0 < r1 && r1 <= av.rows(), "mean_rows: bad row range");
  const double inv = 1.0 / static_cast<double>(r1 - r0);
  Matrix out(1, av.cols());
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(0, j) += av(i, j) * inv;
  const NodeId id = push(std::move(out));
  ops_.push_back([a, id, r0, r1, inv](Tape& t) {
    const Matrix& g = t.grad(id);
    Matrix& ga = t.grad_ref(a);
    for (std::size_t i = r0; i < r1; ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += g(0, j) * inv;
  });
  return id;
}

Tape::NodeId Tape::row_mean_fill(NodeId v) {
  const Matrix& vv = value(v);
  check(vv.rows() == 1, "row_mean_fill: input must be a row vector");
  const double inv = 1.0 / static_cast<double>(vv.cols());
  double mean = 0.0;
  for (double x : vv.flat()) mean += x * inv;
  const NodeId id = push(Matrix(1, vv.cols(), mean));
  ops_.push_back([v, id, inv](Tape& t) {
    const Matrix& g = t.grad(id);
    double gsum = 0.0;
    for (double x : g.flat()) gsum += x;
    Matrix& gv = t.grad_ref(v);
    for (double& x : gv.flat()) x += gsum * inv;
  });
  return id;
}

Tape::NodeId Tape::frobenius_sq(NodeId a) {
  Matrix out(1, 1, datacl::frobenius_sq(value(a)));
  const NodeId id = push(std::move(out));
  ops_.push_back([a, id](Tape& t) {
    const double g = t.grad(id)(0, 0);
    const Matrix& av = t.value(a);
    Matrix& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < av.size(); ++i) ga.data()[i] += 2.0 * g * av.data()[i];
  });
  return id;
}

Tape::NodeId Tape::reshape_rows(NodeId a, std::size_t r0, std::size_t r1,
                                std::size_t rows_per_group) {
  const Matrix& av = value(a);
  check(r0 <= r1 && r1 <= av.rows(), "reshape_rows: bad row range");
  check(rows_per_group > 0 && (r1 - r0) % rows_per_group == 0,
        "reshape_rows: range not a multiple of group size");
  const std::size_t groups = (r1 - r0) / rows_per_group;
  const std::size_t wide = rows_per_group * av.cols();
  Matrix out(groups, wide);
  for (std::size_t g = 0; g < groups; ++g) {
    const double* src = av.data() + (r0 + g * rows_per_group) * av.cols();
    double* dst = out.data() + g * wide;
    for (std::size_t j = 0; j < wide; ++j) dst[j] = src[j];
  }
  const NodeId id = push(std::move(out));
  ops_.push_back([a, id, r0, rows_per_group](Tape& t) {
    const Matrix& g = t.grad(id);
    Matrix& ga = t.grad_ref(a);
    const std::size_t wide = g.cols();
    for (std::size_t grp = 0; grp < g.rows(); ++grp) {
      const double* src = g.data() + grp * wide;
      double* dst = ga.data() + (r0 + grp * rows_per_group) * ga.cols();
      for (std::size_t j = 0; j < wide; ++j) dst[j] += src[j];
    }
  });
  return id;
}

Tape::NodeId Tape::cols_as_rows(NodeId a, std::size_t c0, std::size_t c1) {
  const Matrix& av = value(a);
  check(c0 <= c1 && c1 <= av.cols(), "cols_as_rows: bad column range");
  Matrix out(c1 - c0, av.rows());
  for (std::size_t c = c0; c < c1; ++c)
    for (std::size_t r = 0; r < av.rows(); ++r) out(c - c0, r) = av(r, c);
  const NodeId id = push(std::move(out));
  ops_.push_back([a, id, c0](Tape& t) {
    const Matrix& g = t.grad(id);
    Matrix& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t r = 0; r < g.cols(); ++r) ga(r, c0 + i) += g(i, r);
  });
  return id;
}

Tape::NodeId Tape::attended_cosine(const Matrix& q, NodeId attn, NodeId keys,
                                   bool use_attention) {
  const Matrix& av = value(attn);
  const Matrix& kv = value(keys);
  check(q.rows() == 1, "attended_cosine: query must be a row vector");
  check(av.same_shape(kv), "attended_cosine: attention/key shape mismatch");
  check(av.rows() == q.cols(), "attended_cosine: query length differs from key dimension");
  const std::size_t d = av.rows();
  const std::size_t m_count = av.cols();

  Matrix out(1, m_count);
  {
    std::vector<double> u(d), k(d);
    for (std::size_t m = 0; m < m_count; ++m) {
      for (std::size_t i = 0; i < d; ++i) {
        u[i] = use_attention ? q(0, i) * av(i, m) : q(0, i);
        k[i] = kv(i, m);
      }
      out(0, m) = cosine_sim(std::span<const double>(u), std::span<const double>(k));
    }
  }
  const NodeId id = push(std::move(out));

  ops_.push_back([q, attn, keys, id, use_attention, d, m_count](Tape& t) {
    const Matrix& g = t.grad(id);
    const Matrix& av = t.value(attn);
    const Matrix& kv = t.value(keys);
    Matrix& ga = t.grad_ref(attn);
    Matrix& gk = t.grad_ref(keys);
    std::vector<double> u(d);
    for (std::size_t m = 0; m < m_count; ++m) {
      const double gm = g(0, m);
      if (gm == 0.0) continue;
      double uu = 0.0, kk = 0.0, uk = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        u[i] = use_attention ? q(0, i) * av(i, m) : q(0, i);
        uu += u[i] * u[i];
        kk += kv(i, m) * kv(i, m);
        uk += u[i] * kv(i, m);
      }
      const double nu = std::sqrt(uu);
      const double nk = std::sqrt(kk);
      if (nu <= kZeroNormTol || nk <= kZeroNormTol) continue;  // alpha_m = 0, flat
      const double c = uk / (nu * nk);
      for (std::size_t i = 0; i < d; ++i) {
        const double dc_du = kv(i, m) / (nu * nk) - c * u[i] / uu;
        const double dc_dk = u[i] / (nu * nk) - c * kv(i, m) / kk;
        if (use_attention) ga(i, m) += gm * dc_du * q(0, i);
        gk(i, m) += gm * dc_dk;
      }
    }
  });
  return id;
}

Tape::NodeId Tape::weighted_sum_slices(NodeId alpha, NodeId w_stack, std::size_t l_w) {
  const Matrix& al = value(alpha);
  const Matrix& w = value(w_stack);
  check(al.rows() == 1, "weighted_sum_slices: alpha must be a row vector");
  check(l_w > 0 && w.rows() == al.cols() * l_w,
        "weighted_sum_slices: stack rows must equal components * l_w");
  const std::size_t m_count = al.cols();
  Matrix out(l_w, w.cols());
  for (std::size_t m = 0; m < m_count; ++m) {
    const double a = al(0, m);
    if (a == 0.0) continue;
    for (std::size_t r = 0; r < l_w; ++r) {
      const double* src = w.data() + (m * l_w + r) * w.cols();
      double* dst = out.data() + r * out.cols();
      for (std::size_t j = 0; j < w.cols(); ++j) dst[j] += a * src[j];
    }
  }
  const NodeId id = push(std::move(out));
  ops_.push_back([alpha, w_stack, id, l_w, m_count](Tape& t) {
    const Matrix& g = t.grad(id);
    const Matrix& al = t.value(alpha);
    const Matrix& w = t.value(w_stack);
    Matrix& gal = t.grad_ref(alpha);
    Matrix& gw = t.grad_ref(w_stack);
    for (std::size_t m = 0; m < m_count; ++m) {
      const double a = al(0, m);
      double acc = 0.0;
      for (std::size_t r = 0; r < l_w; ++r) {
        const double* grow = g.data() + r * g.cols();
        const double* wrow = w.data() + (m * l_w + r) * w.cols();
        double* gwrow = gw.data() + (m * l_w + r) * gw.cols();
        for (std::size_t j = 0; j < g.cols(); ++j) {
          acc += grow[j] * wrow[j];
          gwrow[j] += a * grow[j];
        }
      }
      gal(0, m) += acc;
    }
  });
  return id;
}

Tape::NodeId Tape::cross_entropy_mean(NodeId logits, const std::vector<int>& labels) {
  const Matrix& z = value(logits);
  check(z.rows() == labels.size(), "cross_entropy_mean: batch size mismatch");
  check(z.rows() > 0, "cross_entropy_mean: empty batch");
  const std::size_t c = z.cols();
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw std::invalid_argument("cross_entropy_mean: label " + std::to_string(y) +
                                  " outside class range [0, " + std::to_string(c) + ")");
    }
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double zmax = z(i, 0);
    for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, z(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(z(i, j) - zmax);
    loss += std::log(sum) + zmax - z(i, static_cast<std::size_t>(labels[i]));
  }
  loss /= static_cast<double>(z.rows());
  const NodeId id = push(Matrix(1, 1, loss));
  ops_.push_back([logits, id, labels](Tape& t) {
    const double g = t.grad(id)(0, 0);
    const Matrix& z = t.value(logits);
    Matrix& gz = t.grad_ref(logits);
    const double inv = 1.0 / static_cast<double>(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
      double zmax = z(i, 0);
      for (std::size_t j = 1; j < z.cols(); ++j) zmax = std::max(zmax, z(i, j));
      double sum = 0.0;
      for (std::size_t j = 0; j < z.cols(); ++j) sum += std::exp(z(i, j) - zmax);
      for (std::size_t j = 0; j < z.cols(); ++j) {
        const double soft = std::exp(z(i, j) - zmax) / sum;
        const double onehot = (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
        gz(i, j) += g * inv * (soft - onehot);
      }
    }
  });
  return id;
}

void Tape::backward(NodeId loss) {
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw std::invalid_argument("backward: loss must be a 1x1 scalar node");
  }
  for (Node& n : nodes_) n.grad = Matrix(n.value.rows(), n.value.cols());
  grad_ref(loss)(0, 0) = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)(*this);
}

}  // namespace datacl
