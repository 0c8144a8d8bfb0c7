#include "datacl/lifecycle.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace datacl {

namespace {

constexpr double kDegenerateResidual = 1e-8;

double vec_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void subtract_projection(std::vector<double>& v, const std::vector<double>& unit) {
  double proj = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) proj += v[i] * unit[i];
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * unit[i];
}

// Orthonormal basis spanning the given vectors (near-dependent ones dropped).
std::vector<std::vector<double>> orthonormal_basis(const std::vector<std::vector<double>>& vectors) {
  std::vector<std::vector<double>> basis;
  for (std::vector<double> v : vectors) {
    for (const auto& u : basis) subtract_projection(v, u);
    const double n = vec_norm(v);
    if (n > kDegenerateResidual) {
      for (double& x : v) x /= n;
      basis.push_back(std::move(v));
    }
  }
  return basis;
}

// `count` unit vectors of dimension `dim`, orthogonal to `basis` and to each
// other while dimension permits; afterwards plain unit-norm random draws.
std::vector<std::vector<double>> draw_orthogonal(std::size_t count, std::size_t dim,
                                                 std::vector<std::vector<double>> basis, Rng& rng) {
  std::vector<std::vector<double>> out;
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<double> v(dim);
    bool placed = false;
    for (int attempt = 0; attempt < 16 && !placed; ++attempt) {
      for (double& x : v) x = rng.normal();
      if (basis.size() < dim) {
        std::vector<double> r = v;
        for (const auto& u : basis) subtract_projection(r, u);
        const double rn = vec_norm(r);
        if (rn <= kDegenerateResidual) continue;
        for (double& x : r) x /= rn;
        basis.push_back(r);
        out.push_back(std::move(r));
        placed = true;
      } else {
        // Frozen span saturates the space; orthogonality is impossible.
        const double vn = vec_norm(v);
        if (vn <= kDegenerateResidual) continue;
        for (double& x : v) x /= vn;
        out.push_back(v);
        placed = true;
      }
    }
    if (!placed) throw std::runtime_error("draw_orthogonal: degenerate random draws");
  }
  return out;
}

std::vector<double> column_of(const Matrix& m, std::size_t c) {
  std::vector<double> v(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) v[r] = m(r, c);
  return v;
}

Matrix append_columns(const Matrix& m, const std::vector<std::vector<double>>& cols) {
  Matrix out(m.rows(), m.cols() + cols.size());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (std::size_t r = 0; r < m.rows(); ++r) out(r, m.cols() + c) = cols[c][r];
  return out;
}

}  // namespace

Matrix orthogonal_init(std::size_t n, std::size_t d, Rng& rng) {
  if (n == 0 || d == 0) throw std::invalid_argument("orthogonal_init: empty shape");
  if (n > d) {
    throw std::invalid_argument("orthogonal_init: cannot build " + std::to_string(n) +
                                " orthonormal rows in dimension " + std::to_string(d));
  }
  Matrix b(n, d);
  std::vector<std::vector<double>> rows;
  auto drawn = draw_orthogonal(n, d, {}, rng);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) b(i, j) = drawn[i][j];
  return b;
}

double ortho_loss(const Matrix& b) {
  Matrix gram = matmul_nt(b, b);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) -= 1.0;
  return frobenius_sq(gram);
}

void expand_for_task(ComponentBank& bank, std::size_t task_index, std::size_t per_task, Rng& rng) {
  if (task_index < 1) throw std::invalid_argument("expand_for_task: task index is 1-based");
  if (per_task == 0) throw std::invalid_argument("expand_for_task: per_task must be positive");
  if (task_index == 1 && bank.components() != 0) {
    throw std::invalid_argument("expand_for_task: task 1 expects an empty bank");
  }

  for (auto& f : bank.frozen) f = 1;

  // Keys and attention vectors: project against frozen columns.
  std::vector<std::vector<double>> frozen_k, frozen_a;
  for (std::size_t m = 0; m < bank.components(); ++m) {
    frozen_k.push_back(column_of(bank.K, m));
    frozen_a.push_back(column_of(bank.A, m));
  }
  const auto new_k = draw_orthogonal(per_task, bank.d_q, orthonormal_basis(frozen_k), rng);
  const auto new_a = draw_orthogonal(per_task, bank.d_q, orthonormal_basis(frozen_a), rng);
  bank.K = append_columns(bank.K, new_k);
  bank.A = append_columns(bank.A, new_a);

  // W slices as flattened l_w*d vectors, orthogonal across components.
  const std::size_t wide = bank.l_w * bank.d;
  std::vector<std::vector<double>> frozen_w;
  for (std::size_t m = 0; m < bank.components(); ++m) {
    std::vector<double> v(wide);
    const double* src = bank.W.data() + m * wide;
    for (std::size_t i = 0; i < wide; ++i) v[i] = src[i];
    frozen_w.push_back(std::move(v));
  }
  const auto new_w = draw_orthogonal(per_task, wide, orthonormal_basis(frozen_w), rng);
  Matrix w((bank.components() + per_task) * bank.l_w, bank.d);
  for (std::size_t i = 0; i < bank.W.size(); ++i) w.data()[i] = bank.W.data()[i];
  for (std::size_t m = 0; m < per_task; ++m) {
    double* dst = w.data() + (bank.components() + m) * wide;
    for (std::size_t i = 0; i < wide; ++i) dst[i] = new_w[m][i];
  }
  bank.W = std::move(w);

  bank.frozen.insert(bank.frozen.end(), per_task, 0);
}

std::size_t apply_restoration(std::vector<RestorableParam>& params, const RestorationPolicy& policy,
                              Rng& rng) {
  if (policy.interval < 1) throw std::invalid_argument("restoration interval must be >= 1");
  if (policy.p < 0.0 || policy.p > 1.0) {
    throw std::invalid_argument("restoration probability must lie in [0, 1]");
  }
  std::size_t restored = 0;
  for (RestorableParam& rp : params) {
    Matrix& p = *rp.param;
    if (!rp.snapshot.same_shape(p)) {
      throw std::invalid_argument("apply_restoration: snapshot shape mismatch");
    }
    for (std::size_t r = rp.row_begin; r < rp.row_end; ++r) {
      for (std::size_t c = 0; c < p.cols(); ++c) {
        if (rng.bernoulli(policy.p)) {
          p(r, c) = rp.snapshot(r, c);
          ++restored;
        }
      }
    }
  }
  return restored;
}

}  // namespace datacl
