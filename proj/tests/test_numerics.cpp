#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "datacl/matrix.hpp"
#include "datacl/rng.hpp"
#include "datacl/tape.hpp"

using namespace datacl;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  fill_normal(m, rng);
  return m;
}

// Independent schoolbook product for oracle checks.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

double max_rel_diff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max(1.0, std::abs(b.data()[i]));
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul identity and zero cases") {
  Rng rng(7);
  const Matrix b = random_matrix(2, 5, rng);
  CHECK(bits_equal(matmul(Matrix::identity(2), b), b));
  const Matrix z(3, 2);
  const Matrix zb = matmul(z, b);
  CHECK(zb.rows() == 3);
  CHECK(zb.cols() == 5);
  CHECK(frobenius_sq(zb) == 0.0);
}

TEST_CASE("matmul hand case") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix b = Matrix::from_rows({{5}, {6}});
  const Matrix c = matmul(a, b);
  CHECK(c(0, 0) == 17.0);
  CHECK(c(1, 0) == 39.0);
}

TEST_CASE("matmul rejects dimension mismatch") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), std::invalid_argument);
}

TEST_CASE("matmul associativity on random triples") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(4, 6, rng);
    const Matrix b = random_matrix(6, 3, rng);
    const Matrix c = random_matrix(3, 5, rng);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    CHECK(max_rel_diff(left, right) < 1e-9);
  }
}

TEST_CASE("matmul variants agree with the naive oracle") {
  Rng rng(13);
  const Matrix a = random_matrix(4, 6, rng);
  const Matrix b = random_matrix(5, 6, rng);
  CHECK(max_rel_diff(matmul_nt(a, b), naive_matmul(a, transpose(b))) < 1e-12);
  const Matrix c = random_matrix(4, 5, rng);
  CHECK(max_rel_diff(matmul_tn(a, c), naive_matmul(transpose(a), c)) < 1e-12);
}

TEST_CASE("cosine_sim basics") {
  Rng rng(3);
  const Matrix u = random_matrix(1, 8, rng);
  CHECK(cosine_sim(u, u) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_sim(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0, 1}})) == 0.0);
  CHECK(cosine_sim(Matrix::from_rows({{1, 1}}), Matrix::from_rows({{1, 0}})) ==
        doctest::Approx(0.7071067811865475).epsilon(1e-15));
}

TEST_CASE("cosine_sim zero-norm input returns 0 and warns") {
  const auto before = zero_norm_warning_count();
  CHECK(cosine_sim(Matrix(1, 4), Matrix::from_rows({{1, 0, 0, 0}})) == 0.0);
  CHECK(zero_norm_warning_count() > before);
}

TEST_CASE("cosine_sim scale invariance") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix u = random_matrix(1, 6, rng);
    const Matrix v = random_matrix(1, 6, rng);
    const double c = std::exp(rng.normal());  // positive scale
    CHECK(std::abs(cosine_sim(scale(u, c), v) - cosine_sim(u, v)) < 1e-12);
  }
}

TEST_CASE("frobenius_sq cases") {
  CHECK(frobenius_sq(Matrix(3, 4)) == 0.0);
  CHECK(frobenius_sq(Matrix::identity(3)) == 3.0);
  CHECK(frobenius_sq(Matrix::from_rows({{1, 2}, {3, 4}})) == 30.0);
}

TEST_CASE("rng determinism and bounds") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next() == b.next());
  }
  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(17) < 17);
  }
  CHECK(derive_rng(1, "x").state() != derive_rng(1, "y").state());
  CHECK(derive_rng(1, "x").state() != derive_rng(2, "x").state());
}

TEST_CASE("tape backward on constant loss gives zero gradients") {
  Tape tape;
  const auto x = tape.leaf(Matrix::from_rows({{1, 2, 3}}), true);
  const auto loss = tape.constant(Matrix(1, 1, 5.0));
  tape.backward(loss);
  CHECK(frobenius_sq(tape.grad(x)) == 0.0);
}

TEST_CASE("tape rejects non-scalar loss") {
  Tape tape;
  const auto x = tape.leaf(Matrix(2, 2, 1.0), true);
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("gradient of half squared norm is x") {
  Rng rng(21);
  const Matrix x = random_matrix(3, 4, rng);
  Tape tape;
  const auto xn = tape.leaf(x, true);
  const auto loss = tape.scale(tape.frobenius_sq(xn), 0.5);
  tape.backward(loss);
  CHECK(max_rel_diff(tape.grad(xn), x) < 1e-14);
}

TEST_CASE("tape ops match central finite differences") {
  Rng rng(31);
  Matrix a = random_matrix(3, 4, rng);
  Matrix b = random_matrix(5, 4, rng);
  Matrix v = random_matrix(1, 5, rng);
  const std::vector<int> labels = {0, 2, 4};

  const auto eval = [&]() {
    Tape t;
    const auto an = t.leaf(a, true);
    const auto bn = t.leaf(b, true);
    const auto vn = t.leaf(v, true);
    // Chain through most op kinds: matmul_nt, rowwise_mul, add_rowvec, relu,
    // mean_rows, row_mean_fill, hadamard, sub_identity, cross-entropy.
    auto h = t.matmul_nt(an, bn);             // 3x5
    h = t.rowwise_mul(h, vn);                 // 3x5
    h = t.add_rowvec(h, t.row_mean_fill(vn)); // 3x5
    auto r = t.relu(h);
    auto pooled = t.mean_rows(r, 0, 3);       // 1x5
    auto gram = t.sub_identity(t.matmul_nt(r, r));  // 3x3
    auto loss = t.add(t.cross_entropy_mean(h, labels),
                      t.add(t.scale(t.frobenius_sq(gram), 1e-2), t.frobenius_sq(pooled)));
    return std::pair<Tape, Tape::NodeId>(std::move(t), loss);
  };

  auto [tape, loss] = eval();
  tape.backward(loss);
  const Matrix ga = tape.grad(0);
  const Matrix gb = tape.grad(1);
  const Matrix gv = tape.grad(2);

  const double eps = 1e-6;
  const auto fd_check = [&](Matrix& target, const Matrix& analytic) {
    for (std::size_t e = 0; e < target.size(); ++e) {
      const double orig = target.data()[e];
      target.data()[e] = orig + eps;
      auto [t1, l1] = eval();
      const double up = t1.value(l1)(0, 0);
      target.data()[e] = orig - eps;
      auto [t2, l2] = eval();
      const double down = t2.value(l2)(0, 0);
      target.data()[e] = orig;
      const double fd = (up - down) / (2 * eps);
      CHECK(std::abs(analytic.data()[e] - fd) / std::max(1.0, std::abs(fd)) < 1e-6);
    }
  };
  fd_check(a, ga);
  fd_check(b, gb);
  fd_check(v, gv);
}

TEST_CASE("attended cosine and weighted slices match finite differences") {
  Rng rng(37);
  const Matrix q = random_matrix(1, 6, rng);
  Matrix attn = random_matrix(6, 3, rng);
  Matrix keys = random_matrix(6, 3, rng);
  Matrix w = random_matrix(3 * 2, 4, rng);  // 3 components, l_w = 2

  const auto eval = [&]() {
    Tape t;
    const auto an = t.leaf(attn, true);
    const auto kn = t.leaf(keys, true);
    const auto wn = t.leaf(w, true);
    const auto alpha = t.attended_cosine(q, an, kn, true);
    const auto lam = t.weighted_sum_slices(alpha, wn, 2);
    const auto loss = t.frobenius_sq(t.mean_rows(lam, 0, 1));
    return std::pair<Tape, Tape::NodeId>(std::move(t), loss);
  };

  auto [tape, loss] = eval();
  tape.backward(loss);
  const double eps = 1e-6;
  Matrix* targets[] = {&attn, &keys, &w};
  for (int ti = 0; ti < 3; ++ti) {
    auto [t0, l0] = eval();
    const Matrix analytic = [&] {
      Tape t;
      const auto an = t.leaf(attn, true);
      const auto kn = t.leaf(keys, true);
      const auto wn = t.leaf(w, true);
      const auto alpha = t.attended_cosine(q, an, kn, true);
      const auto lam = t.weighted_sum_slices(alpha, wn, 2);
      t.backward(t.frobenius_sq(t.mean_rows(lam, 0, 1)));
      return t.grad(ti);
    }();
    Matrix& target = *targets[ti];
    for (std::size_t e = 0; e < target.size(); ++e) {
      const double orig = target.data()[e];
      target.data()[e] = orig + eps;
      auto [t1, l1] = eval();
      target.data()[e] = orig - eps;
      auto [t2, l2] = eval();
      target.data()[e] = orig;
      const double fd = (t1.value(l1)(0, 0) - t2.value(l2)(0, 0)) / (2 * eps);
      CHECK(std::abs(analytic.data()[e] - fd) / std::max(1.0, std::abs(fd)) < 1e-6);
    }
  }
}

TEST_CASE("uniform logits give ln C cross-entropy") {
  Tape tape;
  const auto logits = tape.leaf(Matrix(5, 4), true);
  const auto loss = tape.cross_entropy_mean(logits, {0, 1, 2, 3, 0});
  CHECK(tape.value(loss)(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  Tape tape;
  const auto logits = tape.leaf(Matrix(2, 3), true);
  CHECK_THROWS_AS(tape.cross_entropy_mean(logits, {0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(tape.cross_entropy_mean(logits, {-1, 0}), std::invalid_argument);
}
