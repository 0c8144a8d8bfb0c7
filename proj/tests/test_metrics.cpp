#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "datacl/metrics.hpp"
#include "datacl/rng.hpp"

using namespace datacl;

namespace {

AccuracyMatrix constant_matrix(std::size_t n, double c) {
  AccuracyMatrix m(n);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t j = 0; j < n; ++j) m.set(q, j, c);
  return m;
}

}  // namespace

TEST_CASE("fp basics") {
  CHECK(fp(constant_matrix(4, 100.0)) == 100.0);
  CHECK(fp(constant_matrix(3, 42.5)) == 42.5);

  AccuracyMatrix m(2);
  m.set(0, 1, 80.0);
  m.set(1, 1, 60.0);
  CHECK(fp(m) == 70.0);
}

TEST_CASE("fp rejects a missing final column") {
  AccuracyMatrix m(2);
  m.set(0, 1, 80.0);
  CHECK_THROWS_AS(fp(m), std::invalid_argument);
}

TEST_CASE("ap basics") {
  AccuracyMatrix m(2);
  m.set(0, 0, 90.0);
  m.set(1, 1, 70.0);
  CHECK(ap(m) == 80.0);
  CHECK(ap(constant_matrix(3, 55.0)) == 55.0);

  AccuracyMatrix one(1);
  one.set(0, 0, 61.0);
  CHECK(ap(one) == 61.0);

  AccuracyMatrix missing(2);
  missing.set(0, 0, 90.0);
  CHECK_THROWS_AS(ap(missing), std::invalid_argument);
}

TEST_CASE("forget equals ap minus fp and reproduces reported aggregates") {
  // Aggregates of the SeqLoRA row: FP 74.9, AP 80.7 -> Forget 5.8. The (1,1)
  // entry sits on both the diagonal and the final column.
  AccuracyMatrix seq(2);
  seq.set(0, 0, 86.5);
  seq.set(1, 0, 74.9);
  seq.set(0, 1, 74.9);
  seq.set(1, 1, 74.9);
  CHECK(ap(seq) == doctest::Approx(80.7).epsilon(1e-14));
  CHECK(fp(seq) == doctest::Approx(74.9).epsilon(1e-14));
  CHECK(forget(seq) == ap(seq) - fp(seq));
  CHECK(std::abs(forget(seq) - 5.8) < 1e-12);

  // Backward-transfer aggregates: FP 81.8, AP 80.6 -> -1.2.
  AccuracyMatrix neg(2);
  neg.set(0, 0, 79.4);
  neg.set(1, 0, 81.8);
  neg.set(0, 1, 81.8);
  neg.set(1, 1, 81.8);
  CHECK(forget(neg) == ap(neg) - fp(neg));
  CHECK(std::abs(forget(neg) - (-1.2)) < 1e-12);

  CHECK(forget(constant_matrix(3, 64.0)) == 0.0);
}

TEST_CASE("fp and ap are invariant under consistent task relabeling") {
  Rng rng(3);
  const std::size_t n = 5;
  AccuracyMatrix m(n);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t j = 0; j < n; ++j) m.set(q, j, 100.0 * rng.uniform());

  // Relabeling the earlier tasks (the final training stage keeps its slot)
  // permutes rows and columns together; both aggregates are sums over all
  // tasks, so they cannot move.
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n - 1; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  AccuracyMatrix relabeled(n);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t j = 0; j < n; ++j) relabeled.set(q, j, m.at(perm[q], perm[j]));
  CHECK(fp(relabeled) == doctest::Approx(fp(m)).epsilon(1e-12));
  CHECK(ap(relabeled) == doctest::Approx(ap(m)).epsilon(1e-12));

  // fp is additionally invariant under any reordering of the scored tasks.
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  rng.shuffle(rows);
  AccuracyMatrix row_perm(n);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t j = 0; j < n; ++j) row_perm.set(q, j, m.at(rows[q], j));
  CHECK(fp(row_perm) == doctest::Approx(fp(m)).epsilon(1e-12));
}

TEST_CASE("raising a final-column entry raises fp and lowers forget") {
  Rng rng(4);
  const std::size_t n = 4;
  AccuracyMatrix m(n);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t j = 0; j < n; ++j) m.set(q, j, 50.0 + 40.0 * rng.uniform());
  const double fp0 = fp(m);
  const double fg0 = forget(m);
  for (std::size_t q = 0; q < n; ++q) {
    AccuracyMatrix bumped = m;
    bumped.set(q, n - 1, m.at(q, n - 1) + 5.0);
    CHECK(fp(bumped) >= fp0);
    CHECK(forget(bumped) <= fg0);
  }
}
