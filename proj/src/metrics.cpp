#include "datacl/metrics.hpp"

#include <stdexcept>
#include <string>

namespace datacl {

AccuracyMatrix::AccuracyMatrix(std::size_t n) : n_(n), a_(n * n, 0.0), filled_(n * n, 0) {}

void AccuracyMatrix::set(std::size_t q, std::size_t m, double value) {
  if (q >= n_ || m >= n_) throw std::out_of_range("AccuracyMatrix::set: index out of range");
  a_[q * n_ + m] = value;
  filled_[q * n_ + m] = 1;
}

double AccuracyMatrix::at(std::size_t q, std::size_t m) const {
  if (q >= n_ || m >= n_) throw std::out_of_range("AccuracyMatrix::at: index out of range");
  if (!filled_[q * n_ + m]) {
    throw std::invalid_argument("AccuracyMatrix: entry (" + std::to_string(q) + ", " +
                                std::to_string(m) + ") not populated");
  }
  return a_[q * n_ + m];
}

bool AccuracyMatrix::filled(std::size_t q, std::size_t m) const {
  if (q >= n_ || m >= n_) return false;
  return filled_[q * n_ + m] != 0;
}

double fp(const AccuracyMatrix& m) {
  if (m.n() == 0) throw std::invalid_argument("fp: empty matrix");
  double sum = 0.0;
  for (std::size_t q = 0; q < m.n(); ++q) sum += m.at(q, m.n() - 1);
  return sum / static_cast<double>(m.n());
}

double ap(const AccuracyMatrix& m) {
  if (m.n() == 0) throw std::invalid_argument("ap: empty matrix");
  double sum = 0.0;
  for (std::size_t j = 0; j < m.n(); ++j) sum += m.at(j, j);
  return sum / static_cast<double>(m.n());
}

double forget(const AccuracyMatrix& m) { return ap(m) - fp(m); }

}  // namespace datacl
