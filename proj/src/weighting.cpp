#include "datacl/weighting.hpp"

#include <stdexcept>
#include <string>

namespace datacl {

std::size_t ComponentBank::frozen_count() const {
  std::size_t n = 0;
  for (std::uint8_t f : frozen) n += f ? 1 : 0;
  return n;
}

ComponentBank make_bank(std::size_t l_w, std::size_t d, std::size_t d_q) {
  if (l_w == 0 || l_w % 2 != 0) {
    throw std::invalid_argument("component bank requires even weight length, got l_w=" +
                                std::to_string(l_w));
  }
  ComponentBank bank;
  bank.l_w = l_w;
  bank.d = d;
  bank.d_q = d_q;
  bank.W = Matrix(0, d);
  bank.K = Matrix(d_q, 0);
  bank.A = Matrix(d_q, 0);
  return bank;
}

Matrix query(const Matrix& x_layer_input) {
  if (x_layer_input.rows() == 0) {
    throw std::invalid_argument("query: empty input");
  }
  Matrix q(1, x_layer_input.cols());
  const double inv = 1.0 / static_cast<double>(x_layer_input.rows());
  for (std::size_t i = 0; i < x_layer_input.rows(); ++i)
    for (std::size_t j = 0; j < x_layer_input.cols(); ++j) q(0, j) += x_layer_input(i, j) * inv;
  return q;
}

Matrix attention_weights(const Matrix& q, const ComponentBank& bank, bool use_attention) {
  if (q.rows() != 1 || q.cols() != bank.d_q) {
    throw std::invalid_argument("attention_weights: query must be 1x" + std::to_string(bank.d_q));
  }
  const std::size_t m_count = bank.components();
  Matrix alpha(1, m_count);
  std::vector<double> attended(bank.d_q);
  std::vector<double> key(bank.d_q);
  for (std::size_t m = 0; m < m_count; ++m) {
    for (std::size_t i = 0; i < bank.d_q; ++i) {
      attended[i] = use_attention ? q(0, i) * bank.A(i, m) : q(0, i);
      key[i] = bank.K(i, m);
    }
    alpha(0, m) = cosine_sim(std::span<const double>(attended), std::span<const double>(key));
  }
  return alpha;
}

Matrix compose_lambda(const Matrix& alpha, const ComponentBank& bank) {
  if (alpha.rows() != 1 || alpha.cols() != bank.components()) {
    throw std::invalid_argument("compose_lambda: alpha length " + std::to_string(alpha.size()) +
                                " does not match component count " +
                                std::to_string(bank.components()));
  }
  Matrix lambda(bank.l_w, bank.d);
  for (std::size_t m = 0; m < bank.components(); ++m) {
    const double a = alpha(0, m);
    if (a == 0.0) continue;
    for (std::size_t r = 0; r < bank.l_w; ++r) {
      const double* src = bank.W.data() + (m * bank.l_w + r) * bank.d;
      double* dst = lambda.data() + r * bank.d;
      for (std::size_t j = 0; j < bank.d; ++j) dst[j] += a * src[j];
    }
  }
  return lambda;
}

LambdaSplit split_lambda(const Matrix& lambda) {
  if (lambda.rows() == 0 || lambda.rows() % 2 != 0) {
    throw std::invalid_argument("split_lambda: weight length must be even, got " +
                                std::to_string(lambda.rows()));
  }
  const std::size_t half = lambda.rows() / 2;
  const double inv = 1.0 / static_cast<double>(half);
  LambdaSplit split;
  split.high = Matrix(1, lambda.cols());
  split.low = Matrix(1, lambda.cols());
  for (std::size_t r = 0; r < half; ++r)
    for (std::size_t j = 0; j < lambda.cols(); ++j) split.high(0, j) += lambda(r, j) * inv;
  for (std::size_t r = half; r < lambda.rows(); ++r)
    for (std::size_t j = 0; j < lambda.cols(); ++j) split.low(0, j) += lambda(r, j) * inv;
  return split;
}

}  // namespace datacl
