#include "datacl/adapter.hpp"

#include <stdexcept>
#include <string>

namespace datacl {

namespace {

void check_lambda(const DecomposedAdapterLayer& layer, const Matrix& lam, const char* name) {
  if (lam.rows() != 1 || lam.cols() != layer.d_out()) {
    throw std::invalid_argument(std::string(name) + ": expected 1x" +
                                std::to_string(layer.d_out()) + " scale vector, got " +
                                std::to_string(lam.rows()) + "x" + std::to_string(lam.cols()));
  }
}

}  // namespace

DecomposedAdapterLayer make_adapter_layer(Matrix w0, Matrix b0, std::size_t d_l, std::size_t d_h,
                                          Rng& rng) {
  const std::size_t d_out = w0.rows();
  const std::size_t d_in = w0.cols();
  const std::size_t cap = std::min(d_in, d_out);
  if (d_l < 1 || d_l >= d_h || d_h > cap) {
    throw std::invalid_argument("adapter ranks must satisfy 1 <= d_l < d_h <= " +
                                std::to_string(cap) + " (got d_l=" + std::to_string(d_l) +
                                ", d_h=" + std::to_string(d_h) + ")");
  }
  if (!b0.empty() && (b0.rows() != 1 || b0.cols() != d_out)) {
    throw std::invalid_argument("adapter bias must be 1 x d_out");
  }
  DecomposedAdapterLayer layer;
  layer.W0 = std::move(w0);
  layer.b0 = std::move(b0);
  layer.B1 = Matrix(d_l, d_in);
  layer.B2 = Matrix(d_h, d_in);
  fill_normal(layer.B1, rng, 0.0, kDownProjInitStd);
  fill_normal(layer.B2, rng, 0.0, kDownProjInitStd);
  layer.A1 = Matrix(d_out, d_l);
  layer.A2 = Matrix(d_out, d_h);
  return layer;
}

Matrix base_output(const DecomposedAdapterLayer& layer, const Matrix& x) {
  Matrix out = matmul_nt(x, layer.W0);
  if (!layer.b0.empty()) {
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += layer.b0(0, j);
  }
  return out;
}

BranchFeatures branch_features(const DecomposedAdapterLayer& layer, const Matrix& x) {
  if (x.cols() != layer.d_in()) {
    throw std::invalid_argument("branch_features: input has " + std::to_string(x.cols()) +
                                " features, layer expects " + std::to_string(layer.d_in()));
  }
  BranchFeatures f;
  f.high = matmul_nt(matmul_nt(x, layer.B2), layer.A2);
  f.low = matmul_nt(matmul_nt(x, layer.B1), layer.A1);
  return f;
}

Matrix fuse(const DecomposedAdapterLayer& layer, const Matrix& x, const Matrix& lambda_h,
            const Matrix& lambda_l) {
  check_lambda(layer, lambda_h, "fuse: lambda_h");
  check_lambda(layer, lambda_l, "fuse: lambda_l");
  Matrix out = base_output(layer, x);
  const BranchFeatures f = branch_features(layer, x);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) {
      out(i, j) += lambda_h(0, j) * f.high(i, j) + lambda_l(0, j) * f.low(i, j);
    }
  }
  return out;
}

MergedLayer reparameterize(const DecomposedAdapterLayer& layer, const Matrix& lambda_h,
                           const Matrix& lambda_l) {
  check_lambda(layer, lambda_h, "reparameterize: lambda_h");
  check_lambda(layer, lambda_l, "reparameterize: lambda_l");
  Matrix high = matmul(layer.A2, layer.B2);
  Matrix low = matmul(layer.A1, layer.B1);
  MergedLayer merged;
  merged.W = layer.W0;
  for (std::size_t i = 0; i < merged.W.rows(); ++i) {
    for (std::size_t j = 0; j < merged.W.cols(); ++j) {
      merged.W(i, j) += lambda_h(0, i) * high(i, j) + lambda_l(0, i) * low(i, j);
    }
  }
  merged.b = layer.b0;
  return merged;
}

Matrix merged_forward(const MergedLayer& layer, const Matrix& x) {
  Matrix out = matmul_nt(x, layer.W);
  if (!layer.b.empty()) {
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += layer.b(0, j);
  }
  return out;
}

}  // namespace datacl
