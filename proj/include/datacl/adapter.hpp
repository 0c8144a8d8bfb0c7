#pragma once

#include <cstddef>

#include "datacl/matrix.hpp"
#include "datacl/rng.hpp"

namespace datacl {

// A linear layer with a frozen base weight and two bottleneck branches of
// different rank. Inputs are batches with one sample per row, so the branch
// products run transposed relative to the column-vector notation:
// f_h = (x B2^T) A2^T.
struct DecomposedAdapterLayer {
  Matrix W0;  // d_out x d_in, frozen
  Matrix b0;  // 1 x d_out, frozen; may be empty
  Matrix B1;  // d_l x d_in, low-rank down
  Matrix A1;  // d_out x d_l, low-rank up
  Matrix B2;  // d_h x d_in, high-rank down
  Matrix A2;  // d_out x d_h, high-rank up

  std::size_t d_in() const { return W0.cols(); }
  std::size_t d_out() const { return W0.rows(); }
  std::size_t d_l() const { return B1.rows(); }
  std::size_t d_h() const { return B2.rows(); }
};

inline constexpr double kDownProjInitStd = 0.02;

// Validates 1 <= d_l < d_h <= min(d_in, d_out), draws the down-projections
// from N(0, 0.02^2) and zeroes the up-projections so the fresh layer
// reproduces the base output for any scale weights.
DecomposedAdapterLayer make_adapter_layer(Matrix w0, Matrix b0, std::size_t d_l, std::size_t d_h,
                                          Rng& rng);

struct BranchFeatures {
  Matrix high;  // rows x d_out
  Matrix low;   // rows x d_out
};

Matrix base_output(const DecomposedAdapterLayer& layer, const Matrix& x);
BranchFeatures branch_features(const DecomposedAdapterLayer& layer, const Matrix& x);

// f_x = f_o + lambda_h (*) f_h + lambda_l (*) f_l, with 1 x d_out scale
// vectors applied element-wise to every batch row.
Matrix fuse(const DecomposedAdapterLayer& layer, const Matrix& x, const Matrix& lambda_h,
            const Matrix& lambda_l);

// Branches folded into a single weight for fixed scale vectors:
// W' = W0 + diag(lambda_h) A2 B2 + diag(lambda_l) A1 B1.
struct MergedLayer {
  Matrix W;  // d_out x d_in
  Matrix b;  // 1 x d_out; may be empty
};

MergedLayer reparameterize(const DecomposedAdapterLayer& layer, const Matrix& lambda_h,
                           const Matrix& lambda_l);

Matrix merged_forward(const MergedLayer& layer, const Matrix& x);

}  // namespace datacl
