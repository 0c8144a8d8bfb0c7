#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "datacl/matrix.hpp"

namespace datacl {

// Bank of weight components with paired keys and attention vectors. Slices
// of W are stacked by component: rows [m*l_w, (m+1)*l_w) belong to
// component m. Frozen components never change after their task ends.
struct ComponentBank {
  Matrix W;  // (M * l_w) x d
  Matrix K;  // d_q x M, one key column per component
  Matrix A;  // d_q x M, one attention column per component
  std::vector<std::uint8_t> frozen;
  std::size_t l_w = 0;
  std::size_t d = 0;    // composed weight width (layer d_out)
  std::size_t d_q = 0;  // query dimension (layer d_in)

  std::size_t components() const { return frozen.size(); }
  std::size_t frozen_count() const;
};

ComponentBank make_bank(std::size_t l_w, std::size_t d, std::size_t d_q);

// Mean over the batch axis of a layer input. Gradients never flow through
// the query (stop-gradient); callers treat the result as a constant.
Matrix query(const Matrix& x_layer_input);

// alpha_m = cosine(q (*) A_m, K_m); with use_attention = false the plain
// query is compared against the keys.
Matrix attention_weights(const Matrix& q, const ComponentBank& bank, bool use_attention = true);

// lambda = sum_m alpha_m W_m, an l_w x d matrix.
Matrix compose_lambda(const Matrix& alpha, const ComponentBank& bank);

struct LambdaSplit {
  Matrix high;  // 1 x d
  Matrix low;   // 1 x d
};

// Top half of the rows averages into the high-rank scale, bottom half into
// the low-rank scale. l_w must be even (checked at configuration time too).
LambdaSplit split_lambda(const Matrix& lambda);

}  // namespace datacl
