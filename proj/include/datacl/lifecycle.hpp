#pragma once

#include <cstddef>
#include <vector>

#include "datacl/matrix.hpp"
#include "datacl/rng.hpp"
#include "datacl/weighting.hpp"

namespace datacl {

// n x d matrix with orthonormal rows, built by modified Gram-Schmidt on
// seeded Gaussian draws. Requires n <= d.
Matrix orthogonal_init(std::size_t n, std::size_t d, Rng& rng);

// || B B^T - I ||_F^2
double ortho_loss(const Matrix& b);

// Marks every existing component frozen, then appends `per_task` new
// components: key and attention columns orthonormal among themselves and
// projected orthogonal to the frozen ones; W slices likewise, treated as
// flattened l_w*d vectors. When frozen vectors already span the space the
// new draw falls back to a unit-norm random vector.
void expand_for_task(ComponentBank& bank, std::size_t task_index, std::size_t per_task, Rng& rng);

struct RestorationPolicy {
  double p = 0.01;
  std::size_t interval = 200;
};

// One restoration-eligible parameter: elements of rows [row_begin, row_end)
// may be reset to the matching snapshot entry.
struct RestorableParam {
  Matrix* param = nullptr;
  Matrix snapshot;  // same shape as *param
  std::size_t row_begin = 0;
  std::size_t row_end = 0;
};

// Element-wise Bernoulli(p) reset toward the snapshot. Returns the number of
// restored elements. Callers invoke this only on steps that are multiples of
// policy.interval.
std::size_t apply_restoration(std::vector<RestorableParam>& params, const RestorationPolicy& policy,
                              Rng& rng);

}  // namespace datacl
