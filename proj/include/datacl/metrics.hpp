#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace datacl {

// a(q, m): accuracy on task q's test split after finishing training on task
// m (0-based). Entries may sit on any consistent scale; run outputs use
// fractions internally and scale to 0-100 only when presented.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t n);

  std::size_t n() const { return n_; }
  void set(std::size_t q, std::size_t m, double value);
  double at(std::size_t q, std::size_t m) const;
  bool filled(std::size_t q, std::size_t m) const;

 private:
  std::size_t n_ = 0;
  std::vector<double> a_;
  std::vector<std::uint8_t> filled_;
};

// Mean of the last column: performance on every task after the final task.
double fp(const AccuracyMatrix& m);

// Mean of the diagonal: performance on each task right after learning it.
double ap(const AccuracyMatrix& m);

// ap - fp; negative values indicate backward transfer.
double forget(const AccuracyMatrix& m);

}  // namespace datacl
