#pragma once

#include "sdematch/tensor.hpp"

#include <vector>

namespace sdematch {

// Observations x_{t_i} at strictly increasing times t_i in [0, horizon].
struct TimeSeries {
  std::vector<double> times;
  Matrix values;  // N x d_x
  double horizon = 1.0;

  Index size() const { return static_cast<Index>(times.size()); }
  Index dim() const { return values.cols(); }
  // Throws std::invalid_argument when times are unsorted, out of range, or do
  // not match the value rows.
  void validate() const;
};

}  // namespace sdematch
