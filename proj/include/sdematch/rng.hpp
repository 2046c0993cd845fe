#pragma once

// Counter-based random streams. A stream is identified by (seed, stream id);
// draw k of a stream depends only on that pair and k, so per-path streams give
// results that do not depend on how many paths are simulated together.

#include "sdematch/tensor.hpp"

#include <cstdint>

namespace sdematch {

class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  std::uint64_t operator()() { return next_u64(); }
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  // Uniform integer in [0, n).
  Index index(Index n);
  Matrix normal_matrix(Index rows, Index cols);

  // Independent child stream.
  Rng split(std::uint64_t stream) const;

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sdematch
