#pragma once

// Text checkpoints: a JSON metadata line, then one line per tensor
//   <name> <rows> <cols> <v_0> ... <v_{rows*cols-1}>   (row-major)
// with shortest round-trip numbers, so save/load is bit-exact.

#include "sdematch/nn.hpp"

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace sdematch {

struct Checkpoint {
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix* find(const std::string& name) const;
};

Checkpoint make_checkpoint(nlohmann::ordered_json metadata,
                           const std::vector<const ParameterSet*>& sets);
// Copies every parameter of `set` from the checkpoint; throws
// std::invalid_argument on a missing name or a shape mismatch.
void restore(const Checkpoint& ckpt, ParameterSet& set);

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace sdematch
