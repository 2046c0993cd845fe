#include "sdematch/checkpoint.hpp"

#include "sdematch/data.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace sdematch {

const Matrix* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return &m;
  }
  return nullptr;
}

Checkpoint make_checkpoint(nlohmann::ordered_json metadata,
                           const std::vector<const ParameterSet*>& sets) {
  Checkpoint c;
  c.metadata = std::move(metadata);
  for (const ParameterSet* s : sets) {
    for (std::size_t i = 0; i < s->size(); ++i) c.tensors.emplace_back(s->name(i), s->value(i));
  }
  return c;
}

void restore(const Checkpoint& ckpt, ParameterSet& set) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Matrix* m = ckpt.find(set.name(i));
    if (m == nullptr) throw std::invalid_argument("checkpoint has no tensor " + set.name(i));
    if (m->rows() != set.value(i).rows() || m->cols() != set.value(i).cols()) {
      throw std::invalid_argument("checkpoint tensor " + set.name(i) + " is " +
                                  std::to_string(m->rows()) + "x" + std::to_string(m->cols()) +
                                  ", model expects " + std::to_string(set.value(i).rows()) + "x" +
                                  std::to_string(set.value(i).cols()));
    }
    set.value(i) = *m;
  }
}

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  out << ckpt.metadata.dump() << '\n';
  for (const auto& [name, m] : ckpt.tensors) {
    out << name << ' ' << m.rows() << ' ' << m.cols();
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) out << ' ' << format_double(m(r, c));
    }
    out << '\n';
  }
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(ckpt, out);
  if (!out) throw std::runtime_error("failed writing " + path);
}

Checkpoint read_checkpoint(std::istream& in) {
  Checkpoint c;
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("checkpoint is empty");
  try {
    c.metadata = nlohmann::ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    Index rows = 0, cols = 0;
    if (!(ls >> name >> rows >> cols) || rows < 0 || cols < 0) {
      throw std::invalid_argument("malformed checkpoint line: " + line.substr(0, 40));
    }
    Matrix m(rows, cols);
    std::string tok;
    for (Index r = 0; r < rows; ++r) {
      for (Index k = 0; k < cols; ++k) {
        if (!(ls >> tok)) throw std::invalid_argument("checkpoint tensor " + name + " is truncated");
        const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), m(r, k));
        if (res.ec != std::errc()) throw std::invalid_argument("bad number in tensor " + name);
      }
    }
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  return c;
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace sdematch
