#include "hdsa/complementary_params.hpp"

#include <cmath>

#include "hdsa/errors.hpp"

namespace hdsa {

Vector spatiotemporal_weights(int n_space, int n_time) {
  return Vector::Constant(n_space * n_time, 1.0 / (static_cast<double>(n_space) * n_time));
}

Vector spatial_weights(int n_space) { return Vector::Constant(n_space, 1.0 / n_space); }

void ComplementaryParams::add_block(ParamBlock block) {
  if (block.size <= 0) {
    throw ConfigError("parameter block '" + block.name + "' is empty; blocks need n_k > 0");
  }
  if (block.norm_weights.size() != block.size || (block.norm_weights.array() <= 0.0).any()) {
    throw ConfigError("parameter block '" + block.name + "' needs " + std::to_string(block.size) +
                      " positive norm weights");
  }
  if (block.kind == BlockKind::kExperimental && !blocks_.empty() &&
      blocks_.back().kind == BlockKind::kAuxiliary) {
    throw ConfigError("experimental block '" + block.name + "' must precede the auxiliary blocks");
  }
  if (find(block.name) >= 0) throw ConfigError("duplicate parameter block '" + block.name + "'");
  if (block.entries.empty()) block.entries.resize(static_cast<std::size_t>(block.size));
  block.offset = size_;
  size_ += block.size;
  blocks_.push_back(std::move(block));
}

int ComplementaryParams::num_experimental() const {
  int n = 0;
  for (const auto& b : blocks_) n += b.kind == BlockKind::kExperimental;
  return n;
}

int ComplementaryParams::find(const std::string& name) const {
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    if (blocks_[k].name == name) return static_cast<int>(k);
  }
  return -1;
}

Vector ComplementaryParams::restrict_to(const Vector& theta, int k) const {
  const auto& b = block(k);
  return theta.segment(b.offset, b.size);
}

Vector ComplementaryParams::extend(const Vector& block_coords, int k) const {
  const auto& b = block(k);
  if (block_coords.size() != b.size) throw DomainError("block '" + b.name + "' coordinates have the wrong size");
  Vector theta = Vector::Zero(size_);
  theta.segment(b.offset, b.size) = block_coords;
  return theta;
}

double ComplementaryParams::norm(const Vector& theta) const {
  if (theta.size() != size_) throw DomainError("theta has the wrong size");
  double s = 0.0;
  for (const auto& b : blocks_) {
    s += (b.norm_weights.array() * theta.segment(b.offset, b.size).array().square()).sum();
  }
  return std::sqrt(s);
}

double ComplementaryParams::block_norm(const Vector& block_coords, int k) const {
  const auto& b = block(k);
  return std::sqrt((b.norm_weights.array() * block_coords.array().square()).sum());
}

Vector ComplementaryParams::weights() const {
  Vector w(size_);
  for (const auto& b : blocks_) w.segment(b.offset, b.size) = b.norm_weights;
  return w;
}

}  // namespace hdsa
