#pragma once

// Blocked complementary parameter vector theta = (theta_e, theta_a). The
// experimental blocks always come first. Each block carries a diagonal norm
// weight so that ||theta||_Theta^2 = sum_k sum_i w_{k,i} (theta_k^i)^2.

#include <limits>
#include <string>
#include <vector>

#include "hdsa/grid_fem.hpp"

namespace hdsa {

enum class BlockKind { kExperimental, kAuxiliary };

/// Where a single parameter lives; fields that do not apply are left unset.
struct EntryInfo {
  static constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();
  int sensor = -1;
  int time_index = -1;
  double time = kUnset;
  double x = kUnset;
  double y = kUnset;
  int well = -1;
  int local = -1;
  int boundary_node = -1;
};

struct ParamBlock {
  std::string name;
  BlockKind kind = BlockKind::kAuxiliary;
  int offset = 0;
  int size = 0;
  double scale = 1.0;    // a_k in d = d_nominal (1 + a_k theta)
  Vector norm_weights;   // positive, length size
  std::vector<EntryInfo> entries;
  std::string norm_label;
};

/// Mean-square weights 1 / (n_s n_t) for a spatiotemporal data block.
Vector spatiotemporal_weights(int n_space, int n_time);
/// Weights 1 / n_s for a spatial-only block.
Vector spatial_weights(int n_space);

class ComplementaryParams {
 public:
  /// Appends a block. Offsets are assigned here; experimental blocks may not
  /// follow an auxiliary block and empty blocks are rejected.
  void add_block(ParamBlock block);

  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  int size() const { return size_; }
  int num_experimental() const;
  const ParamBlock& block(int k) const { return blocks_.at(static_cast<std::size_t>(k)); }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  int find(const std::string& name) const;

  Vector zero() const { return Vector::Zero(size_); }
  /// Block-k coordinates of theta.
  Vector restrict_to(const Vector& theta, int k) const;
  /// T_k: embeds block-k coordinates into the full space, zeros elsewhere.
  Vector extend(const Vector& block_coords, int k) const;
  double norm(const Vector& theta) const;
  double block_norm(const Vector& block_coords, int k) const;
  /// Full diagonal weight vector.
  Vector weights() const;

 private:
  std::vector<ParamBlock> blocks_;
  int size_ = 0;
};

}  // namespace hdsa
