#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "fdf/tensor.hpp"

namespace fdf {

inline constexpr Eigen::Index kKernelRows = 3;
inline constexpr Eigen::Index kKernelCols = 5;
inline constexpr int kRingSize = 12;

using KernelBank = std::vector<Kernel>;

/// Boundary-gap difference filters on the 3x5 ring.
struct GapFilterSpec {
  int gap = 1;
};

/// Sparse random {-1, 0, +1} filters.
struct LbcFilterSpec {
  int count = 64;
  double sparsity = 0.5;    // fraction of zero cells
  double bernoulli_p = 0.5; // probability a nonzero cell is +1
  std::uint64_t seed = 0;
};

/// Boundary cells of the 3x5 kernel, clockwise from the top-left corner.
const std::array<std::pair<Eigen::Index, Eigen::Index>, kRingSize>& boundary_ring();

/// Twelve kernels: +1 at ring position p, -1 at ring position (p + gap) mod 12.
KernelBank make_gap_filters(const GapFilterSpec& spec);

/// Fixed bank for difference layers 1..3 (gaps {1}, {2,3}, {4,5,6}).
KernelBank make_layer_bank(int layer_index);

KernelBank make_lbc_filters(const LbcFilterSpec& spec);

/// Centre-versus-ring kernels: +1 at the centre, -1 at one boundary cell.
KernelBank make_star_filters();

} // namespace fdf
