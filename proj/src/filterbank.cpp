#include "fdf/filterbank.hpp"

#include <string>

#include "fdf/random.hpp"

namespace fdf {

const std::array<std::pair<Eigen::Index, Eigen::Index>, kRingSize>& boundary_ring() {
  static const std::array<std::pair<Eigen::Index, Eigen::Index>, kRingSize> ring = {{
      {0, 0}, {0, 1}, {0, 2}, {0, 3}, {0, 4}, // top, left to right
      {1, 4},                                 // right edge
      {2, 4}, {2, 3}, {2, 2}, {2, 1}, {2, 0}, // bottom, right to left
      {1, 0},                                 // left edge
  }};
  return ring;
}

KernelBank make_gap_filters(const GapFilterSpec& spec) {
  if (spec.gap < 1 || spec.gap > 6)
    throw SpecError("gap filters: gap must lie in [1, 6], got " + std::to_string(spec.gap));
  const auto& ring = boundary_ring();
  KernelBank bank;
  bank.reserve(kRingSize);
  for (int p = 0; p < kRingSize; ++p) {
    Kernel k = Kernel::Zero(kKernelRows, kKernelCols);
    const auto [pr, pc] = ring[static_cast<std::size_t>(p)];
    const auto [nr, nc] = ring[static_cast<std::size_t>((p + spec.gap) % kRingSize)];
    k(pr, pc) = 1.0;
    k(nr, nc) = -1.0;
    bank.push_back(std::move(k));
  }
  return bank;
}

KernelBank make_layer_bank(int layer_index) {
  std::vector<int> gaps;
  switch (layer_index) {
  case 1: gaps = {1}; break;
  case 2: gaps = {2, 3}; break;
  case 3: gaps = {4, 5, 6}; break;
  default:
    throw SpecError("difference layer index must be 1, 2 or 3, got " + std::to_string(layer_index));
  }
  KernelBank bank;
  for (int gap : gaps) {
    KernelBank part = make_gap_filters({gap});
    bank.insert(bank.end(), part.begin(), part.end());
  }
  return bank;
}

KernelBank make_lbc_filters(const LbcFilterSpec& spec) {
  if (spec.count < 1) throw SpecError("LBC filters: count must be positive");
  if (!(spec.sparsity >= 0.0 && spec.sparsity <= 1.0))
    throw SpecError("LBC filters: sparsity must lie in [0, 1]");
  if (!(spec.bernoulli_p >= 0.0 && spec.bernoulli_p <= 1.0))
    throw SpecError("LBC filters: bernoulli_p must lie in [0, 1]");

  // One draw decides zero/nonzero, a second draw (nonzero cells only) the sign.
  // Kernels are filled in order, cells row-major within each kernel.
  CounterRng rng(spec.seed);
  KernelBank bank;
  bank.reserve(static_cast<std::size_t>(spec.count));
  for (int n = 0; n < spec.count; ++n) {
    Kernel k(kKernelRows, kKernelCols);
    for (Eigen::Index r = 0; r < kKernelRows; ++r)
      for (Eigen::Index c = 0; c < kKernelCols; ++c) {
        if (rng.uniform() < spec.sparsity)
          k(r, c) = 0.0;
        else
          k(r, c) = rng.uniform() < spec.bernoulli_p ? 1.0 : -1.0;
      }
    bank.push_back(std::move(k));
  }
  return bank;
}

KernelBank make_star_filters() {
  KernelBank bank;
  bank.reserve(kRingSize);
  for (const auto& [r, c] : boundary_ring()) {
    Kernel k = Kernel::Zero(kKernelRows, kKernelCols);
    k(kKernelRows / 2, kKernelCols / 2) = 1.0;
    k(r, c) = -1.0;
    bank.push_back(std::move(k));
  }
  return bank;
}

} // namespace fdf
