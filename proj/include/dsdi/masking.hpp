#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dsdi/rng.hpp"
#include "dsdi/tensor.hpp"

namespace dsdi {

// A mask is an L×D matrix of 0/1 doubles: 1 = observed, 0 = missing.

enum class MaskProtocol { point, block, hybrid };

MaskProtocol parse_mask_protocol(const std::string& name);
std::string to_string(MaskProtocol p);

struct BlockMaskOptions {
  double point_rate = 0.05;
  double failure_prob = 0.0015;  // per (time, channel) cell
  int min_run = 12;
  int max_run = 48;
};

/// Each cell missing independently with probability `rate` ∈ [0, 1).
/// All-missing draws are redrawn (up to 100 times, then std::runtime_error).
Matrix point_mask(std::size_t length, std::size_t channels, double rate, Rng& rng);

/// Point component at `point_rate` united with per-channel failure runs: a
/// cell starts a failure with probability `failure_prob`, hiding
/// S ~ U{min_run..max_run} steps of that channel (truncated at the window end).
struct FailureRun {
  std::size_t channel = 0;
  std::size_t start = 0;
  std::size_t drawn = 0;   // sampled S
  std::size_t length = 0;  // cells actually hidden: min(S, L − start)
};
/// `runs`, when given, receives the failure runs of the returned mask.
Matrix block_mask(std::size_t length, std::size_t channels, Rng& rng,
                  const BlockMaskOptions& opts = {}, std::vector<FailureRun>* runs = nullptr);

/// Fair coin per window: point at 10% or block with default options. The
/// coin is the first draw from `rng`; the delegate consumes the same stream.
Matrix hybrid_mask(std::size_t length, std::size_t channels, Rng& rng, bool* used_point = nullptr);

/// Draw for a protocol; `rate` is the point rate for point masks.
Matrix draw_mask(MaskProtocol protocol, std::size_t length, std::size_t channels, double rate,
                 Rng& rng);

/// x ⊙ m (zero fill at missing cells).
Matrix apply_mask(const Matrix& x, const Matrix& mask);

/// Cellwise AND of two masks.
Matrix mask_and(const Matrix& a, const Matrix& b);

double missing_fraction(const Matrix& mask);

/// Mask CSV: one row per time step, D comma-separated 0/1 values, no header.
/// Several windows are stored back-to-back (rows = windows × L).
void write_mask_csv(const std::filesystem::path& path, const std::vector<Matrix>& masks);
std::vector<Matrix> read_mask_csv(const std::filesystem::path& path, std::size_t length);

}  // namespace dsdi
