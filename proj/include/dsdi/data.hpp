#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dsdi/rng.hpp"
#include "dsdi/tensor.hpp"

namespace dsdi {

/// Equal-shape L×D windows cut from one chronological series.
struct Dataset {
  std::vector<Matrix> windows;        // natively missing cells hold 0
  std::vector<Matrix> native_mask;    // 1 = present in the source
  std::vector<std::string> channel_names;

  std::size_t size() const noexcept { return windows.size(); }
  std::size_t length() const noexcept { return windows.empty() ? 0 : windows.front().rows(); }
  std::size_t features() const noexcept { return windows.empty() ? 0 : windows.front().cols(); }
  /// Windows [begin, end) as a new dataset.
  Dataset slice(std::size_t begin, std::size_t end) const;
};

/// CSV with a header row of channel names and one row per time step; an
/// empty cell is natively missing. Rows are cut into consecutive
/// non-overlapping windows of `length`; a trailing partial window is dropped.
/// Throws DataError on ragged rows, non-numeric cells or fewer than `length` rows.
Dataset load_csv(const std::filesystem::path& path, std::size_t length);

/// Writes windows back to back in the load_csv format (missing → empty cell).
void write_csv(const std::filesystem::path& path, const Dataset& ds);
void write_csv(const std::filesystem::path& path, const std::vector<Matrix>& windows,
               const std::vector<std::string>& channel_names);

struct Split {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Contiguous chronological partition: floor(n·train_frac) train windows,
/// floor(n·val_frac) validation windows, the remainder test. Throws
/// std::invalid_argument when any partition would be empty.
Split chrono_split(const Dataset& ds, double train_frac, double val_frac);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Per-channel mean and (population) standard deviation over natively
/// present cells. Throws DataError for a constant or empty channel.
ChannelStats compute_stats(const Dataset& train);

Matrix normalize(const Matrix& window, const ChannelStats& stats);
Matrix denormalize(const Matrix& window, const ChannelStats& stats);
/// Z-scores every window; natively missing cells stay 0.
Dataset normalize(const Dataset& ds, const ChannelStats& stats);

struct SyntheticOptions {
  double ar_coef = 0.7;
  double innovation_std = 0.1;
  double mixing = 1.0;   // off-diagonal strength of the channel mixing matrix
  int min_period = 8;    // integer periods, in steps
  int max_period = 32;
};

/// Optional view of the generator's pre-mixing components (T×D, T = n·L).
struct SyntheticParts {
  Matrix periodic;
  Matrix noise;
  Matrix mixing;  // D×D
};

/// Desk-scale stand-in for a sensor dataset: per-channel sinusoids with
/// random integer period, phase and amplitude plus AR(1) noise, then mixed
/// across channels by I + mixing·G (G off-diagonal Gaussian, variance 1/D).
Dataset make_synthetic(std::size_t n_windows, std::size_t length, std::size_t channels, Rng& rng,
                       const SyntheticOptions& opts = {}, SyntheticParts* parts = nullptr);

}  // namespace dsdi
