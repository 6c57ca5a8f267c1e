#pragma once

#include <string>
#include <vector>

#include "dsdi/tensor.hpp"

namespace dsdi {

/// Mean absolute / root mean squared error over cells where `eval_mask` is 1.
/// Throws std::invalid_argument when nothing is selected.
double mae(const Matrix& x_hat, const Matrix& x_true, const Matrix& eval_mask);
double rmse(const Matrix& x_hat, const Matrix& x_true, const Matrix& eval_mask);

/// Pooled error statistics over many windows, with a per-channel breakdown
/// and the spread of per-window MAE.
class ErrorAccumulator {
public:
  explicit ErrorAccumulator(std::size_t channels = 0);
  void add(const Matrix& x_hat, const Matrix& x_true, const Matrix& eval_mask);

  std::size_t cells() const noexcept { return count_; }
  double mae() const;
  double rmse() const;
  std::vector<double> channel_mae() const;
  std::vector<double> channel_rmse() const;
  /// Standard deviation of per-window MAE (windows with no evaluated cell skipped).
  double window_mae_std() const;

private:
  std::vector<double> abs_, sq_, n_;
  std::vector<double> window_mae_;
  double abs_sum_ = 0.0, sq_sum_ = 0.0;
  std::size_t count_ = 0;
};

enum class Baseline { mean, locf, linear };

Baseline parse_baseline(const std::string& name);
std::string to_string(Baseline b);

/// Classical fills for the cells where mask = 0:
///  mean   – the channel mean;
///  locf   – the last observed value (channel mean before the first one);
///  linear – interpolation between the nearest observed neighbours, with the
///           nearest observed value copied past either end.
/// A channel with no observation falls back to its mean. Observed cells keep
/// their values.
Matrix baseline_impute(const Matrix& x_known, const Matrix& mask, Baseline method,
                       const std::vector<double>& channel_means);

}  // namespace dsdi
