#include "dsdi/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dsdi/error.hpp"

namespace dsdi {

double mae(const Matrix& x_hat, const Matrix& x_true, const Matrix& eval_mask) {
  ErrorAccumulator acc(x_true.cols());
  acc.add(x_hat, x_true, eval_mask);
  return acc.mae();
}

double rmse(const Matrix& x_hat, const Matrix& x_true, const Matrix& eval_mask) {
  ErrorAccumulator acc(x_true.cols());
  acc.add(x_hat, x_true, eval_mask);
  return acc.rmse();
}

ErrorAccumulator::ErrorAccumulator(std::size_t channels)
    : abs_(channels, 0.0), sq_(channels, 0.0), n_(channels, 0.0) {}

void ErrorAccumulator::add(const Matrix& x_hat, const Matrix& x_true, const Matrix& eval_mask) {
  require_same_shape(x_hat, x_true, "metrics");
  require_same_shape(x_hat, eval_mask, "metrics");
  if (x_true.cols() != abs_.size()) throw std::invalid_argument("metrics: channel count changed");
  double window_abs = 0.0, window_sq = 0.0;
  std::size_t window_n = 0;
  for (std::size_t t = 0; t < x_true.rows(); ++t) {
    for (std::size_t c = 0; c < x_true.cols(); ++c) {
      if (eval_mask(t, c) == 0.0) continue;
      const double e = x_hat(t, c) - x_true(t, c);
      abs_[c] += std::abs(e);
      sq_[c] += e * e;
      n_[c] += 1.0;
      window_abs += std::abs(e);
      window_sq += e * e;
      ++window_n;
    }
  }
  abs_sum_ += window_abs;
  sq_sum_ += window_sq;
  count_ += window_n;
  if (window_n > 0) window_mae_.push_back(window_abs / static_cast<double>(window_n));
}

double ErrorAccumulator::mae() const {
  if (count_ == 0) throw std::invalid_argument("metrics: evaluation mask selects no cell");
  return abs_sum_ / static_cast<double>(count_);
}

double ErrorAccumulator::rmse() const {
  if (count_ == 0) throw std::invalid_argument("metrics: evaluation mask selects no cell");
  return std::sqrt(sq_sum_ / static_cast<double>(count_));
}

std::vector<double> ErrorAccumulator::channel_mae() const {
  std::vector<double> out(abs_.size(), NAN);
  for (std::size_t c = 0; c < out.size(); ++c)
    if (n_[c] > 0.0) out[c] = abs_[c] / n_[c];
  return out;
}

std::vector<double> ErrorAccumulator::channel_rmse() const {
  std::vector<double> out(sq_.size(), NAN);
  for (std::size_t c = 0; c < out.size(); ++c)
    if (n_[c] > 0.0) out[c] = std::sqrt(sq_[c] / n_[c]);
  return out;
}

double ErrorAccumulator::window_mae_std() const {
  if (window_mae_.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : window_mae_) mean += v;
  mean /= static_cast<double>(window_mae_.size());
  double var = 0.0;
  for (double v : window_mae_) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(window_mae_.size() - 1));
}

Baseline parse_baseline(const std::string& name) {
  if (name == "mean") return Baseline::mean;
  if (name == "locf") return Baseline::locf;
  if (name == "linear") return Baseline::linear;
  throw ConfigError("unknown baseline '" + name + "' (mean|locf|linear)");
}

std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::mean: return "mean";
    case Baseline::locf: return "locf";
    case Baseline::linear: return "linear";
  }
  return "?";
}

Matrix baseline_impute(const Matrix& x_known, const Matrix& mask, Baseline method,
                       const std::vector<double>& channel_means) {
  require_same_shape(x_known, mask, "baseline_impute");
  if (channel_means.size() != x_known.cols()) throw std::invalid_argument("baseline_impute: means size");
  const std::size_t l = x_known.rows();
  Matrix out = x_known;
  for (std::size_t c = 0; c < x_known.cols(); ++c) {
    std::vector<std::size_t> seen;
    for (std::size_t t = 0; t < l; ++t)
      if (mask(t, c) != 0.0) seen.push_back(t);
    for (std::size_t t = 0; t < l; ++t) {
      if (mask(t, c) != 0.0) continue;
      if (seen.empty() || method == Baseline::mean) {
        out(t, c) = channel_means[c];
        continue;
      }
      // nearest observed index at or before t, and after t
      const auto next = std::upper_bound(seen.begin(), seen.end(), t);
      const bool has_prev = next != seen.begin();
      const bool has_next = next != seen.end();
      if (method == Baseline::locf) {
        out(t, c) = has_prev ? x_known(*(next - 1), c) : channel_means[c];
      } else if (has_prev && has_next) {
        const std::size_t a = *(next - 1), b = *next;
        const double w = static_cast<double>(t - a) / static_cast<double>(b - a);
        out(t, c) = (1.0 - w) * x_known(a, c) + w * x_known(b, c);
      } else {
        out(t, c) = x_known(has_prev ? *(next - 1) : *next, c);
      }
    }
  }
  return out;
}

}  // namespace dsdi
