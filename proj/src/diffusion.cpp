#include "dsdi/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dsdi {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw std::invalid_argument("NoiseSchedule: need at least one step");
  alphas_.reserve(betas_.size());
  alpha_bars_.reserve(betas_.size());
  tilde_betas_.reserve(betas_.size());
  double running = 1.0;
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("NoiseSchedule: beta outside (0,1)");
    const double prev = running;
    alphas_.push_back(1.0 - b);
    running *= 1.0 - b;
    alpha_bars_.push_back(running);
    tilde_betas_.push_back(b * (1.0 - prev) / (1.0 - running));
  }
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > steps()) {
    throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " +
                            std::to_string(steps()) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  return alpha_bars_.at(index(t));
}

NoiseSchedule build_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("build_linear_schedule: steps must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("build_linear_schedule: require 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  if (steps == 1) {
    betas[0] = beta_start;
  } else {
    const double span = beta_end - beta_start;
    for (int i = 0; i < steps; ++i) {
      betas[static_cast<std::size_t>(i)] = beta_start + span * i / (steps - 1);
    }
  }
  return NoiseSchedule(std::move(betas));
}

double default_beta_end(int steps) {
  if (steps < 1) throw std::invalid_argument("default_beta_end: steps must be >= 1");
  return std::clamp(10.0 / steps, kDefaultBetaStart, 0.5);
}

Matrix forward_step(const Matrix& x_prev, int t, const Matrix& noise, const NoiseSchedule& s) {
  require_same_shape(x_prev, noise, "forward_step");
  const double b = s.beta(t);
  const double keep = std::sqrt(1.0 - b);
  const double add = std::sqrt(b);
  Matrix out(x_prev.rows(), x_prev.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * x_prev[i] + add * noise[i];
  return out;
}

Matrix forward_sample(const Matrix& x0, int t, const Matrix& noise, const NoiseSchedule& s) {
  require_same_shape(x0, noise, "forward_sample");
  if (t == 0) return x0;
  const double ab = s.alpha_bar(t);
  const double keep = std::sqrt(ab);
  const double add = std::sqrt(1.0 - ab);
  Matrix out(x0.rows(), x0.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * x0[i] + add * noise[i];
  return out;
}

Matrix reverse_mean(const Matrix& x_t, int t, const Matrix& eps_pred, const NoiseSchedule& s) {
  require_same_shape(x_t, eps_pred, "reverse_mean");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
  const double eps_coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
  Matrix out(x_t.rows(), x_t.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = inv_sqrt_alpha * (x_t[i] - eps_coef * eps_pred[i]);
  }
  return out;
}

double noise_prediction_loss(const Matrix& eps_true, const Matrix& eps_pred) {
  require_same_shape(eps_true, eps_pred, "noise_prediction_loss");
  if (eps_true.empty()) throw std::invalid_argument("noise_prediction_loss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < eps_true.size(); ++i) {
    const double d = eps_true[i] - eps_pred[i];
    s += d * d;
  }
  return s / static_cast<double>(eps_true.size());
}

}  // namespace dsdi
