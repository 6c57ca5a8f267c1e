#pragma once

#include <vector>

#include "dsdi/tensor.hpp"

namespace dsdi {

/// Variance schedule of a T-step DDPM. Step-indexed vectors are 1-based via
/// the accessors: `beta(t)` for t in [1, T]; `alpha_bar(t)` for t in [0, T]
/// with alpha_bar(0) = 1 denoting clean data.
class NoiseSchedule {
public:
  /// Builds all derived sequences from `betas` (size T, each in (0,1)).
  explicit NoiseSchedule(std::vector<double> betas);

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  double beta(int t) const { return betas_.at(index(t)); }
  double alpha(int t) const { return alphas_.at(index(t)); }
  double alpha_bar(int t) const;
  /// Posterior variance β_t(1−ᾱ_{t−1})/(1−ᾱ_t); zero at t = 1.
  double tilde_beta(int t) const { return tilde_betas_.at(index(t)); }

  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alphas() const noexcept { return alphas_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }
  const std::vector<double>& tilde_betas() const noexcept { return tilde_betas_; }

private:
  std::size_t index(int t) const;

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> tilde_betas_;
};

/// Linear β ramp from beta_start to beta_end inclusive.
NoiseSchedule build_linear_schedule(int steps, double beta_start, double beta_end);

/// Default β_end for a T-step linear schedule: 0.1 at T = 100, scaled as
/// 10/T so the total injected noise (Σβ ≈ 5) stays comparable across T,
/// capped at 0.5.
double default_beta_end(int steps);
inline constexpr double kDefaultBetaStart = 1e-4;

/// x_t = √(1−β_t)·x_{t−1} + √β_t·noise, t in [1, T].
Matrix forward_step(const Matrix& x_prev, int t, const Matrix& noise, const NoiseSchedule& s);

/// x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·noise, t in [0, T].
Matrix forward_sample(const Matrix& x0, int t, const Matrix& noise, const NoiseSchedule& s);

/// Mean of the reverse transition: (x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t, t in [1, T].
Matrix reverse_mean(const Matrix& x_t, int t, const Matrix& eps_pred, const NoiseSchedule& s);

/// Mean squared error over all entries.
double noise_prediction_loss(const Matrix& eps_true, const Matrix& eps_pred);

}  // namespace dsdi
