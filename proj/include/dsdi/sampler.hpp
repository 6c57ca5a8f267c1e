#pragma once

#include <functional>

#include "dsdi/diffusion.hpp"
#include "dsdi/rng.hpp"
#include "dsdi/tensor.hpp"

namespace dsdi {

/// h(s) = 1 − n0·exp(−λ·s): weight of the AR estimate at step s.
struct WeightSchedule {
  double n0 = 1.0;
  double lambda = 0.1;

  /// Throws std::invalid_argument unless n0 ∈ [0, 1] and λ > 0.
  void validate() const;
};

double weight(double s, const WeightSchedule& w);

/// √ᾱ_s·x0 + √(1−ᾱ_s)·noise for s ∈ [0, T]; s = 0 returns x0 exactly.
/// Only mask = 1 cells are meaningful downstream; `mask` is shape-checked.
Matrix noised_known(const Matrix& x0, const Matrix& mask, int s, const Matrix& noise,
                    const NoiseSchedule& sched);

/// reverse_mean + √β̃_t·z. At t = 1 the draw must be all zero.
Matrix reverse_step(const Matrix& x_t, int t, const Matrix& eps_pred, const Matrix& z,
                    const NoiseSchedule& sched);

/// mask⊙known + (1−mask)⊙(h·z_ar + (1−h)·x_tilde).
Matrix inject(const Matrix& x_tilde, const Matrix& z_ar, const Matrix& known, const Matrix& mask,
              double h);

/// ε_θ(x_t, t, x_known, mask).
using NoisePredictor =
    std::function<Matrix(const Matrix& x_t, int t, const Matrix& x_known, const Matrix& mask)>;

enum class PriorKind {
  diffused_known,   // forward-diffuse the zero-filled known window to step T
  standard_normal,  // plain N(0, I)
};

struct SamplerConfig {
  WeightSchedule weights;
  /// Feed known values and mask to ε_θ and pin known cells inside the loop.
  /// When off the denoiser sees zeros and known cells are restored only at the end.
  bool use_condition = true;
  /// Blend z_ar into missing cells with weight h(t−1); off forces h = 0.
  bool use_injection = true;
  /// Selects the S4 or the local-conv denoiser. Consumed when the model is
  /// built; the loop itself does not branch on it.
  bool use_s4_unet = true;
  PriorKind prior = PriorKind::diffused_known;
  /// Forward-noise z_ar to level t−1 before mixing.
  bool noise_ar = false;
};

/// One imputation draw. Random draws, in order: the L×D prior noise, then
/// for t = T..1 the reverse draw z (only when t > 1), the known-value noise
/// (only when use_condition and t−1 ≥ 1) and the z_ar noise (only when
/// noise_ar, use_injection and t−1 ≥ 1).
///
/// An all-missing mask is accepted (the output is then generated entirely).
/// Throws std::invalid_argument on shape mismatch.
Matrix impute(const Matrix& x_known, const Matrix& mask, const Matrix& z_ar,
              const NoisePredictor& eps_theta, const NoiseSchedule& sched,
              const SamplerConfig& cfg, Rng& rng);

/// Mean of `samples` independent draws; draw k uses rng.split(k).
Matrix impute_mean(const Matrix& x_known, const Matrix& mask, const Matrix& z_ar,
                   const NoisePredictor& eps_theta, const NoiseSchedule& sched,
                   const SamplerConfig& cfg, const Rng& rng, int samples);

}  // namespace dsdi
