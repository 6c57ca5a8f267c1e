#include "dsdi/sampler.hpp"

#include <cmath>
#include <stdexcept>

namespace dsdi {

void WeightSchedule::validate() const {
  if (!(n0 >= 0.0 && n0 <= 1.0)) throw std::invalid_argument("weight schedule: n0 must lie in [0, 1]");
  if (!(lambda > 0.0)) throw std::invalid_argument("weight schedule: lambda must be positive");
}

double weight(double s, const WeightSchedule& w) {
  if (s < 0.0) throw std::invalid_argument("weight: negative step");
  return 1.0 - w.n0 * std::exp(-w.lambda * s);
}

Matrix noised_known(const Matrix& x0, const Matrix& mask, int s, const Matrix& noise,
                    const NoiseSchedule& sched) {
  require_same_shape(x0, mask, "noised_known");
  if (s == 0) return x0;
  return forward_sample(x0, s, noise, sched);
}

Matrix reverse_step(const Matrix& x_t, int t, const Matrix& eps_pred, const Matrix& z,
                    const NoiseSchedule& sched) {
  require_same_shape(x_t, z, "reverse_step");
  Matrix out = reverse_mean(x_t, t, eps_pred, sched);
  if (t == 1) {
    for (double v : z.values()) {
      if (v != 0.0) throw std::invalid_argument("reverse_step: z must be zero at t = 1");
    }
    return out;
  }
  const double sigma = std::sqrt(sched.tilde_beta(t));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sigma * z[i];
  return out;
}

Matrix inject(const Matrix& x_tilde, const Matrix& z_ar, const Matrix& known, const Matrix& mask,
              double h) {
  require_same_shape(x_tilde, z_ar, "inject");
  require_same_shape(x_tilde, known, "inject");
  require_same_shape(x_tilde, mask, "inject");
  if (!(h >= 0.0 && h <= 1.0)) throw std::invalid_argument("inject: h must lie in [0, 1]");
  Matrix out(x_tilde.rows(), x_tilde.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = mask[i] * known[i] + (1.0 - mask[i]) * (h * z_ar[i] + (1.0 - h) * x_tilde[i]);
  }
  return out;
}

Matrix impute(const Matrix& x_known, const Matrix& mask, const Matrix& z_ar,
              const NoisePredictor& eps_theta, const NoiseSchedule& sched,
              const SamplerConfig& cfg, Rng& rng) {
  require_same_shape(x_known, mask, "impute");
  require_same_shape(x_known, z_ar, "impute");
  cfg.weights.validate();
  const std::size_t l = x_known.rows(), d = x_known.cols();
  const Matrix known = hadamard(x_known, mask);
  const Matrix zeros(l, d);
  const Matrix& cond_x = cfg.use_condition ? known : zeros;
  const Matrix& cond_m = cfg.use_condition ? mask : zeros;
  const int big_t = sched.steps();

  const Matrix prior_noise = rng.normal_matrix(l, d);
  Matrix x = cfg.prior == PriorKind::diffused_known ? forward_sample(known, big_t, prior_noise, sched)
                                                    : prior_noise;
  for (int t = big_t; t >= 1; --t) {
    const Matrix eps = eps_theta(x, t, cond_x, cond_m);
    const Matrix z = t > 1 ? rng.normal_matrix(l, d) : zeros;
    const Matrix x_tilde = reverse_step(x, t, eps, z, sched);
    const int s = t - 1;
    const double h = cfg.use_injection ? weight(s, cfg.weights) : 0.0;

    Matrix pinned = x_tilde;  // without conditioning, known cells follow the chain
    if (cfg.use_condition) {
      const Matrix noise = s >= 1 ? rng.normal_matrix(l, d) : zeros;
      pinned = noised_known(known, mask, s, noise, sched);
    }
    Matrix ar = z_ar;
    if (cfg.noise_ar && cfg.use_injection && s >= 1) ar = forward_sample(z_ar, s, rng.normal_matrix(l, d), sched);
    x = inject(x_tilde, ar, pinned, mask, h);
  }
  if (!cfg.use_condition) x = inject(x, x, known, mask, 0.0);
  return x;
}

Matrix impute_mean(const Matrix& x_known, const Matrix& mask, const Matrix& z_ar,
                   const NoisePredictor& eps_theta, const NoiseSchedule& sched,
                   const SamplerConfig& cfg, const Rng& rng, int samples) {
  if (samples < 1) throw std::invalid_argument("impute_mean: samples must be >= 1");
  Matrix acc(x_known.rows(), x_known.cols());
  for (int k = 0; k < samples; ++k) {
    Rng stream = rng.split(static_cast<std::uint64_t>(k));
    acc += impute(x_known, mask, z_ar, eps_theta, sched, cfg, stream);
  }
  return (1.0 / samples) * acc;
}

}  // namespace dsdi
