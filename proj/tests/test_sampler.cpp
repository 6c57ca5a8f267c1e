#include "doctest.h"

#include <cmath>

#include "dsdi/masking.hpp"
#include "dsdi/sampler.hpp"

using namespace dsdi;

namespace {

Matrix zero_model(const Matrix& x, int, const Matrix&, const Matrix&) { return Matrix(x.rows(), x.cols()); }

// A cheap deterministic stand-in for ε_θ that depends on every argument.
Matrix toy_model(const Matrix& x, int t, const Matrix& known, const Matrix& mask) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.3 * x[i] + 0.01 * t * known[i] - 0.2 * mask[i] + 0.05 * std::sin(static_cast<double>(i));
  }
  return out;
}

// Plain conditional DDPM sampler with known-cell replacement.
Matrix plain_conditional(const Matrix& x0, const Matrix& m, const NoisePredictor& f, const NoiseSchedule& s,
                         Rng& rng) {
  const std::size_t l = x0.rows(), d = x0.cols();
  const Matrix known = hadamard(x0, m);
  Matrix x = forward_sample(known, s.steps(), rng.normal_matrix(l, d), s);
  for (int t = s.steps(); t >= 1; --t) {
    const Matrix eps = f(x, t, known, m);
    Matrix next = reverse_mean(x, t, eps, s);
    if (t > 1) {
      const Matrix z = rng.normal_matrix(l, d);
      for (std::size_t i = 0; i < next.size(); ++i) next[i] += std::sqrt(s.tilde_beta(t)) * z[i];
      const Matrix kn = forward_sample(known, t - 1, rng.normal_matrix(l, d), s);
      for (std::size_t i = 0; i < next.size(); ++i)
        if (m[i] == 1.0) next[i] = kn[i];
    } else {
      for (std::size_t i = 0; i < next.size(); ++i)
        if (m[i] == 1.0) next[i] = known[i];
    }
    x = next;
  }
  return x;
}

// Plain unconditional DDPM sampler; the denoiser never sees the known values.
Matrix plain_unconditional(const Matrix& x0, const Matrix& m, const NoisePredictor& f,
                           const NoiseSchedule& s, Rng& rng) {
  const std::size_t l = x0.rows(), d = x0.cols();
  const Matrix zeros(l, d);
  Matrix x = forward_sample(hadamard(x0, m), s.steps(), rng.normal_matrix(l, d), s);
  for (int t = s.steps(); t >= 1; --t) {
    const Matrix eps = f(x, t, zeros, zeros);
    Matrix next = reverse_mean(x, t, eps, s);
    if (t > 1) {
      const Matrix z = rng.normal_matrix(l, d);
      for (std::size_t i = 0; i < next.size(); ++i) next[i] += std::sqrt(s.tilde_beta(t)) * z[i];
    }
    x = next;
  }
  for (std::size_t i = 0; i < x.size(); ++i)
    if (m[i] == 1.0) x[i] = x0[i];
  return x;
}

}  // namespace

TEST_CASE("weight schedule") {
  CHECK(weight(0, {1.0, 0.3}) == 0.0);
  CHECK(weight(0, {0.4, 0.3}) == 1.0 - 0.4);
  for (double s : {0.0, 3.0, 50.0}) CHECK(weight(s, {0.0, 0.2}) == 1.0);
  CHECK(weight(20, {1.0, 0.05}) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-15));
  CHECK(weight(20, {1.0, 0.05}) == doctest::Approx(0.63212).epsilon(1e-5));
  CHECK(weight(99, {1.0, 0.1}) >= 0.9999);
  for (double lambda : {0.01, 0.05, 0.1, 0.5}) {
    for (double n0 : {0.2, 1.0}) {
      const WeightSchedule w{n0, lambda};
      // strictly increasing until the exponential drops below double resolution
      for (int s = 0; lambda * s < 30.0; ++s) {
        const double h = weight(s, w);
        CHECK(h >= 1.0 - n0);
        CHECK(h < 1.0);
        CHECK(weight(s + 1, w) > h);
      }
    }
  }
  CHECK_THROWS_AS(weight(-1, {}), std::invalid_argument);
  CHECK_THROWS_AS((WeightSchedule{1.5, 0.1}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((WeightSchedule{1.0, 0.0}.validate()), std::invalid_argument);
}

TEST_CASE("noised_known") {
  const NoiseSchedule s = build_linear_schedule(10, 1e-3, 0.2);
  Rng rng(1);
  const Matrix x0 = rng.normal_matrix(5, 2), m(5, 2, 1.0), n = rng.normal_matrix(5, 2);
  CHECK(noised_known(x0, m, 0, n, s) == x0);
  CHECK(max_abs_diff(noised_known(x0, m, 4, Matrix(5, 2), s), std::sqrt(s.alpha_bar(4)) * x0) < 1e-15);
  CHECK(noised_known(x0, m, 6, n, s) == forward_sample(x0, 6, n, s));
  CHECK_THROWS_AS(noised_known(x0, m, 11, n, s), std::out_of_range);
  CHECK_THROWS_AS(noised_known(x0, Matrix(2, 5), 1, n, s), std::invalid_argument);
}

TEST_CASE("reverse_step") {
  const NoiseSchedule one({0.3});
  Rng rng(2);
  const Matrix x0 = rng.normal_matrix(4, 3), n = rng.normal_matrix(4, 3), zero(4, 3);
  const Matrix x1 = forward_sample(x0, 1, n, one);
  CHECK(max_abs_diff(reverse_step(x1, 1, n, zero, one), x0) < 1e-12);
  CHECK_THROWS_AS(reverse_step(x1, 1, n, n, one), std::invalid_argument);

  const NoiseSchedule s = build_linear_schedule(5, 1e-2, 0.3);
  const Matrix xt = rng.normal_matrix(4, 3), eps = rng.normal_matrix(4, 3), z = rng.normal_matrix(4, 3);
  CHECK(reverse_step(xt, 3, eps, zero, s) == reverse_mean(xt, 3, eps, s));
  const Matrix noisy = reverse_step(xt, 3, eps, z, s);
  CHECK(max_abs_diff(noisy, reverse_mean(xt, 3, eps, s) + std::sqrt(s.tilde_beta(3)) * z) < 1e-15);
}

TEST_CASE("inject") {
  Rng rng(3);
  const Matrix xt = rng.normal_matrix(3, 2), zar = rng.normal_matrix(3, 2), kn = rng.normal_matrix(3, 2);
  for (double h : {0.0, 0.4, 1.0}) CHECK(inject(xt, zar, kn, Matrix(3, 2, 1.0), h) == kn);
  CHECK(inject(xt, zar, kn, Matrix(3, 2), 1.0) == zar);
  CHECK(inject(Matrix(3, 2), Matrix(3, 2, 4.0), kn, Matrix(3, 2), 0.25) == Matrix(3, 2, 1.0));
  CHECK_THROWS_AS(inject(xt, zar, kn, Matrix(2, 3), 0.5), std::invalid_argument);
  CHECK_THROWS_AS(inject(xt, zar, kn, Matrix(3, 2), 1.5), std::invalid_argument);
}

TEST_CASE("impute degenerate cases") {
  const NoiseSchedule s = build_linear_schedule(6, 1e-2, 0.4);
  Rng data(4);
  const Matrix x = data.normal_matrix(8, 3), zar = data.normal_matrix(8, 3);
  SamplerConfig cfg;
  Rng rng(5);
  CHECK(impute(x, Matrix(8, 3, 1.0), zar, toy_model, s, cfg, rng) == x);

  cfg.weights.n0 = 0.0;
  CHECK(impute(x, Matrix(8, 3), zar, toy_model, s, cfg, rng) == zar);

  // observed cells are reproduced bitwise for every variant
  const Matrix m = point_mask(8, 3, 0.4, data);
  for (bool cond : {false, true})
    for (bool inj : {false, true})
      for (PriorKind prior : {PriorKind::diffused_known, PriorKind::standard_normal}) {
        SamplerConfig c;
        c.use_condition = cond;
        c.use_injection = inj;
        c.prior = prior;
        c.noise_ar = inj;
        const Matrix out = impute(x, m, zar, toy_model, s, c, rng);
        for (std::size_t i = 0; i < out.size(); ++i)
          if (m[i] == 1.0) CHECK(out[i] == x[i]);
      }
  CHECK_THROWS_AS(impute(x, Matrix(3, 8), zar, toy_model, s, cfg, rng), std::invalid_argument);
}

TEST_CASE("impute two-step golden trace") {
  const NoiseSchedule s({0.1, 0.2});
  const WeightSchedule w{0.8, 0.3};
  Rng data(6);
  const Matrix x = data.normal_matrix(4, 2), zar = data.normal_matrix(4, 2);
  const Matrix m(4, 2, std::vector<double>{1, 0, 0, 1, 1, 1, 0, 0});

  SamplerConfig cfg;
  cfg.weights = w;
  Rng rng(7);
  const Matrix got = impute(x, m, zar, zero_model, s, cfg, rng);

  // hand-unrolled: prior draw, then z at t=2, then known noise at level 1
  Rng replay(7);
  const Matrix prior = replay.normal_matrix(4, 2);
  const Matrix z = replay.normal_matrix(4, 2);
  const Matrix nk = replay.normal_matrix(4, 2);
  const double a1 = 0.9, a2 = 0.8, ab1 = 0.9, ab2 = 0.72;
  const double tb2 = 0.2 * (1.0 - ab1) / (1.0 - ab2);
  const double h1 = 1.0 - 0.8 * std::exp(-0.3), h0 = 1.0 - 0.8;
  for (std::size_t i = 0; i < 8; ++i) {
    const double known = x[i] * m[i];
    const double x2 = std::sqrt(ab2) * known + std::sqrt(1.0 - ab2) * prior[i];
    const double xt1 = x2 / std::sqrt(a2) + std::sqrt(tb2) * z[i];
    const double kn1 = std::sqrt(ab1) * known + std::sqrt(1.0 - ab1) * nk[i];
    const double x1 = m[i] == 1.0 ? kn1 : h1 * zar[i] + (1.0 - h1) * xt1;
    const double xt0 = x1 / std::sqrt(a1);
    const double x0 = m[i] == 1.0 ? known : h0 * zar[i] + (1.0 - h0) * xt0;
    CHECK(std::abs(got[i] - x0) <= 1e-12);
  }
}

TEST_CASE("ablation flags reduce to plain samplers") {
  const NoiseSchedule s = build_linear_schedule(8, 1e-2, 0.4);
  Rng data(8);
  const Matrix x = data.normal_matrix(6, 2), zar = data.normal_matrix(6, 2);
  const Matrix m = point_mask(6, 2, 0.5, data);

  SamplerConfig cond;
  cond.use_injection = false;
  Rng a(9), b(9);
  CHECK(max_abs_diff(impute(x, m, zar, toy_model, s, cond, a), plain_conditional(x, m, toy_model, s, b)) < 1e-12);

  SamplerConfig base;
  base.use_injection = false;
  base.use_condition = false;
  Rng c(10), d(10);
  CHECK(max_abs_diff(impute(x, m, zar, toy_model, s, base, c), plain_unconditional(x, m, toy_model, s, d)) < 1e-12);

  // injection changes the missing cells only
  SamplerConfig full;
  Rng e(11), f(11);
  const Matrix with = impute(x, m, zar, toy_model, s, full, e);
  const Matrix without = impute(x, m, zar, toy_model, s, cond, f);
  bool differs = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (m[i] == 1.0) CHECK(with[i] == without[i]);
    else differs = differs || with[i] != without[i];
  }
  CHECK(differs);
}

TEST_CASE("pure-noise prior and K-sample mean") {
  const NoiseSchedule s = build_linear_schedule(4, 1e-2, 0.4);
  Rng data(12);
  const Matrix x = data.normal_matrix(5, 2), zar = data.normal_matrix(5, 2);
  const Matrix m = point_mask(5, 2, 0.5, data);
  SamplerConfig cfg;
  cfg.prior = PriorKind::standard_normal;
  cfg.weights.n0 = 0.0;
  Rng rng(13);
  const Matrix out = impute(x, m, zar, toy_model, s, cfg, rng);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == (m[i] == 1.0 ? x[i] : zar[i]));

  cfg = SamplerConfig{};
  const Rng root(14);
  const Matrix mean3 = impute_mean(x, m, zar, toy_model, s, cfg, root, 3);
  Matrix manual(5, 2);
  for (int k = 0; k < 3; ++k) {
    Rng sk = root.split(static_cast<std::uint64_t>(k));
    manual += impute(x, m, zar, toy_model, s, cfg, sk);
  }
  CHECK(max_abs_diff(mean3, (1.0 / 3.0) * manual) < 1e-12);
  CHECK_THROWS_AS(impute_mean(x, m, zar, toy_model, s, cfg, root, 0), std::invalid_argument);
}
