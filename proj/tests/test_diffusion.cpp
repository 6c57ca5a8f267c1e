#include "doctest.h"

#include <cmath>
#include <vector>

#include "dsdi/diffusion.hpp"
#include "dsdi/rng.hpp"

using namespace dsdi;

TEST_CASE("schedule construction") {
  const NoiseSchedule s = build_linear_schedule(3, 0.1, 0.1);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-14));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.81).epsilon(1e-14));
  CHECK(s.alpha_bar(3) == doctest::Approx(0.729).epsilon(1e-14));
  CHECK(s.alpha_bar(0) == 1.0);

  const NoiseSchedule one = build_linear_schedule(1, 0.5, 0.5);
  CHECK(one.alpha_bar(1) == 0.5);
  CHECK(one.tilde_beta(1) == 0.0);

  // regression constants from an independent float64 product
  const NoiseSchedule wide = build_linear_schedule(100, 1e-4, 0.35);
  CHECK(wide.alpha_bar(100) < 0.01);
  CHECK(wide.alpha_bar(100) == doctest::Approx(2.022886258571694e-09).epsilon(1e-9));
  const NoiseSchedule dflt = build_linear_schedule(100, kDefaultBetaStart, default_beta_end(100));
  CHECK(default_beta_end(100) == doctest::Approx(0.1));
  CHECK(dflt.alpha_bar(100) == doctest::Approx(0.005618761019373728).epsilon(1e-9));

  CHECK_THROWS_AS(build_linear_schedule(0, 0.1, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(build_linear_schedule(5, 0.2, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(build_linear_schedule(5, 0.0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(build_linear_schedule(5, 0.1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(one.beta(0), std::out_of_range);
  CHECK_THROWS_AS(one.beta(2), std::out_of_range);
  CHECK_THROWS_AS(one.alpha_bar(2), std::out_of_range);
}

TEST_CASE("schedule invariants") {
  for (int T : {1, 10, 50, 100, 200}) {
    const NoiseSchedule s = build_linear_schedule(T, kDefaultBetaStart, default_beta_end(T));
    double prod = 1.0;
    double prev = 1.0;
    for (int t = 1; t <= T; ++t) {
      prod *= 1.0 - s.beta(t);
      CHECK(std::abs(s.alpha_bar(t) - prod) <= 1e-12 * prod);
      CHECK(s.alpha_bar(t) < prev);
      CHECK(s.alpha_bar(t) > 0.0);
      CHECK(s.alpha(t) == 1.0 - s.beta(t));
      const double tb = s.beta(t) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t));
      CHECK(s.tilde_beta(t) == doctest::Approx(tb).epsilon(1e-12));
      prev = s.alpha_bar(t);
    }
    CHECK(s.tilde_beta(1) == 0.0);
    const double step = (s.beta(T) - s.beta(1)) / std::max(1, T - 1);
    for (int t = 2; t <= T; ++t) CHECK(s.beta(t) - s.beta(t - 1) == doctest::Approx(step));
  }
}

TEST_CASE("forward_step examples") {
  const NoiseSchedule s({0.19, 0.3});
  Rng rng(1);
  const Matrix n = rng.normal_matrix(4, 3);
  const Matrix zero(4, 3);
  const Matrix out = forward_step(zero, 2, n, s);
  CHECK(max_abs_diff(out, std::sqrt(0.3) * n) < 1e-15);

  const Matrix ones(4, 3, 1.0);
  const Matrix o = forward_step(ones, 1, zero, s);
  for (double v : o.values()) CHECK(v == doctest::Approx(0.9).epsilon(1e-15));

  // vanishing β leaves x untouched
  const NoiseSchedule tiny({1e-300});
  const Matrix x = rng.normal_matrix(4, 3);
  CHECK(forward_step(x, 1, n, tiny) == x);

  CHECK_THROWS_AS(forward_step(x, 0, n, s), std::out_of_range);
  CHECK_THROWS_AS(forward_step(x, 3, n, s), std::out_of_range);
  CHECK_THROWS_AS(forward_step(x, 1, Matrix(2, 2), s), std::invalid_argument);
}

TEST_CASE("forward_sample examples") {
  const NoiseSchedule s({0.19, 0.2});
  Rng rng(2);
  const Matrix x0 = rng.normal_matrix(5, 2);
  CHECK(forward_sample(x0, 0, rng.normal_matrix(5, 2), s) == x0);
  const Matrix o = forward_sample(Matrix(5, 2, 1.0), 1, Matrix(5, 2), s);
  for (double v : o.values()) CHECK(v == doctest::Approx(0.9).epsilon(1e-15));
  CHECK_THROWS_AS(forward_sample(x0, -1, x0, s), std::out_of_range);
  CHECK_THROWS_AS(forward_sample(x0, 3, x0, s), std::out_of_range);
}

TEST_CASE("closed form matches iterated composition by Monte Carlo") {
  const NoiseSchedule s = build_linear_schedule(20, 1e-3, 0.2);
  const int t = 12;
  const Matrix x0(1, 3, std::vector<double>{1.5, -0.7, 0.2});
  const int draws = 10000;
  Rng rng_iter(10), rng_closed(11);
  std::vector<double> sum_i(3), sq_i(3), sum_c(3), sq_c(3);
  for (int d = 0; d < draws; ++d) {
    Matrix x = x0;
    for (int k = 1; k <= t; ++k) x = forward_step(x, k, rng_iter.normal_matrix(1, 3), s);
    const Matrix y = forward_sample(x0, t, rng_closed.normal_matrix(1, 3), s);
    for (int c = 0; c < 3; ++c) {
      sum_i[c] += x[c];
      sq_i[c] += x[c] * x[c];
      sum_c[c] += y[c];
      sq_c[c] += y[c] * y[c];
    }
  }
  for (int c = 0; c < 3; ++c) {
    const double mi = sum_i[c] / draws, mc = sum_c[c] / draws;
    const double si = std::sqrt(sq_i[c] / draws - mi * mi), sc = std::sqrt(sq_c[c] / draws - mc * mc);
    // the mean of the smallest channel is close to 0, so compare it on the noise scale
    CHECK(std::abs(mi - mc) <= 0.02 * std::max(std::abs(mc), si));
    CHECK(std::abs(si - sc) <= 0.02 * sc);
    CHECK(mc == doctest::Approx(std::sqrt(s.alpha_bar(t)) * x0[c]).epsilon(0.02).scale(si));
    CHECK(sc == doctest::Approx(std::sqrt(1.0 - s.alpha_bar(t))).epsilon(0.02));
  }
  // and the algebraic version of the same statement
  double scale = 1.0, var = 0.0;
  for (int k = 1; k <= t; ++k) {
    scale *= std::sqrt(1.0 - s.beta(k));
    var = (1.0 - s.beta(k)) * var + s.beta(k);
  }
  CHECK(scale == doctest::Approx(std::sqrt(s.alpha_bar(t))).epsilon(1e-12));
  CHECK(var == doctest::Approx(1.0 - s.alpha_bar(t)).epsilon(1e-12));
}

TEST_CASE("reverse_mean") {
  const NoiseSchedule s = build_linear_schedule(10, 1e-3, 0.2);
  Rng rng(5);
  const Matrix xt = rng.normal_matrix(6, 2);
  const Matrix m0 = reverse_mean(xt, 4, Matrix(6, 2), s);
  CHECK(max_abs_diff(m0, (1.0 / std::sqrt(s.alpha(4))) * xt) < 1e-15);

  // inversion at t = 1
  const Matrix x0 = rng.normal_matrix(6, 2);
  const Matrix n = rng.normal_matrix(6, 2);
  const Matrix x1 = forward_sample(x0, 1, n, s);
  CHECK(max_abs_diff(reverse_mean(x1, 1, n, s), x0) < 1e-12);

  // element-by-element re-derivation
  const Matrix eps = rng.normal_matrix(6, 2);
  const int t = 7;
  const Matrix got = reverse_mean(xt, t, eps, s);
  const double beta = s.beta(t);
  double ab = 1.0;
  for (int k = 1; k <= t; ++k) ab *= 1.0 - s.beta(k);
  for (std::size_t i = 0; i < xt.size(); ++i) {
    const double expect = (xt[i] - beta * eps[i] / std::sqrt(1.0 - ab)) / std::sqrt(1.0 - beta);
    CHECK(got[i] == doctest::Approx(expect).epsilon(1e-12));
  }

  // superposition in both arguments
  const Matrix xt2 = rng.normal_matrix(6, 2), eps2 = rng.normal_matrix(6, 2);
  const Matrix lhs = reverse_mean(2.0 * xt + (-3.0) * xt2, t, 2.0 * eps + (-3.0) * eps2, s);
  const Matrix rhs = 2.0 * reverse_mean(xt, t, eps, s) + (-3.0) * reverse_mean(xt2, t, eps2, s);
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);

  CHECK_THROWS_AS(reverse_mean(xt, 0, eps, s), std::out_of_range);
  CHECK_THROWS_AS(reverse_mean(xt, 11, eps, s), std::out_of_range);
}

TEST_CASE("noise prediction loss") {
  Rng rng(6);
  const Matrix e = rng.normal_matrix(4, 4);
  CHECK(noise_prediction_loss(e, e) == 0.0);
  CHECK(noise_prediction_loss(Matrix(3, 2), Matrix(3, 2, 1.0)) == 1.0);
  CHECK(noise_prediction_loss(Matrix(1, 2, std::vector<double>{1, 2}), Matrix(1, 2)) == 2.5);
  for (int i = 0; i < 50; ++i) {
    const Matrix a = rng.normal_matrix(3, 3), b = rng.normal_matrix(3, 3);
    CHECK(noise_prediction_loss(a, b) > 0.0);
  }
  CHECK_THROWS_AS(noise_prediction_loss(e, Matrix(2, 2)), std::invalid_argument);
}
