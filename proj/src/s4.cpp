#include "dsdi/s4.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

#include "dsdi/kernels.hpp"

namespace dsdi {

double S4Parameters::dt() const { return std::exp(log_dt); }

void S4Parameters::validate() const {
  if (a.empty() || b.size() != a.size() || c.size() != a.size()) {
    throw std::invalid_argument("S4Parameters: A, B, C must be non-empty and equally sized");
  }
  for (double v : a) {
    if (!(v < 0.0)) throw std::invalid_argument("S4Parameters: every pole must be negative");
  }
}

S4Parameters S4Parameters::initialize(std::size_t state_dim, Rng& rng) {
  S4Parameters p;
  p.a.resize(state_dim);
  p.b.assign(state_dim, 1.0);
  p.c.resize(state_dim);
  for (std::size_t n = 0; n < state_dim; ++n) {
    p.a[n] = -static_cast<double>(n + 1);
    p.c[n] = std::abs(rng.normal());
  }
  p.d = rng.normal();
  p.log_dt = std::log(1e-3) + rng.uniform() * (std::log(1e-1) - std::log(1e-3));
  return p;
}

DiscreteSsm discretize(std::span<const double> a, std::span<const double> b, double dt) {
  if (a.size() != b.size()) throw std::invalid_argument("discretize: A and B sizes differ");
  if (!(dt > 0.0)) throw std::invalid_argument("discretize: dt must be positive");
  DiscreteSsm out;
  out.a_bar.resize(a.size());
  out.b_bar.resize(a.size());
  for (std::size_t n = 0; n < a.size(); ++n) {
    const double denom = 1.0 - 0.5 * dt * a[n];
    assert(denom != 0.0);
    if (denom == 0.0) throw std::domain_error("discretize: singular bilinear transform");
    out.a_bar[n] = (1.0 + 0.5 * dt * a[n]) / denom;
    out.b_bar[n] = dt * b[n] / denom;
  }
  return out;
}

std::vector<double> vandermonde_kernel(const DiscreteSsm& ssm, std::span<const double> c,
                                       std::size_t length) {
  if (c.size() != ssm.a_bar.size()) throw std::invalid_argument("vandermonde_kernel: C size");
  std::vector<double> k(length, 0.0);
  for (std::size_t n = 0; n < c.size(); ++n) {
    double w = c[n] * ssm.b_bar[n];
    const double a = ssm.a_bar[n];
    for (std::size_t i = 0; i < length; ++i) {
      k[i] += w;
      w *= a;
    }
  }
  return k;
}

S4Kernel materialize_kernel(const S4Parameters& p, std::size_t length) {
  p.validate();
  const DiscreteSsm ssm = discretize(p.a, p.b, p.dt());
  return {vandermonde_kernel(ssm, p.c, length), p.d};
}

std::vector<double> apply_convolutional(const S4Kernel& kernel, std::span<const double> u) {
  if (kernel.k.size() != u.size()) {
    throw std::invalid_argument("apply_convolutional: kernel and input lengths differ");
  }
  const std::size_t len = u.size();
  std::vector<double> y(len, 0.0);
  for (std::size_t j = 0; j < len; ++j) {
    const double uj = u[j];
    for (std::size_t i = 0; i + j < len; ++i) y[i + j] += kernel.k[i] * uj;
  }
  for (std::size_t t = 0; t < len; ++t) y[t] += kernel.d * u[t];
  return y;
}

std::vector<double> apply_recurrent(const S4Parameters& p, std::span<const double> u) {
  p.validate();
  const DiscreteSsm ssm = discretize(p.a, p.b, p.dt());
  std::vector<double> state(p.state_dim(), 0.0);
  std::vector<double> y(u.size());
  for (std::size_t t = 0; t < u.size(); ++t) {
    double out = p.d * u[t];
    for (std::size_t n = 0; n < state.size(); ++n) {
      state[n] = ssm.a_bar[n] * state[n] + ssm.b_bar[n] * u[t];
      out += p.c[n] * state[n];
    }
    y[t] = out;
  }
  return y;
}

// ---------------------------------------------------------------------------

namespace {

Matrix reverse_time(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  const std::size_t len = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t t = 0; t < len; ++t) out(r, t) = x(r, len - 1 - t);
  }
  return out;
}

}  // namespace

S4Layer::S4Layer(std::string name_, std::size_t channels, std::size_t state_dim, Rng& rng,
                 bool reverse_)
    : name(std::move(name_)),
      reverse(reverse_),
      log_neg_a(channels, state_dim),
      b(channels, state_dim),
      c(channels, state_dim),
      skip(channels, 1),
      log_dt(channels, 1) {
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const S4Parameters p = S4Parameters::initialize(state_dim, rng);
    for (std::size_t n = 0; n < state_dim; ++n) {
      log_neg_a.value(ch, n) = std::log(-p.a[n]);
      b.value(ch, n) = p.b[n];
      c.value(ch, n) = p.c[n];
    }
    skip.value[ch] = p.d;
    log_dt.value[ch] = p.log_dt;
  }
}

S4Parameters S4Layer::channel(std::size_t ch) const {
  S4Parameters p;
  const std::size_t n_state = state_dim();
  p.a.resize(n_state);
  p.b.resize(n_state);
  p.c.resize(n_state);
  for (std::size_t n = 0; n < n_state; ++n) {
    p.a[n] = -std::exp(log_neg_a.value(ch, n));
    p.b[n] = b.value(ch, n);
    p.c[n] = c.value(ch, n);
  }
  p.d = skip.value[ch];
  p.log_dt = log_dt.value[ch];
  return p;
}

Matrix S4Layer::kernels(std::size_t length) const {
  const std::size_t n_ch = channels();
  Matrix k(n_ch, length);
  const auto rows = static_cast<std::ptrdiff_t>(n_ch);
#pragma omp parallel for schedule(static) if (n_ch * length * state_dim() > (1u << 16))
  for (std::ptrdiff_t ch = 0; ch < rows; ++ch) {
    const auto idx = static_cast<std::size_t>(ch);
    const S4Parameters p = channel(idx);
    const std::vector<double> kc =
        vandermonde_kernel(discretize(p.a, p.b, p.dt()), p.c, length);
    std::copy(kc.begin(), kc.end(), k.row(idx).begin());
  }
  return k;
}

Matrix S4Layer::forward(const Matrix& u_in, Cache* cache) const {
  Matrix u = reverse ? reverse_time(u_in) : u_in;
  Matrix k = kernels(u.cols());
  Matrix y(u.rows(), u.cols());
  kernels::causal_conv(k, u, y);
  for (std::size_t ch = 0; ch < u.rows(); ++ch) {
    const double d = skip.value[ch];
    auto yr = y.row(ch);
    auto ur = u.row(ch);
    for (std::size_t t = 0; t < yr.size(); ++t) yr[t] += d * ur[t];
  }
  if (cache) {
    cache->u = std::move(u);
    cache->kernel = std::move(k);
  }
  return reverse ? reverse_time(y) : y;
}

Matrix S4Layer::backward(const Cache& cache, const Matrix& dy_in) {
  const Matrix dy = reverse ? reverse_time(dy_in) : dy_in;
  const Matrix& u = cache.u;
  const std::size_t len = u.cols();
  Matrix dk(u.rows(), len);
  Matrix du(u.rows(), len);
  kernels::causal_conv_backward(cache.kernel, u, dy, dk, du);

  for (std::size_t ch = 0; ch < u.rows(); ++ch) {
    const double d = skip.value[ch];
    double dskip = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      dskip += dy(ch, t) * u(ch, t);
      du(ch, t) += d * dy(ch, t);
    }
    skip.grad[ch] += dskip;

    // Chain dk back through the Vandermonde sum and the bilinear transform.
    const double dt = std::exp(log_dt.value[ch]);
    double ddt = 0.0;
    for (std::size_t n = 0; n < state_dim(); ++n) {
      const double a = -std::exp(log_neg_a.value(ch, n));
      const double bn = b.value(ch, n);
      const double cn = c.value(ch, n);
      const double p = 0.5 * dt * a;
      const double one_minus_p = 1.0 - p;
      const double a_bar = (1.0 + p) / one_minus_p;
      const double b_bar = dt * bn / one_minus_p;

      double sum_pow = 0.0;    // Σ dk_i Ā^i
      double sum_dpow = 0.0;   // Σ dk_i i Ā^{i−1}
      double pw = 1.0;         // Ā^i
      double pw_prev = 0.0;    // Ā^{i−1}
      for (std::size_t i = 0; i < len; ++i) {
        const double g = dk(ch, i);
        sum_pow += g * pw;
        sum_dpow += g * static_cast<double>(i) * pw_prev;
        pw_prev = pw;
        pw *= a_bar;
      }
      const double dc = sum_pow * b_bar;
      const double db_bar = sum_pow * cn;
      const double da_bar = sum_dpow * cn * b_bar;

      const double inv2 = 1.0 / (one_minus_p * one_minus_p);
      const double dp = da_bar * 2.0 * inv2 + db_bar * dt * bn * inv2;
      c.grad(ch, n) += dc;
      b.grad(ch, n) += db_bar * dt / one_minus_p;
      const double da = dp * 0.5 * dt;
      log_neg_a.grad(ch, n) += da * a;
      ddt += dp * 0.5 * a + db_bar * bn / one_minus_p;
    }
    log_dt.grad[ch] += ddt * dt;
  }
  return reverse ? reverse_time(du) : du;
}

void S4Layer::collect(ParamList& out) {
  out.emplace_back(name + ".log_neg_a", &log_neg_a);
  out.emplace_back(name + ".b", &b);
  out.emplace_back(name + ".c", &c);
  out.emplace_back(name + ".skip", &skip);
  out.emplace_back(name + ".log_dt", &log_dt);
}

}  // namespace dsdi
