#include "dsdi/layers.hpp"

#include <cmath>
#include <numbers>

#include "dsdi/kernels.hpp"

namespace dsdi {

void zero_grads(const ParamList& params) {
  for (const auto& [name, p] : params) p->zero_grad();
}

// ---------------------------------------------------------------------------

Linear::Linear(std::string name_, std::size_t in, std::size_t out, Rng& rng, double gain)
    : name(std::move(name_)), weight(out, in), bias(out, 1) {
  // Glorot-uniform, scaled by `gain` (0 gives a zero-initialized map).
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  for (std::size_t i = 0; i < weight.value.size(); ++i) {
    weight.value[i] = limit * (2.0 * rng.uniform() - 1.0);
  }
}

Matrix Linear::forward(const Matrix& x) const {
  Matrix y(out_features(), x.cols());
  kernels::gemm_nn(weight.value, x, y);
  for (std::size_t o = 0; o < y.rows(); ++o) {
    const double b = bias.value[o];
    for (double& v : y.row(o)) v += b;
  }
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  kernels::gemm_nt(dy, x, weight.grad, true);
  for (std::size_t o = 0; o < dy.rows(); ++o) {
    double s = 0.0;
    for (double v : dy.row(o)) s += v;
    bias.grad[o] += s;
  }
  Matrix dx(in_features(), x.cols());
  kernels::gemm_tn(weight.value, dy, dx);
  return dx;
}

Matrix Linear::forward_tokens(const Matrix& x) const {
  Matrix y(x.rows(), out_features());
  kernels::gemm_nt(x, weight.value, y);
  for (std::size_t n = 0; n < y.rows(); ++n) {
    auto r = y.row(n);
    for (std::size_t o = 0; o < r.size(); ++o) r[o] += bias.value[o];
  }
  return y;
}

Matrix Linear::backward_tokens(const Matrix& x, const Matrix& dy) {
  kernels::gemm_tn(dy, x, weight.grad, true);
  for (std::size_t n = 0; n < dy.rows(); ++n) {
    auto r = dy.row(n);
    for (std::size_t o = 0; o < r.size(); ++o) bias.grad[o] += r[o];
  }
  Matrix dx(x.rows(), in_features());
  kernels::gemm_nn(dy, weight.value, dx);
  return dx;
}

void Linear::collect(ParamList& out) {
  out.emplace_back(name + ".weight", &weight);
  out.emplace_back(name + ".bias", &bias);
}

// ---------------------------------------------------------------------------

LayerNorm::LayerNorm(std::string name_, std::size_t channels)
    : name(std::move(name_)), gain(channels, 1), shift(channels, 1) {
  gain.value.fill(1.0);
}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  const std::size_t c = x.rows();
  const std::size_t len = x.cols();
  Matrix xhat(c, len);
  std::vector<double> inv_std(len);
  std::vector<double> mean(len, 0.0), var(len, 0.0);
  for (std::size_t r = 0; r < c; ++r) {
    const double* xr = x.data() + r * len;
    for (std::size_t t = 0; t < len; ++t) mean[t] += xr[t];
  }
  for (double& m : mean) m /= static_cast<double>(c);
  for (std::size_t r = 0; r < c; ++r) {
    const double* xr = x.data() + r * len;
    for (std::size_t t = 0; t < len; ++t) {
      const double d = xr[t] - mean[t];
      var[t] += d * d;
    }
  }
  for (std::size_t t = 0; t < len; ++t) {
    inv_std[t] = 1.0 / std::sqrt(var[t] / static_cast<double>(c) + kEps);
  }
  Matrix y(c, len);
  for (std::size_t r = 0; r < c; ++r) {
    const double g = gain.value[r];
    const double b = shift.value[r];
    for (std::size_t t = 0; t < len; ++t) {
      const double h = (x(r, t) - mean[t]) * inv_std[t];
      xhat(r, t) = h;
      y(r, t) = g * h + b;
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& dy) {
  const std::size_t c = dy.rows();
  const std::size_t len = dy.cols();
  const double inv_c = 1.0 / static_cast<double>(c);
  std::vector<double> sum_g(len, 0.0), sum_gx(len, 0.0);
  Matrix dxhat(c, len);
  for (std::size_t r = 0; r < c; ++r) {
    const double g = gain.value[r];
    double dgain = 0.0, dshift = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      const double d = dy(r, t);
      dgain += d * cache.xhat(r, t);
      dshift += d;
      const double dh = d * g;
      dxhat(r, t) = dh;
      sum_g[t] += dh;
      sum_gx[t] += dh * cache.xhat(r, t);
    }
    gain.grad[r] += dgain;
    shift.grad[r] += dshift;
  }
  Matrix dx(c, len);
  for (std::size_t r = 0; r < c; ++r) {
    for (std::size_t t = 0; t < len; ++t) {
      dx(r, t) = cache.inv_std[t] *
                 (dxhat(r, t) - inv_c * sum_g[t] - cache.xhat(r, t) * inv_c * sum_gx[t]);
    }
  }
  return dx;
}

void LayerNorm::collect(ParamList& out) {
  out.emplace_back(name + ".gain", &gain);
  out.emplace_back(name + ".shift", &shift);
}

// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(std::string name_, std::size_t features)
    : name(std::move(name_)),
      gain(1, features),
      shift(1, features),
      running_mean(1, features),
      running_var(1, features) {
  gain.value.fill(1.0);
  running_var.value.fill(1.0);
}

Matrix BatchNorm::forward_train(const Matrix& x, Cache* cache) {
  const std::size_t n = x.rows();
  const std::size_t f = x.cols();
  std::vector<double> mean(f, 0.0), var(f, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) mean[j] += x(i, j);
  }
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      const double d = x(i, j) - mean[j];
      var[j] += d * d;
    }
  }
  for (double& v : var) v /= static_cast<double>(n);

  Cache local;
  Cache& c = cache ? *cache : local;
  c.xhat = Matrix(n, f);
  c.inv_std.assign(f, 0.0);
  for (std::size_t j = 0; j < f; ++j) c.inv_std[j] = 1.0 / std::sqrt(var[j] + kEps);
  Matrix y(n, f);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      const double h = (x(i, j) - mean[j]) * c.inv_std[j];
      c.xhat(i, j) = h;
      y(i, j) = gain.value[j] * h + shift.value[j];
    }
  }
  const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
  for (std::size_t j = 0; j < f; ++j) {
    running_mean.value[j] = (1.0 - kMomentum) * running_mean.value[j] + kMomentum * mean[j];
    running_var.value[j] = (1.0 - kMomentum) * running_var.value[j] + kMomentum * var[j] * unbias;
  }
  return y;
}

Matrix BatchNorm::forward_eval(const Matrix& x) const {
  Matrix y(x.rows(), x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    const double inv = 1.0 / std::sqrt(running_var.value[j] + kEps);
    const double m = running_mean.value[j];
    for (std::size_t i = 0; i < x.rows(); ++i) {
      y(i, j) = gain.value[j] * (x(i, j) - m) * inv + shift.value[j];
    }
  }
  return y;
}

Matrix BatchNorm::backward(const Cache& cache, const Matrix& dy) {
  const std::size_t n = dy.rows();
  const std::size_t f = dy.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> sum_g(f, 0.0), sum_gx(f, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      const double d = dy(i, j);
      gain.grad[j] += d * cache.xhat(i, j);
      shift.grad[j] += d;
      const double dh = d * gain.value[j];
      sum_g[j] += dh;
      sum_gx[j] += dh * cache.xhat(i, j);
    }
  }
  Matrix dx(n, f);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      const double dh = dy(i, j) * gain.value[j];
      dx(i, j) = cache.inv_std[j] *
                 (dh - inv_n * sum_g[j] - cache.xhat(i, j) * inv_n * sum_gx[j]);
    }
  }
  return dx;
}

void BatchNorm::collect(ParamList& out) {
  out.emplace_back(name + ".gain", &gain);
  out.emplace_back(name + ".shift", &shift);
  out.emplace_back(name + ".running_mean", &running_mean);
  out.emplace_back(name + ".running_var", &running_var);
}

// ---------------------------------------------------------------------------

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Matrix gelu(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  return y;
}

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  Matrix dx(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * gelu_grad(x[i]);
  return dx;
}

}  // namespace dsdi
