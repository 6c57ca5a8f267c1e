#include "dsdi/unet.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dsdi {

void UNetConfig::validate() const {
  if (length == 0 || features == 0) throw std::invalid_argument("UNetConfig: L and D must be positive");
  if (diffusion_steps < 1) throw std::invalid_argument("UNetConfig: diffusion_steps must be >= 1");
  if (channels.size() < 2) throw std::invalid_argument("UNetConfig: need at least 2 levels");
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] == 0) throw std::invalid_argument("UNetConfig: zero channel width");
    if (i > 0 && channels[i] <= channels[i - 1]) {
      throw std::invalid_argument("UNetConfig: channel widths must increase with depth");
    }
  }
  if (pool_factor < 2) throw std::invalid_argument("UNetConfig: pool_factor must be >= 2");
  std::size_t div = 1;
  for (std::size_t i = 1; i < channels.size(); ++i) div *= pool_factor;
  if (length % div != 0) {
    throw std::invalid_argument("UNetConfig: length " + std::to_string(length) +
                                " not divisible by pool_factor^(levels-1) = " + std::to_string(div));
  }
  if (step_embed_dim == 0 || step_embed_dim % 2 != 0) {
    throw std::invalid_argument("UNetConfig: step_embed_dim must be even and positive");
  }
  if (state_dim == 0 || mlp_ratio == 0) throw std::invalid_argument("UNetConfig: zero state_dim/mlp_ratio");
}

std::vector<double> step_embedding(int t, std::size_t dim) {
  std::vector<double> e(dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(t * freq);
    e[i + half] = std::cos(t * freq);
  }
  return e;
}

Matrix downsample(const Matrix& x, std::size_t factor) {
  if (factor == 0 || x.cols() % factor != 0) {
    throw std::invalid_argument("downsample: length not divisible by pool factor");
  }
  Matrix y(x.rows(), x.cols() / factor);
  const double inv = 1.0 / static_cast<double>(factor);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < y.cols(); ++j) {
      double s = 0.0;
      for (std::size_t q = 0; q < factor; ++q) s += x(r, j * factor + q);
      y(r, j) = s * inv;
    }
  }
  return y;
}

Matrix downsample_backward(const Matrix& dy, std::size_t factor) {
  Matrix dx(dy.rows(), dy.cols() * factor);
  const double inv = 1.0 / static_cast<double>(factor);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    for (std::size_t j = 0; j < dy.cols(); ++j) {
      for (std::size_t q = 0; q < factor; ++q) dx(r, j * factor + q) = dy(r, j) * inv;
    }
  }
  return dx;
}

Matrix upsample(const Matrix& x, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("upsample: zero factor");
  Matrix y(x.rows(), x.cols() * factor);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      for (std::size_t q = 0; q < factor; ++q) y(r, j * factor + q) = x(r, j);
    }
  }
  return y;
}

Matrix upsample_backward(const Matrix& dy, std::size_t factor) {
  if (factor == 0 || dy.cols() % factor != 0) {
    throw std::invalid_argument("upsample_backward: length not divisible by factor");
  }
  Matrix dx(dy.rows(), dy.cols() / factor);
  for (std::size_t r = 0; r < dx.rows(); ++r) {
    for (std::size_t j = 0; j < dx.cols(); ++j) {
      double s = 0.0;
      for (std::size_t q = 0; q < factor; ++q) s += dy(r, j * factor + q);
      dx(r, j) = s;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

LocalConv::LocalConv(std::string name_, std::size_t channels, Rng& rng)
    : name(std::move(name_)), weight(channels, 3), bias(channels, 1) {
  const double limit = std::sqrt(3.0 / 3.0);
  for (std::size_t i = 0; i < weight.value.size(); ++i) {
    weight.value[i] = limit * (2.0 * rng.uniform() - 1.0);
  }
}

Matrix LocalConv::forward(const Matrix& x) const {
  const std::size_t len = x.cols();
  Matrix y(x.rows(), len);
  for (std::size_t c = 0; c < x.rows(); ++c) {
    const double w0 = weight.value(c, 0), w1 = weight.value(c, 1), w2 = weight.value(c, 2);
    for (std::size_t t = 0; t < len; ++t) {
      double s = bias.value[c] + w1 * x(c, t);
      if (t > 0) s += w0 * x(c, t - 1);
      if (t + 1 < len) s += w2 * x(c, t + 1);
      y(c, t) = s;
    }
  }
  return y;
}

Matrix LocalConv::backward(const Matrix& x, const Matrix& dy) {
  const std::size_t len = x.cols();
  Matrix dx(x.rows(), len);
  for (std::size_t c = 0; c < x.rows(); ++c) {
    const double w0 = weight.value(c, 0), w1 = weight.value(c, 1), w2 = weight.value(c, 2);
    for (std::size_t t = 0; t < len; ++t) {
      const double g = dy(c, t);
      bias.grad[c] += g;
      weight.grad(c, 1) += g * x(c, t);
      dx(c, t) += g * w1;
      if (t > 0) {
        weight.grad(c, 0) += g * x(c, t - 1);
        dx(c, t - 1) += g * w0;
      }
      if (t + 1 < len) {
        weight.grad(c, 2) += g * x(c, t + 1);
        dx(c, t + 1) += g * w2;
      }
    }
  }
  return dx;
}

void LocalConv::collect(ParamList& out) {
  out.emplace_back(name + ".weight", &weight);
  out.emplace_back(name + ".bias", &bias);
}

// ---------------------------------------------------------------------------

TemS4Block::TemS4Block(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                       std::size_t mlp_hidden, std::size_t embed_dim, std::size_t state_dim,
                       bool use_s4_, Rng& rng)
    : use_s4(use_s4_),
      norm(name + ".norm", in_channels),
      step_proj(name + ".step", embed_dim, in_channels, rng),
      mlp_in(name + ".mlp_in", in_channels, mlp_hidden, rng),
      mlp_out(name + ".mlp_out", mlp_hidden, out_channels, rng),
      residual(name + ".residual", in_channels, out_channels, rng) {
  if (mlp_hidden < in_channels && mlp_hidden < out_channels) {
    throw std::invalid_argument("TemS4Block: mlp_hidden must be at least the block width");
  }
  if (use_s4) {
    s4_fwd = S4Layer(name + ".s4_fwd", in_channels, state_dim, rng, false);
    s4_bwd = S4Layer(name + ".s4_bwd", in_channels, state_dim, rng, true);
  } else {
    local = LocalConv(name + ".conv", in_channels, rng);
  }
}

Matrix TemS4Block::forward(const Matrix& x, const Matrix& step_embed, Cache* cache) const {
  Cache local_cache;
  Cache& c = cache ? *cache : local_cache;
  Matrix y = norm.forward(x, &c.norm);
  const Matrix mod = step_proj.forward(step_embed);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (double& v : y.row(r)) v += mod[r];
  }
  Matrix mixed;
  if (use_s4) {
    mixed = s4_fwd.forward(y, &c.s4_fwd);
    mixed += s4_bwd.forward(y, &c.s4_bwd);
  } else {
    mixed = local.forward(y);
  }
  Matrix activated = gelu(mixed);
  Matrix hidden_pre = mlp_in.forward(activated);
  Matrix hidden = gelu(hidden_pre);
  Matrix out = mlp_out.forward(hidden);
  out += residual.forward(x);
  if (cache) {
    c.x = x;
    c.mixer_in = std::move(y);
    c.mixed = std::move(mixed);
    c.activated = std::move(activated);
    c.hidden_pre = std::move(hidden_pre);
    c.hidden = std::move(hidden);
  }
  return out;
}

Matrix TemS4Block::backward(const Cache& c, const Matrix& step_embed, const Matrix& dy) {
  Matrix dx = residual.backward(c.x, dy);
  Matrix d_hidden = mlp_out.backward(c.hidden, dy);
  Matrix d_hidden_pre = gelu_backward(c.hidden_pre, d_hidden);
  Matrix d_activated = mlp_in.backward(c.activated, d_hidden_pre);
  Matrix d_mixed = gelu_backward(c.mixed, d_activated);
  Matrix d_in;
  if (use_s4) {
    d_in = s4_fwd.backward(c.s4_fwd, d_mixed);
    d_in += s4_bwd.backward(c.s4_bwd, d_mixed);
  } else {
    d_in = local.backward(c.mixer_in, d_mixed);
  }
  Matrix d_mod(d_in.rows(), 1);
  for (std::size_t r = 0; r < d_in.rows(); ++r) {
    double s = 0.0;
    for (double v : d_in.row(r)) s += v;
    d_mod[r] = s;
  }
  step_proj.backward(step_embed, d_mod);
  dx += norm.backward(c.norm, d_in);
  return dx;
}

void TemS4Block::collect(ParamList& out) {
  norm.collect(out);
  step_proj.collect(out);
  if (use_s4) {
    s4_fwd.collect(out);
    s4_bwd.collect(out);
  } else {
    local.collect(out);
  }
  mlp_in.collect(out);
  mlp_out.collect(out);
  residual.collect(out);
}

// ---------------------------------------------------------------------------

DenoiserUNet::DenoiserUNet(UNetConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto& ch = config_.channels;
  const std::size_t levels = ch.size();
  const std::size_t e = config_.step_embed_dim;
  const std::size_t n = config_.state_dim;
  const bool s4 = config_.use_s4;
  in_proj_ = Linear("in_proj", 3 * config_.features, ch[0], rng);
  for (std::size_t i = 0; i + 1 < levels; ++i) {
    const std::string lvl = std::to_string(i);
    enc_.emplace_back("enc" + lvl, ch[i], ch[i], config_.mlp_ratio * ch[i], e, n, s4, rng);
    down_.emplace_back("down" + lvl, ch[i], ch[i + 1], rng);
  }
  mid_ = TemS4Block("mid", ch.back(), ch.back(), config_.mlp_ratio * ch.back(), e, n, s4, rng);
  for (std::size_t i = 0; i + 1 < levels; ++i) {
    const std::string lvl = std::to_string(i);
    up_.emplace_back("up" + lvl, ch[i + 1], ch[i], rng);
    dec_.emplace_back("dec" + lvl, 2 * ch[i], ch[i], config_.mlp_ratio * ch[i], e, n, s4, rng);
  }
  out_proj_ = Linear("out_proj", ch[0], config_.features, rng, 0.1);
}

Matrix DenoiserUNet::assemble_input(const Matrix& x_t, const Matrix& x_known,
                                    const Matrix& mask) const {
  const std::size_t len = config_.length;
  const std::size_t d = config_.features;
  if (x_t.rows() != len || x_t.cols() != d) {
    throw std::invalid_argument("DenoiserUNet: x_t must be " + std::to_string(len) + "x" +
                                std::to_string(d));
  }
  require_same_shape(x_t, x_known, "DenoiserUNet x_known");
  require_same_shape(x_t, mask, "DenoiserUNet mask");
  Matrix in(3 * d, len);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      in(c, t) = x_t(t, c);
      in(d + c, t) = x_known(t, c) * mask(t, c);
      in(2 * d + c, t) = mask(t, c);
    }
  }
  return in;
}

Matrix DenoiserUNet::forward(const Matrix& x_t, int t, const Matrix& x_known, const Matrix& mask,
                             Tape* tape) const {
  if (t < 1 || t > config_.diffusion_steps) {
    throw std::out_of_range("DenoiserUNet: step " + std::to_string(t) + " outside [1, " +
                            std::to_string(config_.diffusion_steps) + "]");
  }
  Tape local;
  Tape& tp = tape ? *tape : local;
  const std::size_t levels = config_.levels();
  const std::size_t pool = config_.pool_factor;
  tp.input = assemble_input(x_t, x_known, mask);
  const std::vector<double> emb = step_embedding(t, config_.step_embed_dim);
  tp.step_embed = Matrix(emb.size(), 1, emb);
  tp.enc.assign(levels - 1, {});
  tp.dec.assign(levels - 1, {});
  tp.down_in.assign(levels - 1, {});
  tp.up_in.assign(levels - 1, {});

  Matrix h = in_proj_.forward(tp.input);
  std::vector<Matrix> skips(levels - 1);
  for (std::size_t i = 0; i + 1 < levels; ++i) {
    h = enc_[i].forward(h, tp.step_embed, &tp.enc[i]);
    skips[i] = h;
    tp.down_in[i] = downsample(h, pool);
    h = down_[i].forward(tp.down_in[i]);
  }
  h = mid_.forward(h, tp.step_embed, &tp.mid);
  for (std::size_t k = levels - 1; k-- > 0;) {
    tp.up_in[k] = upsample(h, pool);
    Matrix up = up_[k].forward(tp.up_in[k]);
    Matrix cat(up.rows() + skips[k].rows(), up.cols());
    std::copy(up.values().begin(), up.values().end(), cat.data());
    std::copy(skips[k].values().begin(), skips[k].values().end(), cat.data() + up.size());
    h = dec_[k].forward(cat, tp.step_embed, &tp.dec[k]);
  }
  tp.out_in = h;
  const Matrix out = out_proj_.forward(h);
  return out.transposed();
}

void DenoiserUNet::backward(const Tape& tp, const Matrix& d_eps) {
  const std::size_t levels = config_.levels();
  const std::size_t pool = config_.pool_factor;
  if (d_eps.rows() != config_.length || d_eps.cols() != config_.features) {
    throw std::invalid_argument("DenoiserUNet::backward: gradient shape mismatch");
  }
  Matrix dh = out_proj_.backward(tp.out_in, d_eps.transposed());
  std::vector<Matrix> d_skips(levels - 1);
  for (std::size_t k = 0; k + 1 < levels; ++k) {
    const Matrix d_cat = dec_[k].backward(tp.dec[k], tp.step_embed, dh);
    const std::size_t up_rows = config_.channels[k];
    Matrix d_up(up_rows, d_cat.cols());
    Matrix d_skip(d_cat.rows() - up_rows, d_cat.cols());
    std::copy(d_cat.data(), d_cat.data() + d_up.size(), d_up.data());
    std::copy(d_cat.data() + d_up.size(), d_cat.data() + d_cat.size(), d_skip.data());
    d_skips[k] = std::move(d_skip);
    dh = upsample_backward(up_[k].backward(tp.up_in[k], d_up), pool);
  }
  dh = mid_.backward(tp.mid, tp.step_embed, dh);
  for (std::size_t i = levels - 1; i-- > 0;) {
    dh = downsample_backward(down_[i].backward(tp.down_in[i], dh), pool);
    dh += d_skips[i];
    dh = enc_[i].backward(tp.enc[i], tp.step_embed, dh);
  }
  in_proj_.backward(tp.input, dh);
}

ParamList DenoiserUNet::params() {
  ParamList out;
  in_proj_.collect(out);
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    enc_[i].collect(out);
    down_[i].collect(out);
  }
  mid_.collect(out);
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    up_[i].collect(out);
    dec_[i].collect(out);
  }
  out_proj_.collect(out);
  return out;
}

}  // namespace dsdi
