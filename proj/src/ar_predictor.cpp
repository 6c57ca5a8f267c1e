#include "dsdi/ar_predictor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dsdi/kernels.hpp"

namespace dsdi {

void ARConfig::validate() const {
  if (length == 0 || features == 0) throw std::invalid_argument("ARConfig: L and D must be positive");
  if (latent_dim == 0 || heads == 0 || latent_dim % heads != 0) {
    throw std::invalid_argument("ARConfig: heads must divide latent_dim");
  }
  if (blocks == 0 || ffn_hidden == 0) throw std::invalid_argument("ARConfig: zero blocks/ffn_hidden");
}

void ARBlock::collect(ParamList& out) {
  query.collect(out);
  key.collect(out);
  value.collect(out);
  output.collect(out);
  norm_attn.collect(out);
  ffn_in.collect(out);
  ffn_out.collect(out);
  norm_ffn.collect(out);
}

ARPredictor::ARPredictor(ARConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.latent_dim;
  const std::size_t len = config_.length;
  const std::size_t feat = config_.features;
  embed_proj = Linear("ar.embed", 2 * feat, d, rng);
  positional = Param(len, d);
  // sinusoidal start (still trained) so attention can find neighbours early
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(j / 2 * 2) / static_cast<double>(d));
      positional.value(t, j) = j % 2 == 0 ? std::sin(t * freq) : std::cos(t * freq);
    }
  }
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    const std::string p = "ar.block" + std::to_string(b);
    ARBlock blk;
    blk.query = Linear(p + ".query", d, d, rng);
    blk.key = Linear(p + ".key", d, d, rng);
    blk.value = Linear(p + ".value", d, d, rng);
    blk.output = Linear(p + ".output", d, d, rng);
    blk.norm_attn = BatchNorm(p + ".norm_attn", d);
    blk.ffn_in = Linear(p + ".ffn_in", d, config_.ffn_hidden, rng);
    blk.ffn_out = Linear(p + ".ffn_out", config_.ffn_hidden, d, rng);
    blk.norm_ffn = BatchNorm(p + ".norm_ffn", d);
    blocks.push_back(std::move(blk));
  }
  head_proj = Linear("ar.head_proj", d, feat, rng);
  head_time = Param(feat * len, len);
  // Start the time mixer at identity so early training sees a per-token head.
  for (std::size_t c = 0; c < feat; ++c) {
    for (std::size_t t = 0; t < len; ++t) head_time.value(c * len + t, t) = 1.0;
  }
  head_bias = Param(len, feat);
}

namespace {

Matrix window_tokens(const Matrix& x_known, const Matrix& mask, std::size_t len, std::size_t feat) {
  if (x_known.rows() != len || x_known.cols() != feat) {
    throw std::invalid_argument("ARPredictor: window must be " + std::to_string(len) + "x" +
                                std::to_string(feat));
  }
  require_same_shape(x_known, mask, "ARPredictor mask");
  Matrix tok(len, 2 * feat);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t c = 0; c < feat; ++c) {
      tok(t, c) = x_known(t, c) * mask(t, c);
      tok(t, feat + c) = mask(t, c);
    }
  }
  return tok;
}

void softmax_rows(Matrix& s) {
  for (std::size_t i = 0; i < s.rows(); ++i) {
    auto r = s.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : r) v /= sum;
  }
}

// Rows [w·L, (w+1)·L) and columns [h·dk, (h+1)·dk) of a token matrix.
Matrix slice(const Matrix& m, std::size_t w, std::size_t len, std::size_t h, std::size_t dk) {
  Matrix out(len, dk);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t j = 0; j < dk; ++j) out(t, j) = m(w * len + t, h * dk + j);
  }
  return out;
}

void unslice_add(Matrix& m, const Matrix& part, std::size_t w, std::size_t len, std::size_t h,
                 std::size_t dk) {
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t j = 0; j < dk; ++j) m(w * len + t, h * dk + j) += part(t, j);
  }
}

}  // namespace

Matrix ARPredictor::embed(const Matrix& x_known, const Matrix& mask) const {
  Matrix x = embed_proj.forward_tokens(window_tokens(x_known, mask, config_.length, config_.features));
  x += positional.value;
  return x;
}

Matrix ARPredictor::attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t batch,
                              std::vector<Matrix>* probs) const {
  const std::size_t len = config_.length;
  const std::size_t heads = config_.heads;
  const std::size_t dk = config_.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Matrix out(q.rows(), q.cols());
  if (probs) probs->assign(batch * heads, {});
  for (std::size_t w = 0; w < batch; ++w) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix qh = slice(q, w, len, h, dk);
      const Matrix kh = slice(k, w, len, h, dk);
      const Matrix vh = slice(v, w, len, h, dk);
      Matrix s(len, len);
      kernels::gemm_nt(qh, kh, s);
      for (std::size_t i = 0; i < s.size(); ++i) s[i] *= scale;
      softmax_rows(s);
      Matrix oh(len, dk);
      kernels::gemm_nn(s, vh, oh);
      unslice_add(out, oh, w, len, h, dk);
      if (probs) (*probs)[w * heads + h] = std::move(s);
    }
  }
  return out;
}

Matrix ARPredictor::attention_weights(const Matrix& x, std::size_t b, std::size_t h) const {
  const ARBlock& blk = blocks.at(b);
  const Matrix q = blk.query.forward_tokens(x);
  const Matrix k = blk.key.forward_tokens(x);
  const std::size_t dk = config_.head_dim();
  Matrix s(x.rows(), x.rows());
  kernels::gemm_nt(slice(q, 0, x.rows(), h, dk), slice(k, 0, x.rows(), h, dk), s);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] *= scale;
  softmax_rows(s);
  return s;
}

Matrix ARPredictor::attention_output(const Matrix& x, std::size_t b) const {
  const ARBlock& blk = blocks.at(b);
  const Matrix heads = attention(blk.query.forward_tokens(x), blk.key.forward_tokens(x),
                                 blk.value.forward_tokens(x), 1, nullptr);
  return blk.output.forward_tokens(heads);
}

Matrix ARPredictor::multi_head_attention(const Matrix& x, std::size_t b) const {
  const ARBlock& blk = blocks.at(b);
  Matrix a = x;
  a += attention_output(x, b);
  const Matrix a_norm = blk.norm_attn.forward_eval(a);
  Matrix f = blk.ffn_out.forward_tokens(gelu(blk.ffn_in.forward_tokens(a_norm)));
  f += a_norm;
  return blk.norm_ffn.forward_eval(f);
}

Matrix ARPredictor::block_forward(const Matrix& x, std::size_t b, std::size_t batch, bool training,
                                  BlockTape* tape) {
  ARBlock& blk = blocks[b];
  Matrix q = blk.query.forward_tokens(x);
  Matrix k = blk.key.forward_tokens(x);
  Matrix v = blk.value.forward_tokens(x);
  Matrix heads = attention(q, k, v, batch, tape ? &tape->probs : nullptr);
  Matrix a = x;
  a += blk.output.forward_tokens(heads);
  Matrix a_norm = training ? blk.norm_attn.forward_train(a, tape ? &tape->norm_attn : nullptr)
                           : blk.norm_attn.forward_eval(a);
  Matrix ffn_pre = blk.ffn_in.forward_tokens(a_norm);
  Matrix ffn_act = gelu(ffn_pre);
  Matrix f = blk.ffn_out.forward_tokens(ffn_act);
  f += a_norm;
  Matrix out = training ? blk.norm_ffn.forward_train(f, tape ? &tape->norm_ffn : nullptr)
                        : blk.norm_ffn.forward_eval(f);
  if (tape) {
    tape->x = x;
    tape->q = std::move(q);
    tape->k = std::move(k);
    tape->v = std::move(v);
    tape->heads = std::move(heads);
    tape->attn_out = std::move(a_norm);
    tape->ffn_pre = std::move(ffn_pre);
    tape->ffn_act = std::move(ffn_act);
  }
  return out;
}

std::vector<Matrix> ARPredictor::forward(const std::vector<Matrix>& x_known,
                                         const std::vector<Matrix>& mask, bool training,
                                         Tape* tape) {
  if (x_known.size() != mask.size() || x_known.empty()) {
    throw std::invalid_argument("ARPredictor::forward: need equally many windows and masks");
  }
  if (tape && !training) throw std::invalid_argument("ARPredictor::forward: tape requires training mode");
  const std::size_t batch = x_known.size();
  const std::size_t len = config_.length;
  const std::size_t feat = config_.features;
  const std::size_t d = config_.latent_dim;

  Matrix tokens(batch * len, 2 * feat);
  for (std::size_t w = 0; w < batch; ++w) {
    const Matrix tok = window_tokens(x_known[w], mask[w], len, feat);
    std::copy(tok.values().begin(), tok.values().end(), tokens.data() + w * tok.size());
  }
  Matrix x = embed_proj.forward_tokens(tokens);
  for (std::size_t w = 0; w < batch; ++w) {
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t j = 0; j < d; ++j) x(w * len + t, j) += positional.value(t, j);
    }
  }
  if (tape) {
    tape->batch = batch;
    tape->tokens = std::move(tokens);
    tape->blocks.assign(blocks.size(), {});
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    x = block_forward(x, b, batch, training, tape ? &tape->blocks[b] : nullptr);
  }
  Matrix projected = head_proj.forward_tokens(x);

  std::vector<Matrix> out(batch, Matrix(len, feat));
  for (std::size_t w = 0; w < batch; ++w) {
    for (std::size_t c = 0; c < feat; ++c) {
      for (std::size_t t = 0; t < len; ++t) {
        double s = head_bias.value(t, c);
        const double* mrow = head_time.value.data() + (c * len + t) * len;
        for (std::size_t u = 0; u < len; ++u) s += mrow[u] * projected(w * len + u, c);
        out[w](t, c) = s;
      }
    }
  }
  if (tape) {
    tape->z = std::move(x);
    tape->projected = std::move(projected);
  }
  return out;
}

Matrix ARPredictor::predict(const Matrix& x_known, const Matrix& mask) {
  return forward({x_known}, {mask}, false).front();
}

Matrix ARPredictor::block_backward(const BlockTape& tp, std::size_t b, std::size_t batch,
                                   const Matrix& dy) {
  ARBlock& blk = blocks[b];
  const std::size_t len = config_.length;
  const std::size_t heads = config_.heads;
  const std::size_t dk = config_.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  const Matrix d_f = blk.norm_ffn.backward(tp.norm_ffn, dy);
  Matrix d_anorm = d_f;  // residual path
  const Matrix d_act = blk.ffn_out.backward_tokens(tp.ffn_act, d_f);
  d_anorm += blk.ffn_in.backward_tokens(tp.attn_out, gelu_backward(tp.ffn_pre, d_act));
  const Matrix d_a = blk.norm_attn.backward(tp.norm_attn, d_anorm);

  Matrix dx = d_a;  // residual path
  const Matrix d_heads = blk.output.backward_tokens(tp.heads, d_a);
  Matrix dq(tp.q.rows(), tp.q.cols()), dk_m(tp.k.rows(), tp.k.cols()), dv(tp.v.rows(), tp.v.cols());
  for (std::size_t w = 0; w < batch; ++w) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix& p = tp.probs[w * heads + h];
      const Matrix qh = slice(tp.q, w, len, h, dk);
      const Matrix kh = slice(tp.k, w, len, h, dk);
      const Matrix vh = slice(tp.v, w, len, h, dk);
      const Matrix doh = slice(d_heads, w, len, h, dk);
      Matrix dp(len, len);
      kernels::gemm_nt(doh, vh, dp);
      Matrix dvh(len, dk);
      kernels::gemm_tn(p, doh, dvh);
      // softmax backward, folded with the 1/√d_k score scale
      Matrix ds(len, len);
      for (std::size_t i = 0; i < len; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += dp(i, j) * p(i, j);
        for (std::size_t j = 0; j < len; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
      }
      Matrix dqh(len, dk), dkh(len, dk);
      kernels::gemm_nn(ds, kh, dqh);
      kernels::gemm_tn(ds, qh, dkh);
      unslice_add(dq, dqh, w, len, h, dk);
      unslice_add(dk_m, dkh, w, len, h, dk);
      unslice_add(dv, dvh, w, len, h, dk);
    }
  }
  dx += blk.query.backward_tokens(tp.x, dq);
  dx += blk.key.backward_tokens(tp.x, dk_m);
  dx += blk.value.backward_tokens(tp.x, dv);
  return dx;
}

void ARPredictor::backward(const Tape& tp, const std::vector<Matrix>& d_out) {
  const std::size_t batch = tp.batch;
  const std::size_t len = config_.length;
  const std::size_t feat = config_.features;
  if (d_out.size() != batch) throw std::invalid_argument("ARPredictor::backward: batch mismatch");

  Matrix d_proj(batch * len, feat);
  for (std::size_t w = 0; w < batch; ++w) {
    for (std::size_t c = 0; c < feat; ++c) {
      for (std::size_t t = 0; t < len; ++t) {
        const double g = d_out[w](t, c);
        head_bias.grad(t, c) += g;
        double* grow = head_time.grad.data() + (c * len + t) * len;
        const double* mrow = head_time.value.data() + (c * len + t) * len;
        for (std::size_t u = 0; u < len; ++u) {
          grow[u] += g * tp.projected(w * len + u, c);
          d_proj(w * len + u, c) += g * mrow[u];
        }
      }
    }
  }
  Matrix dx = head_proj.backward_tokens(tp.z, d_proj);
  for (std::size_t b = blocks.size(); b-- > 0;) {
    dx = block_backward(tp.blocks[b], b, batch, dx);
  }
  for (std::size_t w = 0; w < batch; ++w) {
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t j = 0; j < dx.cols(); ++j) positional.grad(t, j) += dx(w * len + t, j);
    }
  }
  embed_proj.backward_tokens(tp.tokens, dx);
}

ParamList ARPredictor::params() {
  ParamList out;
  embed_proj.collect(out);
  out.emplace_back("ar.positional", &positional);
  for (auto& blk : blocks) blk.collect(out);
  head_proj.collect(out);
  out.emplace_back("ar.head_time", &head_time);
  out.emplace_back("ar.head_bias", &head_bias);
  return out;
}

double ar_loss(const Matrix& z_ar, const Matrix& x0, const Matrix& train_mask) {
  require_same_shape(z_ar, x0, "ar_loss");
  require_same_shape(z_ar, train_mask, "ar_loss mask");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < z_ar.size(); ++i) {
    if (train_mask[i] != 0.0) {
      const double d = z_ar[i] - x0[i];
      s += d * d;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("ar_loss: empty train mask (degenerate batch)");
  return s / static_cast<double>(n);
}

}  // namespace dsdi
