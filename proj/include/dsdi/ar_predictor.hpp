#pragma once

#include <cstdint>
#include <vector>

#include "dsdi/layers.hpp"
#include "dsdi/tensor.hpp"

namespace dsdi {

struct ARConfig {
  std::size_t length = 48;      // L
  std::size_t features = 4;     // D
  std::size_t latent_dim = 32;  // d
  std::size_t heads = 4;        // H, must divide d
  std::size_t blocks = 2;
  std::size_t ffn_hidden = 64;

  std::size_t head_dim() const noexcept { return latent_dim / heads; }
  void validate() const;
};

/// One encoder block: multi-head self-attention with output projection,
/// residual + BatchNorm, feed-forward with residual + BatchNorm.
struct ARBlock {
  Linear query;   // d→d, head h owns columns [h·d_k, (h+1)·d_k)
  Linear key;
  Linear value;
  Linear output;  // W^O
  BatchNorm norm_attn;
  Linear ffn_in;
  Linear ffn_out;
  BatchNorm norm_ffn;

  void collect(ParamList& out);
};

/// Non-autoregressive transformer producing z_ar for every (time, channel)
/// position of a window in one pass. Tokens are time steps; a token's input
/// is [x_known ⊙ mask ; mask] (2D values).
class ARPredictor {
public:
  struct BlockTape {
    Matrix x;                             // block input, N×d
    Matrix q, k, v;                       // N×d
    std::vector<Matrix> probs;            // [window·H + h] → L×L attention weights
    Matrix heads;                         // concatenated head outputs, N×d
    BatchNorm::Cache norm_attn;
    Matrix attn_out;                      // after first norm
    Matrix ffn_pre;
    Matrix ffn_act;
    BatchNorm::Cache norm_ffn;
  };
  struct Tape {
    std::size_t batch = 0;
    Matrix tokens;                        // N×2D
    std::vector<BlockTape> blocks;
    Matrix z;                             // final representation, N×d
    Matrix projected;                     // N×D, before the time-mixing head
  };

  explicit ARPredictor(ARConfig config, std::uint64_t seed = 0);

  /// Token embedding of one window: W_p·[x_known⊙mask ; mask] + W_pos (L×d).
  Matrix embed(const Matrix& x_known, const Matrix& mask) const;

  /// Attention weights of head `h` in block `b` for token matrix x (L×d) of
  /// one window: Softmax(Q_h K_hᵀ / √d_k).
  Matrix attention_weights(const Matrix& x, std::size_t b, std::size_t h) const;

  /// Concat(O_1..O_H)·W^O for one window (before normalization and FFN).
  Matrix attention_output(const Matrix& x, std::size_t b) const;

  /// Full block b (attention, norms, FFN) for one window in inference mode.
  Matrix multi_head_attention(const Matrix& x, std::size_t b) const;

  /// Batched forward. `x_known` and `mask` hold B windows of L×D. With
  /// `training` set, BatchNorm uses batch statistics over batch×time and
  /// updates its running statistics; otherwise running statistics are used.
  std::vector<Matrix> forward(const std::vector<Matrix>& x_known, const std::vector<Matrix>& mask,
                              bool training, Tape* tape = nullptr);
  /// Single-window inference.
  Matrix predict(const Matrix& x_known, const Matrix& mask);

  /// Accumulates gradients for dLoss/dz_ar (one L×D matrix per window).
  void backward(const Tape& tape, const std::vector<Matrix>& d_out);

  ParamList params();
  const ARConfig& config() const noexcept { return config_; }

  Linear embed_proj;      // W_p: 2D→d
  Param positional;       // W_pos: L×d
  std::vector<ARBlock> blocks;
  Linear head_proj;       // d→D per token
  Param head_time;        // (D·L)×L: channel c mixes time with rows [c·L, (c+1)·L)
  Param head_bias;        // L×D

private:
  Matrix block_forward(const Matrix& x, std::size_t b, std::size_t batch, bool training,
                       BlockTape* tape);
  Matrix block_backward(const BlockTape& tape, std::size_t b, std::size_t batch, const Matrix& dy);
  Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t batch,
                   std::vector<Matrix>* probs) const;

  ARConfig config_;
};

/// Mean squared error over positions where `train_mask` is 1. Throws
/// std::invalid_argument when no position is selected.
double ar_loss(const Matrix& z_ar, const Matrix& x0, const Matrix& train_mask);

}  // namespace dsdi
