#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dsdi/layers.hpp"
#include "dsdi/s4.hpp"
#include "dsdi/tensor.hpp"

namespace dsdi {

/// Topology of the multi-scale denoiser ε_θ(x_t, t, x_known).
struct UNetConfig {
  std::size_t length = 48;               // L
  std::size_t features = 4;              // D
  int diffusion_steps = 100;             // T; valid step inputs are [1, T]
  std::vector<std::size_t> channels{32, 64, 128};  // one width per level
  std::size_t pool_factor = 2;
  std::size_t step_embed_dim = 32;
  std::size_t state_dim = 16;            // S4 state size N
  std::size_t mlp_ratio = 2;             // block MLP hidden = ratio × block output width
  bool use_s4 = true;                    // false: depthwise 3-tap convolution instead of S4

  std::size_t levels() const noexcept { return channels.size(); }
  /// Throws std::invalid_argument when the topology is unusable.
  void validate() const;
};

/// Sinusoidal embedding of a diffusion step (dimension `dim`, even).
std::vector<double> step_embedding(int t, std::size_t dim);

/// Strided average pooling along time: C×L → C×(L/factor).
Matrix downsample(const Matrix& x, std::size_t factor);
Matrix downsample_backward(const Matrix& dy, std::size_t factor);
/// Nearest-neighbour repeat along time: C×L → C×(L·factor).
Matrix upsample(const Matrix& x, std::size_t factor);
Matrix upsample_backward(const Matrix& dy, std::size_t factor);

/// Depthwise 3-tap temporal convolution with zero padding; the local
/// sequence mixer used when S4 is disabled.
class LocalConv {
public:
  LocalConv() = default;
  LocalConv(std::string name, std::size_t channels, Rng& rng);
  Matrix forward(const Matrix& x) const;
  Matrix backward(const Matrix& x, const Matrix& dy);
  void collect(ParamList& out);

  std::string name;
  Param weight;  // C×3 taps for t−1, t, t+1
  Param bias;    // C×1
};

/// Temporal S4 block:
///   y = LayerNorm(x) + step modulation
///   y = S4(y) (forward scan + backward scan), y = GELU(y)
///   y = MLP(y),  out = y + Linear(x)
class TemS4Block {
public:
  struct Cache {
    Matrix x;
    LayerNorm::Cache norm;
    Matrix mixer_in;
    S4Layer::Cache s4_fwd;
    S4Layer::Cache s4_bwd;
    Matrix mixed;
    Matrix activated;
    Matrix hidden_pre;
    Matrix hidden;
  };

  TemS4Block() = default;
  TemS4Block(const std::string& name, std::size_t in_channels, std::size_t out_channels,
             std::size_t mlp_hidden, std::size_t embed_dim, std::size_t state_dim, bool use_s4,
             Rng& rng);

  Matrix forward(const Matrix& x, const Matrix& step_embed, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& step_embed, const Matrix& dy);
  void collect(ParamList& out);

  bool use_s4 = true;
  LayerNorm norm;
  Linear step_proj;
  S4Layer s4_fwd;
  S4Layer s4_bwd;
  LocalConv local;
  Linear mlp_in;
  Linear mlp_out;
  Linear residual;
};

/// Multi-scale TemS4 U-Net noise predictor. Inputs are time-major L×D
/// windows; the conditioning channels [x_known ⊙ mask ; mask] are
/// concatenated with x_t at the input layer.
class DenoiserUNet {
public:
  struct Tape {
    Matrix input;
    Matrix step_embed;
    std::vector<TemS4Block::Cache> enc;
    std::vector<Matrix> down_in;  // pooled activations fed to each down projection
    TemS4Block::Cache mid;
    std::vector<Matrix> up_in;    // repeated activations fed to each up projection
    std::vector<TemS4Block::Cache> dec;
    Matrix out_in;
  };

  explicit DenoiserUNet(UNetConfig config, std::uint64_t seed = 0);

  /// ε̂ for one window. `tape` may be null when no backward pass follows.
  Matrix forward(const Matrix& x_t, int t, const Matrix& x_known, const Matrix& mask,
                 Tape* tape = nullptr) const;
  /// Accumulates parameter gradients for dLoss/dε̂ = `d_eps` (L×D).
  void backward(const Tape& tape, const Matrix& d_eps);

  ParamList params();
  const UNetConfig& config() const noexcept { return config_; }

private:
  Matrix assemble_input(const Matrix& x_t, const Matrix& x_known, const Matrix& mask) const;

  UNetConfig config_;
  Linear in_proj_;
  std::vector<TemS4Block> enc_;
  std::vector<Linear> down_;
  TemS4Block mid_;
  std::vector<Linear> up_;
  std::vector<TemS4Block> dec_;
  Linear out_proj_;
};

}  // namespace dsdi
