#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dsdi/rng.hpp"
#include "dsdi/tensor.hpp"

namespace dsdi {

/// A trainable tensor and its accumulated gradient.
struct Param {
  Param() = default;
  Param(std::size_t rows, std::size_t cols) : value(rows, cols), grad(rows, cols) {}
  Matrix value;
  Matrix grad;
  void zero_grad() { grad.fill(0.0); }
};

/// Stable, ordered view of a model's parameters. Names are unique per model
/// and define the checkpoint layout.
using ParamList = std::vector<std::pair<std::string, Param*>>;

void zero_grads(const ParamList& params);

/// Dense affine map. Two layouts are supported:
///  - channel-major (`forward`): x is in×L, y = W·x + b is out×L;
///  - token-major (`forward_tokens`): x is N×in, y = x·Wᵀ + b is N×out.
/// `backward*` take the forward input, accumulate parameter gradients and
/// return the input gradient.
class Linear {
public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);

  Matrix forward(const Matrix& x) const;
  Matrix backward(const Matrix& x, const Matrix& dy);
  Matrix forward_tokens(const Matrix& x) const;
  Matrix backward_tokens(const Matrix& x, const Matrix& dy);

  std::size_t in_features() const noexcept { return weight.value.cols(); }
  std::size_t out_features() const noexcept { return weight.value.rows(); }
  void collect(ParamList& out);

  std::string name;
  Param weight;  // out×in
  Param bias;    // out×1
};

/// Normalizes each time column of a channel-major C×L activation across its
/// C channels, then applies a per-channel gain and shift.
class LayerNorm {
public:
  struct Cache {
    Matrix xhat;
    std::vector<double> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(std::string name, std::size_t channels);

  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParamList& out);

  static constexpr double kEps = 1e-5;
  std::string name;
  Param gain;   // C×1
  Param shift;  // C×1
};

/// Batch normalization over token rows (N×F): each feature column is
/// normalized with statistics over all N rows. Running statistics are
/// updated in training mode and used verbatim in inference mode.
class BatchNorm {
public:
  struct Cache {
    Matrix xhat;
    std::vector<double> inv_std;
  };

  BatchNorm() = default;
  BatchNorm(std::string name, std::size_t features);

  Matrix forward_train(const Matrix& x, Cache* cache);
  Matrix forward_eval(const Matrix& x) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParamList& out);

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;
  std::string name;
  Param gain;          // 1×F
  Param shift;         // 1×F
  Param running_mean;  // 1×F, not trained (gradient stays zero)
  Param running_var;   // 1×F, not trained
};

/// Exact GELU x·Φ(x).
double gelu(double x);
double gelu_grad(double x);
Matrix gelu(const Matrix& x);
/// dy ⊙ GELU'(x).
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

}  // namespace dsdi
