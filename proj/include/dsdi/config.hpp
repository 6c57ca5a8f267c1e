#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dsdi/ar_predictor.hpp"
#include "dsdi/diffusion.hpp"
#include "dsdi/masking.hpp"
#include "dsdi/sampler.hpp"
#include "dsdi/training.hpp"
#include "dsdi/unet.hpp"

namespace dsdi {

using KeyValues = std::map<std::string, std::string>;

/// Flat `key = value` text; blank lines and `#` comments are skipped.
/// Throws ConfigError on a line without '=' or a repeated key.
KeyValues read_key_values(const std::filesystem::path& path);

/// Every knob of a run. All keys have defaults; `to_pairs` echoes them in a
/// fixed order for reports and checkpoints.
struct ExperimentConfig {
  // data
  std::string data_source = "synthetic";  // synthetic | csv
  std::string data_path;
  std::size_t synth_windows = 2000;
  std::size_t length = 48;
  std::size_t features = 4;
  double train_frac = 0.7;
  double val_frac = 0.15;
  std::uint64_t seed = 7;

  // diffusion
  int steps = 100;
  double beta_start = kDefaultBetaStart;
  double beta_end = 0.0;  // 0 = default_beta_end(steps)

  // denoiser
  std::vector<std::size_t> channels{32, 64, 128};
  std::size_t pool_factor = 2;
  std::size_t step_embed_dim = 32;
  std::size_t state_dim = 16;
  std::size_t mlp_ratio = 2;
  bool use_s4 = true;
  bool use_condition = true;
  bool use_injection = true;

  // AR predictor
  std::size_t ar_latent_dim = 32;
  std::size_t ar_heads = 4;
  std::size_t ar_blocks = 2;
  std::size_t ar_ffn_hidden = 64;

  TrainConfig train;

  // sampler
  double n0 = 1.0;
  double lambda = 0.0;  // 0 = auto: picked from lambda_grid on the validation split
  PriorKind prior = PriorKind::diffused_known;
  bool noise_ar = false;
  int samples = 1;

  // evaluation
  MaskProtocol eval_mask = MaskProtocol::point;
  double eval_rate = 0.1;
  std::size_t eval_windows = 0;  // 0 = whole test split
  std::vector<double> lambda_grid{0.01, 0.05, 0.1, 0.5};
  std::vector<double> rate_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<int> steps_grid{10, 50, 100};

  /// Defaults overridden by `kv`. Unknown keys and bad values raise ConfigError.
  static ExperimentConfig from_pairs(const KeyValues& kv);
  static ExperimentConfig from_file(const std::filesystem::path& path);
  /// Applies overrides in place.
  void apply(const KeyValues& kv);
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  void validate() const;

  UNetConfig unet() const;
  ARConfig ar() const;
  NoiseSchedule schedule() const;
  /// Throws ConfigError while lambda is still auto.
  SamplerConfig sampler() const;

  /// Digest of the keys that shape the model parameters.
  std::string fingerprint() const;
};

/// FNV-1a 64-bit.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace dsdi
