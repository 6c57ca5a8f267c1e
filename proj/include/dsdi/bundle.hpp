#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "dsdi/ar_predictor.hpp"
#include "dsdi/config.hpp"
#include "dsdi/data.hpp"
#include "dsdi/diffusion.hpp"
#include "dsdi/rng.hpp"
#include "dsdi/sampler.hpp"
#include "dsdi/unet.hpp"

namespace dsdi {

/// Everything needed to impute: both networks, the schedule they were
/// trained with and the normalization statistics.
struct ModelBundle {
  ExperimentConfig config;
  NoiseSchedule schedule;
  ChannelStats stats;
  std::unique_ptr<DenoiserUNet> denoiser;
  std::unique_ptr<ARPredictor> ar;

  /// Freshly initialized networks for `config` (seeded from config.seed).
  static ModelBundle create(const ExperimentConfig& config, ChannelStats stats);
};

inline constexpr std::uint32_t kBundleVersion = 1;

/// Binary container: magic "DSDIBNDL", version, endianness marker, config
/// pairs, fingerprint, named little-endian float64 tensors, FNV-1a checksum.
void save_bundle(ModelBundle& bundle, const std::filesystem::path& path);

/// Throws DataError on a truncated, corrupted or foreign file, and
/// ConfigError when `expected_fingerprint` is given and differs.
ModelBundle load_bundle(const std::filesystem::path& path,
                        const std::string& expected_fingerprint = {});

/// z_ar for one normalized window.
Matrix ar_estimate(ModelBundle& bundle, const Matrix& x_known, const Matrix& mask);

/// Imputation of one normalized window: z_ar once, then `samples` sampler
/// draws averaged (draw k uses rng.split(k)).
Matrix impute_window(ModelBundle& bundle, const Matrix& x_known, const Matrix& mask,
                     const SamplerConfig& sampler, const Rng& rng, int samples = 1);

}  // namespace dsdi
