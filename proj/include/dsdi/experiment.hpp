#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dsdi/bundle.hpp"
#include "dsdi/config.hpp"
#include "dsdi/data.hpp"
#include "dsdi/evaluation.hpp"
#include "dsdi/masking.hpp"
#include "dsdi/training.hpp"

namespace dsdi {

using Logger = std::function<void(const std::string&)>;

/// Normalized splits plus the raw test/validation windows used as ground truth.
struct PreparedData {
  Dataset train;
  Dataset val;
  Dataset test;
  Dataset val_raw;
  Dataset test_raw;
  ChannelStats stats;
};

/// Loads (csv) or generates (synthetic) the series, splits it
/// chronologically and z-scores it with training statistics.
PreparedData prepare_data(const ExperimentConfig& config);

struct TrainingResult {
  TrainHistory ar;
  TrainHistory denoiser;
};

/// Trains the networks of `bundle` on the prepared splits.
TrainingResult train_bundle(ModelBundle& bundle, const PreparedData& data, bool train_ar,
                            bool train_denoiser, const Logger& log = {});

/// How a split is masked and scored. Window w gets its mask from
/// Rng(mix(mask_seed + w)) so every method sees the same masks.
struct EvalSpec {
  MaskProtocol protocol = MaskProtocol::point;
  double rate = 0.1;
  std::size_t windows = 0;  // 0 = all
  std::uint64_t mask_seed = 0;
  int samples = 1;
};

struct MethodScore {
  std::string method;
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t cells = 0;
  double window_mae_std = 0.0;
  std::vector<double> channel_mae;
  std::vector<double> channel_rmse;
};

/// Evaluation mask of window w: the drawn mask intersected with native presence.
Matrix evaluation_mask(const EvalSpec& spec, std::size_t window, const Matrix& native);

/// Scores the diffusion imputer on `split` (normalized) against `truth`
/// (raw units). Metrics are in original units.
MethodScore score_model(ModelBundle& bundle, const SamplerConfig& sampler, const Dataset& split,
                        const Dataset& truth, const EvalSpec& spec, const std::string& name);

MethodScore score_baseline(Baseline method, const Dataset& split, const Dataset& truth,
                           const ChannelStats& stats, const EvalSpec& spec);

/// Picks λ from `grid` by validation MAE. Returns the winner and the per-λ scores.
std::pair<double, std::vector<MethodScore>> select_lambda(ModelBundle& bundle, const PreparedData& data,
                                                          const std::vector<double>& grid,
                                                          const EvalSpec& spec);

enum class Sweep { none, missing_rate, lambda, steps };
Sweep parse_sweep(const std::string& name);
std::string to_string(Sweep s);

/// The five ablation variants: flag triples (use_condition, use_injection, use_s4).
struct Variant {
  std::string name;
  bool use_condition;
  bool use_injection;
  bool use_s4;
};
const std::vector<Variant>& ablation_variants();

struct EvalRow {
  std::string sweep;  // none | missing-rate | lambda | steps | ablation
  std::string split;  // test | val
  std::string method;
  std::string protocol;
  double rate = 0.0;
  int steps = 0;
  double lambda = 0.0;
  int samples = 1;
  MethodScore score;
};

struct EvalReport {
  std::vector<std::pair<std::string, std::string>> config;
  std::uint64_t seed = 0;
  std::string units = "original (denormalized)";
  double wall_seconds = 0.0;
  std::vector<EvalRow> rows;
};

struct ExperimentOptions {
  Sweep sweep = Sweep::none;
  bool ablation = false;
  /// Optional trained bundle; otherwise models are trained inline.
  std::optional<std::filesystem::path> bundle;
  bool include_baselines = true;
};

/// Trains (or loads) and evaluates according to `options`. Deterministic for a
/// fixed seed apart from wall_seconds.
EvalReport run_experiment(const ExperimentConfig& config, const ExperimentOptions& options,
                          const Logger& log = {});

void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
void write_report_json(const std::filesystem::path& path, const EvalReport& report);

}  // namespace dsdi
