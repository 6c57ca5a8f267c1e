#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "dsdi/ar_predictor.hpp"
#include "dsdi/data.hpp"
#include "dsdi/diffusion.hpp"
#include "dsdi/layers.hpp"
#include "dsdi/masking.hpp"
#include "dsdi/unet.hpp"

namespace dsdi {

struct TrainConfig {
  double lr = 3e-6;
  std::size_t batch_size = 32;
  int max_epochs = 120;
  int patience = 10;
  std::uint64_t seed = 0;
  /// Conditioning masks are drawn per window from this protocol.
  MaskProtocol mask_protocol = MaskProtocol::point;
  double mask_rate = 0.1;
  /// Denoiser sees known values and mask; off trains an unconditional model.
  bool use_condition = true;
  /// AR pretraining: share of observed cells hidden from the input, and the
  /// weight of the reconstruction term on cells left visible.
  double ar_hide_fraction = 0.15;
  /// Protocol rate for the AR pretraining masks; separate from the denoiser's.
  double ar_mask_rate = 0.1;
  double ar_visible_weight = 0.1;

  void validate() const;
};

/// Adam with bias correction. Parameters whose name contains "running_"
/// (normalization statistics) are left alone.
class Adam {
public:
  Adam(ParamList params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step();
  double lr;

private:
  ParamList params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  double beta1_, beta2_, eps_;
  long steps_ = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val = 0.0;
  bool stopped_early = false;
};

/// Model-agnostic epoch loop with early stopping on validation loss.
struct TrainLoop {
  std::function<double(int epoch)> train_epoch;  // returns mean training loss
  std::function<double(int epoch)> validate;
  std::function<void()> save_best;
  std::function<void()> restore_best;
  std::function<void(const EpochRecord&)> on_epoch;  // optional
};

/// Runs up to `max_epochs`; stops once `patience` consecutive epochs fail
/// to improve the best validation loss, then restores the best state.
/// A non-finite loss raises NumericError.
TrainHistory run_training(const TrainLoop& loop, int max_epochs, int patience);

/// Noise-prediction training of the denoiser. Each window gets t ~ U{1..T},
/// ε ~ N(0, I) and a fresh conditioning mask (intersected with the native
/// mask). Validation uses the same fixed draws every epoch.
TrainHistory train_denoiser(DenoiserUNet& model, const NoiseSchedule& sched, const Dataset& train,
                            const Dataset& val, const TrainConfig& cfg,
                            std::function<void(const EpochRecord&)> on_epoch = {});

/// Mean denoiser loss over a dataset with draws from `seed`.
double denoiser_loss(const DenoiserUNet& model, const NoiseSchedule& sched, const Dataset& ds,
                     const TrainConfig& cfg, std::uint64_t seed);

/// Self-supervised AR pretraining: hide part of the observed cells and fit
/// them, with a down-weighted term on the cells left visible.
TrainHistory pretrain_ar(ARPredictor& model, const Dataset& train, const Dataset& val,
                         const TrainConfig& cfg,
                         std::function<void(const EpochRecord&)> on_epoch = {});

/// Mean masked AR loss (hidden cells only) over a dataset with draws from `seed`.
double ar_validation_loss(ARPredictor& model, const Dataset& ds, const TrainConfig& cfg,
                          std::uint64_t seed);

/// "epoch,train_loss,val_loss" rows.
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

}  // namespace dsdi
