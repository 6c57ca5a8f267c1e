#include "dsdi/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <stdexcept>
#include <string>

#include "dsdi/error.hpp"
#include "dsdi/rng.hpp"

namespace dsdi {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (patience < 1 || patience > max_epochs) throw ConfigError("patience must lie in [1, max_epochs]");
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must lie in (0, 1)");
  if (!(ar_mask_rate > 0.0 && ar_mask_rate < 1.0)) throw ConfigError("ar_mask_rate must lie in (0, 1)");
  if (!(ar_hide_fraction > 0.0 && ar_hide_fraction < 1.0)) {
    throw ConfigError("ar_hide_fraction must lie in (0, 1)");
  }
  if (ar_visible_weight < 0.0) throw ConfigError("ar_visible_weight must be non-negative");
}

Adam::Adam(ParamList params, double lr_, double beta1, double beta2, double eps)
    : lr(lr_), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& [name, p] : params) {
    if (name.find("running_") != std::string::npos) continue;
    params_.emplace_back(name, p);
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void Adam::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Param& p = *params_[k].second;
    Matrix& m = m_[k];
    Matrix& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

TrainHistory run_training(const TrainLoop& loop, int max_epochs, int patience) {
  TrainHistory h;
  h.best_val = INFINITY;
  int stale = 0;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    EpochRecord rec{epoch, loop.train_epoch(epoch), 0.0};
    if (!std::isfinite(rec.train_loss)) {
      throw NumericError("training loss is not finite at epoch " + std::to_string(epoch));
    }
    rec.val_loss = loop.validate(epoch);
    if (!std::isfinite(rec.val_loss)) {
      throw NumericError("validation loss is not finite at epoch " + std::to_string(epoch));
    }
    h.epochs.push_back(rec);
    if (loop.on_epoch) loop.on_epoch(rec);
    if (rec.val_loss < h.best_val) {
      h.best_val = rec.val_loss;
      h.best_epoch = epoch;
      stale = 0;
      if (loop.save_best) loop.save_best();
    } else if (++stale >= patience) {
      h.stopped_early = epoch < max_epochs;
      break;
    }
  }
  if (loop.restore_best) loop.restore_best();
  return h;
}

namespace {

std::vector<Matrix> snapshot(const ParamList& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const auto& entry : params) out.push_back(entry.second->value);
  return out;
}

void restore(const ParamList& params, const std::vector<Matrix>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].second->value = saved[i];
}

void require_shape(const Dataset& ds, std::size_t l, std::size_t d, const char* what) {
  if (ds.size() == 0) throw DataError(std::string(what) + " split is empty");
  if (ds.length() != l || ds.features() != d) {
    throw ConfigError(std::string(what) + " windows are " + std::to_string(ds.length()) + "x" +
                      std::to_string(ds.features()) + ", model expects " + std::to_string(l) + "x" +
                      std::to_string(d));
  }
}

// One denoiser training example.
struct DenoiserDraw {
  int t;
  Matrix noise;
  Matrix cond_mask;
};

DenoiserDraw draw_denoiser_example(const Matrix& native, int steps, const TrainConfig& cfg, Rng& rng) {
  DenoiserDraw d;
  d.t = static_cast<int>(rng.uniform_int(1, steps));
  d.noise = rng.normal_matrix(native.rows(), native.cols());
  const Matrix m = draw_mask(cfg.mask_protocol, native.rows(), native.cols(), cfg.mask_rate, rng);
  d.cond_mask = cfg.use_condition ? mask_and(m, native) : Matrix(native.rows(), native.cols());
  return d;
}

constexpr std::uint64_t kValidationStream = 0x76616c6964ULL;

}  // namespace

double denoiser_loss(const DenoiserUNet& model, const NoiseSchedule& sched, const Dataset& ds,
                     const TrainConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t w = 0; w < ds.size(); ++w) {
    const DenoiserDraw d = draw_denoiser_example(ds.native_mask[w], sched.steps(), cfg, rng);
    const Matrix& x0 = ds.windows[w];
    const Matrix xt = forward_sample(x0, d.t, d.noise, sched);
    const Matrix eps = model.forward(xt, d.t, hadamard(x0, d.cond_mask), d.cond_mask);
    total += noise_prediction_loss(d.noise, eps);
  }
  return total / static_cast<double>(ds.size());
}

TrainHistory train_denoiser(DenoiserUNet& model, const NoiseSchedule& sched, const Dataset& train,
                            const Dataset& val, const TrainConfig& cfg,
                            std::function<void(const EpochRecord&)> on_epoch) {
  cfg.validate();
  const UNetConfig& uc = model.config();
  require_shape(train, uc.length, uc.features, "training");
  require_shape(val, uc.length, uc.features, "validation");
  if (sched.steps() != uc.diffusion_steps) throw ConfigError("schedule length differs from the model's T");

  const ParamList params = model.params();
  Adam opt(params, cfg.lr);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Matrix> best;
  const std::uint64_t val_seed = Rng::mix(cfg.seed ^ kValidationStream);

  TrainLoop loop;
  loop.train_epoch = [&](int) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      zero_grads(params);
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t w = order[k];
        const DenoiserDraw d = draw_denoiser_example(train.native_mask[w], sched.steps(), cfg, rng);
        const Matrix& x0 = train.windows[w];
        const Matrix xt = forward_sample(x0, d.t, d.noise, sched);
        DenoiserUNet::Tape tape;
        const Matrix eps = model.forward(xt, d.t, hadamard(x0, d.cond_mask), d.cond_mask, &tape);
        total += noise_prediction_loss(d.noise, eps);
        Matrix grad = eps - d.noise;
        const double g = 2.0 * scale / static_cast<double>(grad.size());
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= g;
        model.backward(tape, grad);
      }
      opt.step();
    }
    return total / static_cast<double>(order.size());
  };
  loop.validate = [&](int) { return denoiser_loss(model, sched, val, cfg, val_seed); };
  loop.save_best = [&] { best = snapshot(params); };
  loop.restore_best = [&] {
    if (!best.empty()) restore(params, best);
  };
  loop.on_epoch = std::move(on_epoch);
  return run_training(loop, cfg.max_epochs, cfg.patience);
}

namespace {

struct ArBatch {
  std::vector<Matrix> input;
  std::vector<Matrix> visible;
  std::vector<Matrix> hidden;
};

ArBatch draw_ar_batch(const Dataset& ds, const std::vector<std::size_t>& idx, const TrainConfig& cfg,
                      Rng& rng) {
  ArBatch b;
  for (std::size_t w : idx) {
    const Matrix& native = ds.native_mask[w];
    const Matrix observed =
        mask_and(draw_mask(cfg.mask_protocol, native.rows(), native.cols(), cfg.ar_mask_rate, rng), native);
    Matrix visible = observed;
    Matrix hidden(native.rows(), native.cols());
    for (std::size_t i = 0; i < visible.size(); ++i) {
      if (observed[i] != 0.0 && rng.uniform() < cfg.ar_hide_fraction) {
        visible[i] = 0.0;
        hidden[i] = 1.0;
      }
    }
    b.input.push_back(hadamard(ds.windows[w], visible));
    b.visible.push_back(std::move(visible));
    b.hidden.push_back(std::move(hidden));
  }
  return b;
}

double count_ones(const std::vector<Matrix>& ms) {
  double n = 0.0;
  for (const Matrix& m : ms)
    for (double v : m.values()) n += v;
  return n;
}

}  // namespace

double ar_validation_loss(ARPredictor& model, const Dataset& ds, const TrainConfig& cfg,
                          std::uint64_t seed) {
  Rng rng(seed);
  double sq = 0.0, n = 0.0;
  for (std::size_t start = 0; start < ds.size(); start += cfg.batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t w = start; w < std::min(ds.size(), start + cfg.batch_size); ++w) idx.push_back(w);
    const ArBatch b = draw_ar_batch(ds, idx, cfg, rng);
    const auto z = model.forward(b.input, b.visible, false);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Matrix& x = ds.windows[idx[k]];
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (b.hidden[k][i] != 0.0) {
          sq += (z[k][i] - x[i]) * (z[k][i] - x[i]);
          n += 1.0;
        }
      }
    }
  }
  if (n == 0.0) throw DataError("AR validation draws hid no cell");
  return sq / n;
}

TrainHistory pretrain_ar(ARPredictor& model, const Dataset& train, const Dataset& val,
                         const TrainConfig& cfg, std::function<void(const EpochRecord&)> on_epoch) {
  cfg.validate();
  require_shape(train, model.config().length, model.config().features, "training");
  require_shape(val, model.config().length, model.config().features, "validation");
  const ParamList params = model.params();
  Adam opt(params, cfg.lr);
  Rng rng(Rng::mix(cfg.seed + 1));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Matrix> best;
  const std::uint64_t val_seed = Rng::mix(cfg.seed ^ (kValidationStream + 1));

  TrainLoop loop;
  loop.train_epoch = [&](int) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(order.size(), start + cfg.batch_size)));
      const ArBatch b = draw_ar_batch(train, idx, cfg, rng);
      const double n_hidden = count_ones(b.hidden), n_visible = count_ones(b.visible);
      zero_grads(params);
      ARPredictor::Tape tape;
      const auto z = model.forward(b.input, b.visible, true, &tape);
      std::vector<Matrix> grads;
      double loss = 0.0;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const Matrix& x = train.windows[idx[k]];
        Matrix g(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double diff = z[k][i] - x[i];
          if (b.hidden[k][i] != 0.0 && n_hidden > 0.0) {
            loss += diff * diff / n_hidden;
            g[i] = 2.0 * diff / n_hidden;
          } else if (b.visible[k][i] != 0.0 && n_visible > 0.0) {
            loss += cfg.ar_visible_weight * diff * diff / n_visible;
            g[i] = 2.0 * cfg.ar_visible_weight * diff / n_visible;
          }
        }
        grads.push_back(std::move(g));
      }
      model.backward(tape, grads);
      opt.step();
      total += loss;
      ++batches;
    }
    return total / static_cast<double>(batches);
  };
  loop.validate = [&](int) { return ar_validation_loss(model, val, cfg, val_seed); };
  loop.save_best = [&] { best = snapshot(params); };
  loop.restore_best = [&] {
    if (!best.empty()) restore(params, best);
  };
  loop.on_epoch = std::move(on_epoch);
  return run_training(loop, cfg.max_epochs, cfg.patience);
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n" << std::setprecision(10);
  for (const auto& r : history.epochs) out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << '\n';
}

}  // namespace dsdi
