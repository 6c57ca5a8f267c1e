#include "dsdi/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "dsdi/error.hpp"
#include "json.hpp"

namespace dsdi {

namespace {

constexpr std::uint64_t kEvalStream = 0x6576616cULL;
constexpr std::uint64_t kValStream = 0x76616cULL;
constexpr std::uint64_t kSamplerStream = 0x73616d70ULL;

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

std::size_t window_count(const EvalSpec& spec, const Dataset& split) {
  return spec.windows == 0 ? split.size() : std::min(spec.windows, split.size());
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& config) {
  Dataset all;
  if (config.data_source == "csv") {
    all = load_csv(config.data_path, config.length);
    if (all.features() != config.features) {
      throw ConfigError("data.features is " + std::to_string(config.features) + " but " + config.data_path +
                        " has " + std::to_string(all.features()) + " channels");
    }
  } else {
    Rng rng(config.seed);
    all = make_synthetic(config.synth_windows, config.length, config.features, rng);
  }
  Split split;
  try {
    split = chrono_split(all, config.train_frac, config.val_frac);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  PreparedData d;
  d.stats = compute_stats(split.train);
  d.train = normalize(split.train, d.stats);
  d.val = normalize(split.val, d.stats);
  d.test = normalize(split.test, d.stats);
  d.val_raw = std::move(split.val);
  d.test_raw = std::move(split.test);
  return d;
}

TrainingResult train_bundle(ModelBundle& bundle, const PreparedData& data, bool train_ar,
                            bool train_denoiser, const Logger& log) {
  TrainingResult r;
  TrainConfig tc = bundle.config.train;
  tc.seed = bundle.config.seed;
  tc.use_condition = bundle.config.use_condition;
  if (train_ar) {
    say(log, "pretraining AR predictor");
    r.ar = pretrain_ar(*bundle.ar, data.train, data.val, tc, [&](const EpochRecord& e) {
      say(log, "  ar epoch " + std::to_string(e.epoch) + " train " + fmt(e.train_loss) + " val " + fmt(e.val_loss));
    });
  }
  if (train_denoiser) {
    say(log, std::string("training denoiser (") + (bundle.config.use_s4 ? "S4" : "conv") +
                 (bundle.config.use_condition ? ", conditional" : ", unconditional") + ", T=" +
                 std::to_string(bundle.config.steps) + ")");
    r.denoiser = dsdi::train_denoiser(*bundle.denoiser, bundle.schedule, data.train, data.val, tc,
                                [&](const EpochRecord& e) {
                                  say(log, "  denoiser epoch " + std::to_string(e.epoch) + " train " +
                                               fmt(e.train_loss) + " val " + fmt(e.val_loss));
                                });
  }
  return r;
}

Matrix evaluation_mask(const EvalSpec& spec, std::size_t window, const Matrix& native) {
  Rng rng(Rng::mix(spec.mask_seed + window));
  return mask_and(draw_mask(spec.protocol, native.rows(), native.cols(), spec.rate, rng), native);
}

namespace {

MethodScore finish(const std::string& name, const ErrorAccumulator& acc) {
  MethodScore s;
  s.method = name;
  s.mae = acc.mae();
  s.rmse = acc.rmse();
  s.cells = acc.cells();
  s.window_mae_std = acc.window_mae_std();
  s.channel_mae = acc.channel_mae();
  s.channel_rmse = acc.channel_rmse();
  return s;
}

// Cells scored for window w: hidden by the evaluation mask but present in the source.
Matrix scored_cells(const Matrix& observed, const Matrix& native) {
  Matrix out(native.rows(), native.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (observed[i] == 0.0 && native[i] != 0.0) ? 1.0 : 0.0;
  return out;
}

}  // namespace

MethodScore score_model(ModelBundle& bundle, const SamplerConfig& sampler, const Dataset& split,
                        const Dataset& truth, const EvalSpec& spec, const std::string& name) {
  ErrorAccumulator acc(split.features());
  const std::size_t n = window_count(spec, split);
  for (std::size_t w = 0; w < n; ++w) {
    const Matrix& native = split.native_mask[w];
    const Matrix observed = evaluation_mask(spec, w, native);
    const Rng rng(Rng::mix(spec.mask_seed ^ kSamplerStream) + w);
    const Matrix x_hat = impute_window(bundle, hadamard(split.windows[w], observed), observed, sampler, rng,
                                       spec.samples);
    acc.add(denormalize(x_hat, bundle.stats), truth.windows[w], scored_cells(observed, native));
  }
  return finish(name, acc);
}

MethodScore score_baseline(Baseline method, const Dataset& split, const Dataset& truth,
                           const ChannelStats& stats, const EvalSpec& spec) {
  ErrorAccumulator acc(split.features());
  const std::size_t n = window_count(spec, split);
  const std::vector<double> zero_means(split.features(), 0.0);  // normalized units
  for (std::size_t w = 0; w < n; ++w) {
    const Matrix& native = split.native_mask[w];
    const Matrix observed = evaluation_mask(spec, w, native);
    const Matrix x_hat = baseline_impute(hadamard(split.windows[w], observed), observed, method, zero_means);
    acc.add(denormalize(x_hat, stats), truth.windows[w], scored_cells(observed, native));
  }
  return finish(to_string(method), acc);
}

std::pair<double, std::vector<MethodScore>> select_lambda(ModelBundle& bundle, const PreparedData& data,
                                                          const std::vector<double>& grid,
                                                          const EvalSpec& spec) {
  if (grid.empty()) throw ConfigError("lambda grid is empty");
  std::vector<MethodScore> scores;
  double best = grid.front(), best_mae = INFINITY;
  for (double lambda : grid) {
    ExperimentConfig c = bundle.config;
    c.lambda = lambda;
    scores.push_back(score_model(bundle, c.sampler(), data.val, data.val_raw, spec, "lambda=" + fmt(lambda)));
    if (scores.back().mae < best_mae) {
      best_mae = scores.back().mae;
      best = lambda;
    }
  }
  return {best, scores};
}

Sweep parse_sweep(const std::string& name) {
  if (name == "none") return Sweep::none;
  if (name == "missing-rate") return Sweep::missing_rate;
  if (name == "lambda") return Sweep::lambda;
  if (name == "steps") return Sweep::steps;
  throw ConfigError("unknown sweep '" + name + "' (missing-rate|lambda|steps)");
}

std::string to_string(Sweep s) {
  switch (s) {
    case Sweep::none: return "none";
    case Sweep::missing_rate: return "missing-rate";
    case Sweep::lambda: return "lambda";
    case Sweep::steps: return "steps";
  }
  return "?";
}

const std::vector<Variant>& ablation_variants() {
  static const std::vector<Variant> v{
      {"Base", false, false, false},  {"Condition", true, false, false}, {"Weight", false, true, false},
      {"S4", false, false, true},     {"Full", true, true, true},
  };
  return v;
}

namespace {

class Runner {
public:
  Runner(const ExperimentConfig& config, const ExperimentOptions& options, const Logger& log)
      : config_(config), options_(options), log_(log), data_(prepare_data(config)) {
    spec_ = {config.eval_mask, config.eval_rate, config.eval_windows, Rng::mix(config.seed ^ kEvalStream),
             config.samples};
    val_spec_ = spec_;
    val_spec_.mask_seed = Rng::mix(config.seed ^ kValStream);
    if (options.bundle) {
      say(log, "loading bundle " + options.bundle->string());
      loaded_ = std::make_unique<ModelBundle>(load_bundle(*options.bundle));
      const ExperimentConfig& bc = loaded_->config;
      if (bc.length != config.length || bc.features != config.features) {
        throw ConfigError("bundle window shape differs from the configured data");
      }
      loaded_->stats = data_.stats;
    }
  }

  EvalReport run() {
    const auto start = std::chrono::steady_clock::now();
    report_.config = config_.to_pairs();
    report_.seed = config_.seed;
    if (options_.ablation) {
      ablation();
    } else {
      switch (options_.sweep) {
        case Sweep::none: single(); break;
        case Sweep::missing_rate: missing_rate(); break;
        case Sweep::lambda: lambda_sweep(); break;
        case Sweep::steps: steps_sweep(); break;
      }
    }
    report_.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report_;
  }

private:
  // Bundle for a config: the loaded one when it fits, else trained inline
  // (the AR predictor is trained once and shared).
  ModelBundle& bundle_for(const ExperimentConfig& c) {
    const std::string key = c.fingerprint();
    if (loaded_ && loaded_->config.fingerprint() == key) return *loaded_;
    auto it = trained_.find(key);
    if (it != trained_.end()) return *it->second;
    auto b = std::make_unique<ModelBundle>(ModelBundle::create(c, data_.stats));
    const ARPredictor* ar = shared_ar();
    if (ar) *b->ar = *ar;
    train_bundle(*b, data_, ar == nullptr, true, log_);
    if (!ar) ar_source_ = b.get();
    return *trained_.emplace(key, std::move(b)).first->second;
  }

  const ARPredictor* shared_ar() const {
    if (loaded_) return loaded_->ar.get();
    return ar_source_ ? ar_source_->ar.get() : nullptr;
  }

  // Resolves an auto λ for this bundle on the validation split.
  double lambda_for(ModelBundle& b, const ExperimentConfig& c) {
    if (c.lambda > 0.0) return c.lambda;
    if (b.config.lambda > 0.0 && &b == loaded_.get()) return b.config.lambda;
    if (!c.use_injection) return config_.lambda_grid.front();  // unused by the sampler
    auto [best, scores] = select_lambda(b, data_, config_.lambda_grid, val_spec_);
    for (const auto& s : scores) say(log_, "  validation " + s.method + " MAE " + fmt(s.mae));
    say(log_, "  selected lambda " + fmt(best));
    return best;
  }

  SamplerConfig sampler_for(ModelBundle& b, ExperimentConfig c) {
    c.lambda = lambda_for(b, c);
    return c.sampler();
  }

  void add(const std::string& sweep, const std::string& split, const EvalSpec& spec, int steps, double lambda,
           MethodScore score) {
    EvalRow row;
    row.sweep = sweep;
    row.split = split;
    row.method = score.method;
    row.protocol = to_string(spec.protocol);
    row.rate = spec.protocol == MaskProtocol::point ? spec.rate : 0.0;
    row.steps = steps;
    row.lambda = lambda;
    row.samples = spec.samples;
    row.score = std::move(score);
    say(log_, "  " + row.method + " [" + row.protocol + (row.rate > 0 ? " " + fmt(row.rate) : "") +
                  "] MAE " + fmt(row.score.mae) + " RMSE " + fmt(row.score.rmse));
    report_.rows.push_back(std::move(row));
  }

  void baselines(const std::string& sweep, const EvalSpec& spec) {
    if (!options_.include_baselines) return;
    for (Baseline b : {Baseline::mean, Baseline::locf, Baseline::linear}) {
      add(sweep, "test", spec, 0, 0.0, score_baseline(b, data_.test, data_.test_raw, data_.stats, spec));
    }
  }

  std::string variant_name(const ExperimentConfig& c) const {
    for (const auto& v : ablation_variants())
      if (v.use_condition == c.use_condition && v.use_injection == c.use_injection && v.use_s4 == c.use_s4) {
        return "dsdi-" + v.name;
      }
    return "dsdi";
  }

  void single() {
    ModelBundle& b = bundle_for(config_);
    const SamplerConfig s = sampler_for(b, config_);
    add("none", "test", spec_, config_.steps, s.weights.lambda,
        score_model(b, s, data_.test, data_.test_raw, spec_, variant_name(config_)));
    baselines("none", spec_);
  }

  void missing_rate() {
    ModelBundle& b = bundle_for(config_);
    const SamplerConfig s = sampler_for(b, config_);
    for (double rate : config_.rate_grid) {
      EvalSpec spec = spec_;
      spec.protocol = MaskProtocol::point;
      spec.rate = rate;
      add("missing-rate", "test", spec, config_.steps, s.weights.lambda,
          score_model(b, s, data_.test, data_.test_raw, spec, variant_name(config_)));
      baselines("missing-rate", spec);
    }
  }

  void lambda_sweep() {
    ModelBundle& b = bundle_for(config_);
    for (double lambda : config_.lambda_grid) {
      ExperimentConfig c = config_;
      c.lambda = lambda;
      const SamplerConfig s = c.sampler();
      add("lambda", "val", val_spec_, c.steps, lambda,
          score_model(b, s, data_.val, data_.val_raw, val_spec_, variant_name(c)));
      add("lambda", "test", spec_, c.steps, lambda,
          score_model(b, s, data_.test, data_.test_raw, spec_, variant_name(c)));
    }
    baselines("lambda", spec_);
  }

  void steps_sweep() {
    for (int steps : config_.steps_grid) {
      ExperimentConfig c = config_;
      c.steps = steps;
      ModelBundle& b = bundle_for(c);
      const SamplerConfig s = sampler_for(b, c);
      add("steps", "test", spec_, steps, s.weights.lambda,
          score_model(b, s, data_.test, data_.test_raw, spec_, variant_name(c)));
    }
    baselines("steps", spec_);
  }

  void ablation() {
    for (const auto& v : ablation_variants()) {
      ExperimentConfig c = config_;
      c.use_condition = v.use_condition;
      c.use_injection = v.use_injection;
      c.use_s4 = v.use_s4;
      ModelBundle& b = bundle_for(c);
      const SamplerConfig s = sampler_for(b, c);
      add("ablation", "test", spec_, c.steps, s.weights.lambda,
          score_model(b, s, data_.test, data_.test_raw, spec_, "dsdi-" + v.name));
    }
    baselines("ablation", spec_);
  }

  const ExperimentConfig& config_;
  const ExperimentOptions& options_;
  Logger log_;
  PreparedData data_;
  EvalSpec spec_, val_spec_;
  std::unique_ptr<ModelBundle> loaded_;
  std::map<std::string, std::unique_ptr<ModelBundle>> trained_;
  ModelBundle* ar_source_ = nullptr;
  EvalReport report_;
};

}  // namespace

EvalReport run_experiment(const ExperimentConfig& config, const ExperimentOptions& options,
                          const Logger& log) {
  config.validate();
  Runner runner(config, options, log);
  return runner.run();
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "sweep,split,method,protocol,rate,steps,lambda,samples,mae,rmse,cells,window_mae_std";
  const std::size_t d = report.rows.empty() ? 0 : report.rows.front().score.channel_mae.size();
  for (std::size_t c = 0; c < d; ++c) out << ",mae_ch" << c;
  out << '\n' << std::setprecision(10);
  for (const auto& r : report.rows) {
    out << r.sweep << ',' << r.split << ',' << r.method << ',' << r.protocol << ',' << r.rate << ','
        << r.steps << ',' << r.lambda << ',' << r.samples << ',' << r.score.mae << ',' << r.score.rmse << ','
        << r.score.cells << ',' << r.score.window_mae_std;
    for (double v : r.score.channel_mae) out << ',' << v;
    out << '\n';
  }
}

void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
  nlohmann::ordered_json j;
  j["units"] = report.units;
  j["seed"] = report.seed;
  j["wall_seconds"] = report.wall_seconds;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.config) cfg[k] = v;
  j["config"] = cfg;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    nlohmann::ordered_json row;
    row["sweep"] = r.sweep;
    row["split"] = r.split;
    row["method"] = r.method;
    row["protocol"] = r.protocol;
    row["rate"] = r.rate;
    row["steps"] = r.steps;
    row["lambda"] = r.lambda;
    row["samples"] = r.samples;
    row["mae"] = r.score.mae;
    row["rmse"] = r.score.rmse;
    row["cells"] = r.score.cells;
    row["window_mae_std"] = r.score.window_mae_std;
    row["channel_mae"] = r.score.channel_mae;
    row["channel_rmse"] = r.score.channel_rmse;
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace dsdi
