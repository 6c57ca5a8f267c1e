// dsdi: command-line front end (synth, mask-gen, train, impute, evaluate).
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dsdi/bundle.hpp"
#include "dsdi/config.hpp"
#include "dsdi/data.hpp"
#include "dsdi/error.hpp"
#include "dsdi/experiment.hpp"
#include "dsdi/masking.hpp"

namespace fs = std::filesystem;
using namespace dsdi;

namespace {

struct Globals {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<int> epochs;
  bool quiet = false;
};

KeyValues parse_sets(const std::vector<std::string>& sets) {
  KeyValues kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

// Precedence: defaults < config file < DSDI_SEED < --set < dedicated flags.
ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig c = g.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::from_file(g.config_path);
  if (const char* env = std::getenv("DSDI_SEED"); env && *env) c.apply({{"seed", env}});
  c.apply(parse_sets(g.sets));
  if (g.seed) c.seed = *g.seed;
  if (g.lr) c.train.lr = *g.lr;
  if (g.epochs) {
    c.train.max_epochs = *g.epochs;
    c.train.patience = std::min(c.train.patience, *g.epochs);
  }
  c.validate();
  return c;
}

Logger make_logger(const Globals& g) {
  if (g.quiet) return {};
  return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

int cmd_synth(const Globals& g, const std::string& out) {
  const ExperimentConfig c = load_config(g);
  Rng rng(c.seed);
  ensure_parent(out);
  write_csv(out, make_synthetic(c.synth_windows, c.length, c.features, rng));
  if (!g.quiet) std::cerr << "wrote " << c.synth_windows << " windows to " << out << '\n';
  return 0;
}

int cmd_mask_gen(const Globals& g, const std::string& out, std::size_t windows) {
  const ExperimentConfig c = load_config(g);
  Rng rng(c.seed);
  std::vector<Matrix> masks;
  masks.reserve(windows);
  for (std::size_t w = 0; w < windows; ++w) {
    masks.push_back(draw_mask(c.eval_mask, c.length, c.features, c.eval_rate, rng));
  }
  ensure_parent(out);
  write_mask_csv(out, masks);
  return 0;
}

int cmd_train(const Globals& g, const std::string& bundle_path, bool ar_only, bool denoiser_only,
              const std::string& history) {
  if (ar_only && denoiser_only) throw ConfigError("--ar-only and --denoiser-only are exclusive");
  ExperimentConfig c = load_config(g);
  const Logger log = make_logger(g);
  const PreparedData data = prepare_data(c);

  ModelBundle bundle = ModelBundle::create(c, data.stats);
  if (denoiser_only) {
    // keep the pretrained AR predictor from the existing bundle
    ModelBundle prev = load_bundle(bundle_path);
    if (prev.config.ar().latent_dim != c.ar().latent_dim || prev.config.features != c.features) {
      throw ConfigError(bundle_path + ": AR predictor shape differs from the configuration");
    }
    *bundle.ar = *prev.ar;
  }
  const TrainingResult r = train_bundle(bundle, data, !denoiser_only, !ar_only, log);
  if (!history.empty()) {
    if (!denoiser_only) write_history_csv(history + "_ar.csv", r.ar);
    if (!ar_only) write_history_csv(history + "_denoiser.csv", r.denoiser);
  }
  if (!ar_only && c.lambda == 0.0) {
    if (c.use_injection) {
      EvalSpec spec{c.eval_mask, c.eval_rate, c.eval_windows, Rng::mix(c.seed ^ 0x76616cULL), c.samples};
      auto [best, scores] = select_lambda(bundle, data, c.lambda_grid, spec);
      if (log) {
        for (const auto& s : scores) log("  validation " + s.method + " MAE " + std::to_string(s.mae));
      }
      bundle.config.lambda = best;
    } else {
      bundle.config.lambda = c.lambda_grid.front();
    }
    if (log) log("lambda = " + std::to_string(bundle.config.lambda));
  }
  ensure_parent(bundle_path);
  save_bundle(bundle, bundle_path);
  if (log) log("saved " + bundle_path);
  return 0;
}

int cmd_impute(const Globals& g, const std::string& input, const std::string& mask_path,
               const std::string& bundle_path, int samples, const std::string& out) {
  ModelBundle bundle = load_bundle(bundle_path);
  ExperimentConfig c = bundle.config;
  if (const char* env = std::getenv("DSDI_SEED"); env && *env) c.apply({{"seed", env}});
  c.apply(parse_sets(g.sets));
  if (g.seed) c.seed = *g.seed;
  if (c.lambda == 0.0) throw ConfigError("bundle has no lambda; set sampler.lambda");

  const Dataset ds = load_csv(input, c.length);
  if (ds.features() != c.features) throw DataError(input + ": channel count differs from the bundle");
  std::vector<Matrix> masks;
  if (!mask_path.empty()) {
    masks = read_mask_csv(mask_path, c.length);
    if (masks.size() != ds.size()) throw DataError(mask_path + ": window count differs from the input");
  }
  const SamplerConfig sampler = c.sampler();
  std::vector<Matrix> result;
  result.reserve(ds.size());
  for (std::size_t w = 0; w < ds.size(); ++w) {
    Matrix observed = ds.native_mask[w];
    if (!masks.empty()) {
      if (masks[w].rows() != c.length || masks[w].cols() != c.features) throw DataError("mask shape mismatch");
      observed = mask_and(observed, masks[w]);
    }
    const Matrix x = normalize(ds.windows[w], bundle.stats);
    const Rng rng(Rng::mix(c.seed ^ 0x696d70ULL) + w);
    Matrix filled = denormalize(impute_window(bundle, hadamard(x, observed), observed, sampler, rng, samples),
                                bundle.stats);
    for (std::size_t i = 0; i < filled.size(); ++i)
      if (observed[i] != 0.0) filled[i] = ds.windows[w][i];  // exact, no round trip through the stats
    result.push_back(std::move(filled));
  }
  ensure_parent(out);
  write_csv(out, result, ds.channel_names);
  if (!g.quiet) std::cerr << "imputed " << ds.size() << " windows into " << out << '\n';
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& sweep, bool ablation, const std::string& bundle_path,
                 const std::string& out_dir, bool no_baselines, std::optional<int> samples) {
  ExperimentConfig c = load_config(g);
  if (samples) c.samples = *samples;
  c.validate();
  ExperimentOptions opt;
  opt.sweep = parse_sweep(sweep);
  opt.ablation = ablation;
  if (!bundle_path.empty()) opt.bundle = bundle_path;
  opt.include_baselines = !no_baselines;
  const EvalReport report = run_experiment(c, opt, make_logger(g));
  fs::create_directories(out_dir);
  write_report_csv(fs::path(out_dir) / "report.csv", report);
  write_report_json(fs::path(out_dir) / "report.json", report);
  for (const auto& r : report.rows) {
    std::cout << r.sweep << '\t' << r.split << '\t' << r.method << '\t' << r.protocol << '\t' << r.rate << '\t'
              << r.steps << '\t' << r.lambda << '\t' << r.score.mae << '\t' << r.score.rmse << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion imputation for multivariate time series"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.sets, "override one config key (key=value), repeatable");
  app.add_option("--seed", g.seed, "global seed (overrides DSDI_SEED)");
  app.add_option("--lr", g.lr, "learning rate");
  app.add_option("--epochs", g.epochs, "maximum training epochs");
  app.add_flag("-q,--quiet", g.quiet, "no progress output");

  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset as CSV");
  synth->add_option("-o,--out", synth_out)->required();

  std::string mask_out;
  std::size_t mask_windows = 1;
  auto* mask = app.add_subcommand("mask-gen", "write evaluation masks (eval.mask, eval.rate) as CSV");
  mask->add_option("-o,--out", mask_out)->required();
  mask->add_option("-n,--windows", mask_windows, "number of windows")->check(CLI::PositiveNumber);

  std::string train_bundle_path, history;
  bool ar_only = false, denoiser_only = false;
  auto* train = app.add_subcommand("train", "pretrain the AR predictor, then the denoiser");
  train->add_option("-b,--bundle", train_bundle_path, "checkpoint to write")->required();
  train->add_flag("--ar-only", ar_only);
  train->add_flag("--denoiser-only", denoiser_only, "reuse the AR predictor stored in --bundle");
  train->add_option("--history", history, "prefix for per-epoch loss CSVs");

  std::string in_path, mask_path, imp_bundle, imp_out;
  int imp_samples = 1;
  auto* impute = app.add_subcommand("impute", "fill missing cells of a CSV");
  impute->add_option("-i,--input", in_path)->required()->check(CLI::ExistingFile);
  impute->add_option("-m,--mask", mask_path, "extra mask CSV (0 = hide)")->check(CLI::ExistingFile);
  impute->add_option("-b,--bundle", imp_bundle)->required()->check(CLI::ExistingFile);
  impute->add_option("-k,--samples", imp_samples, "average K draws")->check(CLI::PositiveNumber);
  impute->add_option("-o,--out", imp_out)->required();

  std::string sweep = "none", eval_bundle, out_dir = "report";
  bool ablation = false, no_baselines = false;
  std::optional<int> eval_samples;
  auto* evaluate = app.add_subcommand("evaluate", "score DSDI and baselines on the test split");
  evaluate->add_option("--sweep", sweep, "none|missing-rate|lambda|steps");
  evaluate->add_flag("--ablation", ablation, "Base/Condition/Weight/S4/Full variants");
  evaluate->add_option("-b,--bundle", eval_bundle, "trained checkpoint (otherwise trains inline)")
      ->check(CLI::ExistingFile);
  evaluate->add_option("-o,--out-dir", out_dir);
  evaluate->add_flag("--no-baselines", no_baselines);
  evaluate->add_option("-k,--samples", eval_samples, "average K draws")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(g, synth_out);
    if (*mask) return cmd_mask_gen(g, mask_out, mask_windows);
    if (*train) return cmd_train(g, train_bundle_path, ar_only, denoiser_only, history);
    if (*impute) return cmd_impute(g, in_path, mask_path, imp_bundle, imp_samples, imp_out);
    if (*evaluate) return cmd_evaluate(g, sweep, ablation, eval_bundle, out_dir, no_baselines, eval_samples);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
