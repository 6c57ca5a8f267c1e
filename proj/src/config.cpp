#include "dsdi/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "dsdi/error.hpp"

namespace dsdi {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + key + "': '" + text + "' is not a valid number");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("config key '" + key + "': '" + text + "' is not a boolean");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // shortest text that reads back identically
  for (int prec = 1; prec <= 17; ++prec) {
    char tmp[64];
    std::snprintf(tmp, sizeof tmp, "%.*g", prec, v);
    double back = 0.0;
    std::from_chars(tmp, tmp + std::char_traits<char>::length(tmp), back);
    if (back == v) return tmp;
  }
  return buf;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>) s += fmt(v[i]);
    else s += std::to_string(v[i]);
  }
  return s;
}

std::string prior_name(PriorKind p) { return p == PriorKind::diffused_known ? "diffused" : "normal"; }

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  KeyValues kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second) {
      throw ConfigError(path.string() + ": key '" + key + "' given twice");
    }
  }
  return kv;
}

void ExperimentConfig::apply(const KeyValues& kv) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"data.source", [&](auto&, auto& v) { data_source = v; }},
      {"data.path", [&](auto&, auto& v) { data_path = v; }},
      {"data.windows", [&](auto& k, auto& v) { synth_windows = parse_number<std::size_t>(k, v); }},
      {"data.length", [&](auto& k, auto& v) { length = parse_number<std::size_t>(k, v); }},
      {"data.features", [&](auto& k, auto& v) { features = parse_number<std::size_t>(k, v); }},
      {"data.train_frac", [&](auto& k, auto& v) { train_frac = parse_number<double>(k, v); }},
      {"data.val_frac", [&](auto& k, auto& v) { val_frac = parse_number<double>(k, v); }},
      {"seed", [&](auto& k, auto& v) { seed = parse_number<std::uint64_t>(k, v); }},
      {"diffusion.steps", [&](auto& k, auto& v) { steps = parse_number<int>(k, v); }},
      {"diffusion.beta_start", [&](auto& k, auto& v) { beta_start = parse_number<double>(k, v); }},
      {"diffusion.beta_end",
       [&](auto& k, auto& v) { beta_end = v == "auto" ? 0.0 : parse_number<double>(k, v); }},
      {"unet.channels", [&](auto& k, auto& v) { channels = parse_list<std::size_t>(k, v); }},
      {"unet.pool_factor", [&](auto& k, auto& v) { pool_factor = parse_number<std::size_t>(k, v); }},
      {"unet.step_embed_dim", [&](auto& k, auto& v) { step_embed_dim = parse_number<std::size_t>(k, v); }},
      {"unet.state_dim", [&](auto& k, auto& v) { state_dim = parse_number<std::size_t>(k, v); }},
      {"unet.mlp_ratio", [&](auto& k, auto& v) { mlp_ratio = parse_number<std::size_t>(k, v); }},
      {"model.use_s4", [&](auto& k, auto& v) { use_s4 = parse_bool(k, v); }},
      {"model.use_condition", [&](auto& k, auto& v) { use_condition = parse_bool(k, v); }},
      {"model.use_injection", [&](auto& k, auto& v) { use_injection = parse_bool(k, v); }},
      {"ar.latent_dim", [&](auto& k, auto& v) { ar_latent_dim = parse_number<std::size_t>(k, v); }},
      {"ar.heads", [&](auto& k, auto& v) { ar_heads = parse_number<std::size_t>(k, v); }},
      {"ar.blocks", [&](auto& k, auto& v) { ar_blocks = parse_number<std::size_t>(k, v); }},
      {"ar.ffn_hidden", [&](auto& k, auto& v) { ar_ffn_hidden = parse_number<std::size_t>(k, v); }},
      {"train.lr", [&](auto& k, auto& v) { train.lr = parse_number<double>(k, v); }},
      {"train.batch_size", [&](auto& k, auto& v) { train.batch_size = parse_number<std::size_t>(k, v); }},
      {"train.max_epochs", [&](auto& k, auto& v) { train.max_epochs = parse_number<int>(k, v); }},
      {"train.patience", [&](auto& k, auto& v) { train.patience = parse_number<int>(k, v); }},
      {"train.mask", [&](auto&, auto& v) { train.mask_protocol = parse_mask_protocol(v); }},
      {"train.mask_rate", [&](auto& k, auto& v) { train.mask_rate = parse_number<double>(k, v); }},
      {"train.ar_mask_rate", [&](auto& k, auto& v) { train.ar_mask_rate = parse_number<double>(k, v); }},
      {"train.ar_hide_fraction", [&](auto& k, auto& v) { train.ar_hide_fraction = parse_number<double>(k, v); }},
      {"train.ar_visible_weight",
       [&](auto& k, auto& v) { train.ar_visible_weight = parse_number<double>(k, v); }},
      {"sampler.n0", [&](auto& k, auto& v) { n0 = parse_number<double>(k, v); }},
      {"sampler.lambda", [&](auto& k, auto& v) { lambda = v == "auto" ? 0.0 : parse_number<double>(k, v); }},
      {"sampler.prior",
       [&](auto& k, auto& v) {
         if (v == "diffused") prior = PriorKind::diffused_known;
         else if (v == "normal") prior = PriorKind::standard_normal;
         else throw ConfigError("config key '" + k + "': expected diffused|normal");
       }},
      {"sampler.noise_ar", [&](auto& k, auto& v) { noise_ar = parse_bool(k, v); }},
      {"sampler.samples", [&](auto& k, auto& v) { samples = parse_number<int>(k, v); }},
      {"eval.mask", [&](auto&, auto& v) { eval_mask = parse_mask_protocol(v); }},
      {"eval.rate", [&](auto& k, auto& v) { eval_rate = parse_number<double>(k, v); }},
      {"eval.windows", [&](auto& k, auto& v) { eval_windows = parse_number<std::size_t>(k, v); }},
      {"eval.lambda_grid", [&](auto& k, auto& v) { lambda_grid = parse_list<double>(k, v); }},
      {"eval.rate_grid", [&](auto& k, auto& v) { rate_grid = parse_list<double>(k, v); }},
      {"eval.steps_grid", [&](auto& k, auto& v) { steps_grid = parse_list<int>(k, v); }},
  };
  for (const auto& [key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(key, value);
  }
}

ExperimentConfig ExperimentConfig::from_pairs(const KeyValues& kv) {
  ExperimentConfig c;
  c.apply(kv);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  return from_pairs(read_key_values(path));
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::to_pairs() const {
  return {
      {"data.source", data_source},
      {"data.path", data_path},
      {"data.windows", std::to_string(synth_windows)},
      {"data.length", std::to_string(length)},
      {"data.features", std::to_string(features)},
      {"data.train_frac", fmt(train_frac)},
      {"data.val_frac", fmt(val_frac)},
      {"seed", std::to_string(seed)},
      {"diffusion.steps", std::to_string(steps)},
      {"diffusion.beta_start", fmt(beta_start)},
      {"diffusion.beta_end", beta_end == 0.0 ? "auto" : fmt(beta_end)},
      {"unet.channels", join(channels)},
      {"unet.pool_factor", std::to_string(pool_factor)},
      {"unet.step_embed_dim", std::to_string(step_embed_dim)},
      {"unet.state_dim", std::to_string(state_dim)},
      {"unet.mlp_ratio", std::to_string(mlp_ratio)},
      {"model.use_s4", use_s4 ? "true" : "false"},
      {"model.use_condition", use_condition ? "true" : "false"},
      {"model.use_injection", use_injection ? "true" : "false"},
      {"ar.latent_dim", std::to_string(ar_latent_dim)},
      {"ar.heads", std::to_string(ar_heads)},
      {"ar.blocks", std::to_string(ar_blocks)},
      {"ar.ffn_hidden", std::to_string(ar_ffn_hidden)},
      {"train.lr", fmt(train.lr)},
      {"train.batch_size", std::to_string(train.batch_size)},
      {"train.max_epochs", std::to_string(train.max_epochs)},
      {"train.patience", std::to_string(train.patience)},
      {"train.mask", to_string(train.mask_protocol)},
      {"train.mask_rate", fmt(train.mask_rate)},
      {"train.ar_mask_rate", fmt(train.ar_mask_rate)},
      {"train.ar_hide_fraction", fmt(train.ar_hide_fraction)},
      {"train.ar_visible_weight", fmt(train.ar_visible_weight)},
      {"sampler.n0", fmt(n0)},
      {"sampler.lambda", lambda == 0.0 ? "auto" : fmt(lambda)},
      {"sampler.prior", prior_name(prior)},
      {"sampler.noise_ar", noise_ar ? "true" : "false"},
      {"sampler.samples", std::to_string(samples)},
      {"eval.mask", to_string(eval_mask)},
      {"eval.rate", fmt(eval_rate)},
      {"eval.windows", std::to_string(eval_windows)},
      {"eval.lambda_grid", join(lambda_grid)},
      {"eval.rate_grid", join(rate_grid)},
      {"eval.steps_grid", join(steps_grid)},
  };
}

void ExperimentConfig::validate() const {
  if (data_source != "synthetic" && data_source != "csv") {
    throw ConfigError("data.source must be synthetic or csv");
  }
  if (data_source == "csv" && data_path.empty()) throw ConfigError("data.path is required for csv data");
  if (synth_windows == 0) throw ConfigError("data.windows must be positive");
  if (!(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0)) {
    throw ConfigError("data.train_frac and data.val_frac must be positive and sum below 1");
  }
  if (steps < 1) throw ConfigError("diffusion.steps must be >= 1");
  const double end = beta_end == 0.0 ? default_beta_end(steps) : beta_end;
  if (!(beta_start > 0.0 && beta_start <= end && end < 1.0)) {
    throw ConfigError("diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  try {
    unet().validate();
    ar().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  train.validate();
  if (!(n0 >= 0.0 && n0 <= 1.0)) throw ConfigError("sampler.n0 must lie in [0, 1]");
  if (!(lambda >= 0.0)) throw ConfigError("sampler.lambda must be positive or auto");
  if (samples < 1) throw ConfigError("sampler.samples must be >= 1");
  if (!(eval_rate > 0.0 && eval_rate < 1.0)) throw ConfigError("eval.rate must lie in (0, 1)");
  for (double l : lambda_grid)
    if (!(l > 0.0)) throw ConfigError("eval.lambda_grid values must be positive");
  for (double r : rate_grid)
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("eval.rate_grid values must lie in (0, 1)");
  for (int s : steps_grid)
    if (s < 1) throw ConfigError("eval.steps_grid values must be >= 1");
}

UNetConfig ExperimentConfig::unet() const {
  UNetConfig u;
  u.length = length;
  u.features = features;
  u.diffusion_steps = steps;
  u.channels = channels;
  u.pool_factor = pool_factor;
  u.step_embed_dim = step_embed_dim;
  u.state_dim = state_dim;
  u.mlp_ratio = mlp_ratio;
  u.use_s4 = use_s4;
  return u;
}

ARConfig ExperimentConfig::ar() const {
  ARConfig a;
  a.length = length;
  a.features = features;
  a.latent_dim = ar_latent_dim;
  a.heads = ar_heads;
  a.blocks = ar_blocks;
  a.ffn_hidden = ar_ffn_hidden;
  return a;
}

NoiseSchedule ExperimentConfig::schedule() const {
  return build_linear_schedule(steps, beta_start, beta_end == 0.0 ? default_beta_end(steps) : beta_end);
}

SamplerConfig ExperimentConfig::sampler() const {
  SamplerConfig s;
  if (lambda == 0.0) throw ConfigError("sampler.lambda is auto and has not been selected yet");
  s.weights = {n0, lambda};
  s.use_condition = use_condition;
  s.use_injection = use_injection;
  s.use_s4_unet = use_s4;
  s.prior = prior;
  s.noise_ar = noise_ar;
  return s;
}

std::string ExperimentConfig::fingerprint() const {
  static const char* const keys[] = {
      "data.length",     "data.features",       "diffusion.steps", "diffusion.beta_start",
      "diffusion.beta_end", "unet.channels",    "unet.pool_factor", "unet.step_embed_dim",
      "unet.state_dim",  "unet.mlp_ratio",      "model.use_s4",    "model.use_condition",
      "ar.latent_dim",   "ar.heads",            "ar.blocks",       "ar.ffn_hidden"};
  std::string canon;
  const auto pairs = to_pairs();
  for (const char* key : keys) {
    for (const auto& [k, v] : pairs) {
      if (k == key) canon += k + "=" + v + "\n";
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canon.data(), canon.size())));
  return buf;
}

}  // namespace dsdi
