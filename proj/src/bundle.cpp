#include "dsdi/bundle.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "dsdi/error.hpp"

namespace dsdi {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'D', 'I', 'B', 'N', 'D', 'L'};
constexpr std::uint32_t kEndianMarker = 0x01020304;

class Writer {
public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf.append(s);
  }
  void raw(const char* p, std::size_t n) { buf.append(p, n); }
  std::string buf;

private:
  void le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
};

class Reader {
public:
  Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == end_; }

private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw DataError("bundle is truncated");
  }
  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

struct NamedTensor {
  std::string name;
  Matrix* value;
};

std::vector<NamedTensor> tensors_of(ModelBundle& b, Matrix& betas, Matrix& mean, Matrix& stddev) {
  std::vector<NamedTensor> out{{"schedule.betas", &betas}, {"stats.mean", &mean}, {"stats.std", &stddev}};
  for (auto& [name, p] : b.denoiser->params()) out.push_back({"denoiser/" + name, &p->value});
  for (auto& [name, p] : b.ar->params()) out.push_back({"ar/" + name, &p->value});
  std::set<std::string> seen;
  for (const auto& t : out) {
    if (!seen.insert(t.name).second) throw std::logic_error("duplicate tensor name " + t.name);
  }
  return out;
}

Matrix row_of(const std::vector<double>& v) { return Matrix(1, v.size(), v); }

}  // namespace

ModelBundle ModelBundle::create(const ExperimentConfig& config, ChannelStats stats) {
  config.validate();
  if (stats.mean.size() != config.features || stats.stddev.size() != config.features) {
    throw ConfigError("channel statistics do not match data.features");
  }
  ModelBundle b{config, config.schedule(), std::move(stats), nullptr, nullptr};
  b.denoiser = std::make_unique<DenoiserUNet>(config.unet(), Rng::mix(config.seed ^ 0xd1ULL));
  b.ar = std::make_unique<ARPredictor>(config.ar(), Rng::mix(config.seed ^ 0xa2ULL));
  return b;
}

void save_bundle(ModelBundle& bundle, const std::filesystem::path& path) {
  Matrix betas = row_of(bundle.schedule.betas());
  Matrix mean = row_of(bundle.stats.mean);
  Matrix stddev = row_of(bundle.stats.stddev);
  const auto tensors = tensors_of(bundle, betas, mean, stddev);

  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kBundleVersion);
  w.u32(kEndianMarker);
  const auto pairs = bundle.config.to_pairs();
  w.u32(static_cast<std::uint32_t>(pairs.size()));
  for (const auto& [k, v] : pairs) {
    w.str(k);
    w.str(v);
  }
  w.str(bundle.config.fingerprint());
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.str(t.name);
    w.u64(t.value->rows());
    w.u64(t.value->cols());
    for (double v : t.value->values()) w.f64(v);
  }
  w.u64(fnv1a64(w.buf.data(), w.buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write bundle " + path.string());
  out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw DataError("failed writing bundle " + path.string());
}

ModelBundle load_bundle(const std::filesystem::path& path, const std::string& expected_fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open bundle " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < sizeof kMagic + 16) throw DataError("bundle is truncated");
  if (std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) throw DataError("not a model bundle");

  const std::size_t body = data.size() - 8;
  std::uint64_t stored_sum = 0;
  for (int i = 0; i < 8; ++i) {
    stored_sum |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[body + i])) << (8 * i);
  }
  if (stored_sum != fnv1a64(data.data(), body)) throw DataError("bundle checksum mismatch");

  Reader r(data, body);
  char magic[8];
  r.raw(magic, sizeof magic);
  const std::uint32_t version = r.u32();
  if (version != kBundleVersion) {
    throw DataError("bundle version " + std::to_string(version) + " is not supported");
  }
  if (r.u32() != kEndianMarker) throw DataError("bundle endianness marker is wrong");

  KeyValues kv;
  const std::uint32_t n_pairs = r.u32();
  for (std::uint32_t i = 0; i < n_pairs; ++i) {
    std::string k = r.str();
    kv[k] = r.str();
  }
  ExperimentConfig config;
  try {
    config = ExperimentConfig::from_pairs(kv);
  } catch (const ConfigError& e) {
    throw DataError(std::string("bundle config is invalid: ") + e.what());
  }
  const std::string stored_fp = r.str();
  if (stored_fp != config.fingerprint()) throw DataError("bundle fingerprint does not match its config");
  if (!expected_fingerprint.empty() && expected_fingerprint != stored_fp) {
    throw ConfigError("bundle fingerprint " + stored_fp + " differs from the configured model " +
                      expected_fingerprint);
  }

  ModelBundle b = ModelBundle::create(config, ChannelStats{std::vector<double>(config.features, 0.0),
                                                           std::vector<double>(config.features, 1.0)});
  Matrix betas = row_of(b.schedule.betas());
  Matrix mean(1, config.features), stddev(1, config.features);
  const auto tensors = tensors_of(b, betas, mean, stddev);
  const std::uint32_t n_tensors = r.u32();
  if (n_tensors != tensors.size()) throw DataError("bundle tensor count does not match the model");
  for (const auto& t : tensors) {
    const std::string name = r.str();
    if (name != t.name) throw DataError("bundle tensor '" + name + "' found where '" + t.name + "' expected");
    const std::uint64_t rows = r.u64(), cols = r.u64();
    if (rows != t.value->rows() || cols != t.value->cols()) {
      throw DataError("bundle tensor '" + name + "' has the wrong shape");
    }
    for (std::size_t i = 0; i < t.value->size(); ++i) (*t.value)[i] = r.f64();
  }
  if (!r.done()) throw DataError("bundle has trailing bytes");

  b.schedule = NoiseSchedule(betas.values());
  b.stats.mean = mean.values();
  b.stats.stddev = stddev.values();
  return b;
}

Matrix ar_estimate(ModelBundle& bundle, const Matrix& x_known, const Matrix& mask) {
  return bundle.ar->predict(hadamard(x_known, mask), mask);
}

Matrix impute_window(ModelBundle& bundle, const Matrix& x_known, const Matrix& mask,
                     const SamplerConfig& sampler, const Rng& rng, int samples) {
  const Matrix z_ar = ar_estimate(bundle, x_known, mask);
  const DenoiserUNet& net = *bundle.denoiser;
  const NoisePredictor eps = [&net](const Matrix& x, int t, const Matrix& k, const Matrix& m) {
    return net.forward(x, t, k, m);
  };
  return impute_mean(x_known, mask, z_ar, eps, bundle.schedule, sampler, rng, samples);
}

}  // namespace dsdi
