#include "dsdi/masking.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dsdi/error.hpp"

namespace dsdi {

MaskProtocol parse_mask_protocol(const std::string& name) {
  if (name == "point") return MaskProtocol::point;
  if (name == "block") return MaskProtocol::block;
  if (name == "hybrid") return MaskProtocol::hybrid;
  throw ConfigError("unknown mask protocol '" + name + "' (point|block|hybrid)");
}

std::string to_string(MaskProtocol p) {
  switch (p) {
    case MaskProtocol::point: return "point";
    case MaskProtocol::block: return "block";
    case MaskProtocol::hybrid: return "hybrid";
  }
  return "?";
}

namespace {

constexpr int kMaxRedraws = 100;

bool all_missing(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(), [](double v) { return v == 0.0; });
}

}  // namespace

Matrix point_mask(std::size_t length, std::size_t channels, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("point_mask: rate must be in [0, 1)");
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    Matrix m(length, channels, 1.0);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (rng.uniform() < rate) m[i] = 0.0;
    }
    if (!all_missing(m)) return m;
  }
  throw std::runtime_error("point_mask: every draw was all-missing");
}

Matrix block_mask(std::size_t length, std::size_t channels, Rng& rng, const BlockMaskOptions& opts,
                  std::vector<FailureRun>* runs) {
  if (!(opts.point_rate >= 0.0 && opts.point_rate < 1.0) ||
      !(opts.failure_prob >= 0.0 && opts.failure_prob <= 1.0)) {
    throw std::invalid_argument("block_mask: rates out of range");
  }
  if (opts.min_run < 1 || opts.min_run > opts.max_run) {
    throw std::invalid_argument("block_mask: need 1 <= min_run <= max_run");
  }
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    Matrix m = point_mask(length, channels, opts.point_rate, rng);
    if (runs) runs->clear();
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t t = 0; t < length; ++t) {
        if (rng.uniform() < opts.failure_prob) {
          const auto run = static_cast<std::size_t>(rng.uniform_int(opts.min_run, opts.max_run));
          const std::size_t end = std::min(length, t + run);
          for (std::size_t s = t; s < end; ++s) m(s, c) = 0.0;
          if (runs) runs->push_back({c, t, run, end - t});
        }
      }
    }
    if (!all_missing(m)) return m;
  }
  throw std::runtime_error("block_mask: every draw was all-missing");
}

Matrix hybrid_mask(std::size_t length, std::size_t channels, Rng& rng, bool* used_point) {
  const bool point = rng.uniform() < 0.5;
  if (used_point) *used_point = point;
  return point ? point_mask(length, channels, 0.1, rng) : block_mask(length, channels, rng);
}

Matrix draw_mask(MaskProtocol protocol, std::size_t length, std::size_t channels, double rate,
                 Rng& rng) {
  switch (protocol) {
    case MaskProtocol::point: return point_mask(length, channels, rate, rng);
    case MaskProtocol::block: return block_mask(length, channels, rng);
    case MaskProtocol::hybrid: return hybrid_mask(length, channels, rng);
  }
  throw std::logic_error("draw_mask: unhandled protocol");
}

Matrix apply_mask(const Matrix& x, const Matrix& mask) {
  require_same_shape(x, mask, "apply_mask");
  return hadamard(x, mask);
}

Matrix mask_and(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "mask_and");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] != 0.0 && b[i] != 0.0) ? 1.0 : 0.0;
  return out;
}

double missing_fraction(const Matrix& mask) {
  if (mask.empty()) return 0.0;
  std::size_t miss = 0;
  for (double v : mask.values()) miss += v == 0.0 ? 1 : 0;
  return static_cast<double>(miss) / static_cast<double>(mask.size());
}

void write_mask_csv(const std::filesystem::path& path, const std::vector<Matrix>& masks) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write mask file " + path.string());
  for (const Matrix& m : masks) {
    for (std::size_t t = 0; t < m.rows(); ++t) {
      for (std::size_t c = 0; c < m.cols(); ++c) {
        if (c) out << ',';
        out << (m(t, c) != 0.0 ? '1' : '0');
      }
      out << '\n';
    }
  }
}

std::vector<Matrix> read_mask_csv(const std::filesystem::path& path, std::size_t length) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read mask file " + path.string());
  if (length == 0) throw std::invalid_argument("read_mask_csv: zero window length");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (cell == "1") row.push_back(1.0);
      else if (cell == "0") row.push_back(0.0);
      else throw DataError("mask file " + path.string() + ": cell '" + cell + "' is not 0/1");
    }
    if (width == 0) width = row.size();
    if (row.size() != width) throw DataError("mask file " + path.string() + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.size() % length != 0) {
    throw DataError("mask file " + path.string() + ": row count not a multiple of window length");
  }
  std::vector<Matrix> masks;
  for (std::size_t w = 0; w < rows.size() / length; ++w) {
    Matrix m(length, width);
    for (std::size_t t = 0; t < length; ++t) {
      for (std::size_t c = 0; c < width; ++c) m(t, c) = rows[w * length + t][c];
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

}  // namespace dsdi
