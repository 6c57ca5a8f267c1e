#include "dsdi/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "dsdi/error.hpp"

namespace dsdi {

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  Dataset out;
  out.channel_names = channel_names;
  out.windows.assign(windows.begin() + static_cast<std::ptrdiff_t>(begin),
                     windows.begin() + static_cast<std::ptrdiff_t>(end));
  out.native_mask.assign(native_mask.begin() + static_cast<std::ptrdiff_t>(begin),
                         native_mask.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, std::size_t length) {
  if (length == 0) throw std::invalid_argument("load_csv: window length must be positive");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  Dataset ds;
  for (auto& name : split_csv_line(line)) ds.channel_names.push_back(trim(name));
  const std::size_t d = ds.channel_names.size();
  if (d == 0) throw DataError(path.string() + ": no channels in header");

  std::vector<double> values;
  std::vector<double> present;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != d) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(d) + " cells, found " + std::to_string(cells.size()));
    }
    for (const auto& raw : cells) {
      const std::string cell = trim(raw);
      if (cell.empty()) {
        values.push_back(0.0);
        present.push_back(0.0);
        continue;
      }
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell '" +
                        cell + "'");
      }
      values.push_back(v);
      present.push_back(1.0);
    }
  }
  const std::size_t rows = values.size() / d;
  if (rows < length) {
    throw DataError(path.string() + ": " + std::to_string(rows) + " rows, fewer than window length " +
                    std::to_string(length));
  }
  const std::size_t n = rows / length;
  for (std::size_t w = 0; w < n; ++w) {
    const auto first = static_cast<std::ptrdiff_t>(w * length * d);
    const auto last = first + static_cast<std::ptrdiff_t>(length * d);
    ds.windows.emplace_back(length, d, std::vector<double>(values.begin() + first, values.begin() + last));
    ds.native_mask.emplace_back(length, d,
                                std::vector<double>(present.begin() + first, present.begin() + last));
  }
  return ds;
}

void write_csv(const std::filesystem::path& path, const std::vector<Matrix>& windows,
               const std::vector<std::string>& channel_names) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t c = 0; c < channel_names.size(); ++c) out << (c ? "," : "") << channel_names[c];
  out << '\n' << std::setprecision(17);
  for (const Matrix& w : windows) {
    for (std::size_t t = 0; t < w.rows(); ++t) {
      for (std::size_t c = 0; c < w.cols(); ++c) out << (c ? "," : "") << w(t, c);
      out << '\n';
    }
  }
}

void write_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t c = 0; c < ds.channel_names.size(); ++c) out << (c ? "," : "") << ds.channel_names[c];
  out << '\n' << std::setprecision(17);
  for (std::size_t w = 0; w < ds.size(); ++w) {
    const Matrix& x = ds.windows[w];
    const Matrix& m = ds.native_mask[w];
    for (std::size_t t = 0; t < x.rows(); ++t) {
      for (std::size_t c = 0; c < x.cols(); ++c) {
        if (c) out << ',';
        if (m(t, c) != 0.0) out << x(t, c);
      }
      out << '\n';
    }
  }
}

Split chrono_split(const Dataset& ds, double train_frac, double val_frac) {
  if (!(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0)) {
    throw std::invalid_argument("chrono_split: need positive fractions summing below 1");
  }
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::floor(n * train_frac + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(n * val_frac + 1e-9));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw std::invalid_argument("chrono_split: " + std::to_string(n) +
                                " windows leave an empty partition");
  }
  return {ds.slice(0, n_train), ds.slice(n_train, n_train + n_val), ds.slice(n_train + n_val, n)};
}

ChannelStats compute_stats(const Dataset& train) {
  const std::size_t d = train.features();
  ChannelStats st;
  st.mean.assign(d, 0.0);
  st.stddev.assign(d, 0.0);
  std::vector<double> count(d, 0.0);
  for (std::size_t w = 0; w < train.size(); ++w) {
    const Matrix& x = train.windows[w];
    const Matrix& m = train.native_mask[w];
    for (std::size_t t = 0; t < x.rows(); ++t) {
      for (std::size_t c = 0; c < d; ++c) {
        if (m(t, c) != 0.0) {
          st.mean[c] += x(t, c);
          count[c] += 1.0;
        }
      }
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    if (count[c] == 0.0) throw DataError("channel " + std::to_string(c) + " has no observed values");
    st.mean[c] /= count[c];
  }
  for (std::size_t w = 0; w < train.size(); ++w) {
    const Matrix& x = train.windows[w];
    const Matrix& m = train.native_mask[w];
    for (std::size_t t = 0; t < x.rows(); ++t) {
      for (std::size_t c = 0; c < d; ++c) {
        if (m(t, c) != 0.0) {
          const double diff = x(t, c) - st.mean[c];
          st.stddev[c] += diff * diff;
        }
      }
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    st.stddev[c] = std::sqrt(st.stddev[c] / count[c]);
    if (!(st.stddev[c] > 0.0)) throw DataError("channel " + std::to_string(c) + " is constant");
  }
  return st;
}

Matrix normalize(const Matrix& window, const ChannelStats& stats) {
  if (window.cols() != stats.mean.size()) throw std::invalid_argument("normalize: channel count");
  Matrix out(window.rows(), window.cols());
  for (std::size_t t = 0; t < window.rows(); ++t) {
    for (std::size_t c = 0; c < window.cols(); ++c) {
      if (!(stats.stddev[c] > 0.0)) throw DataError("normalize: zero standard deviation");
      out(t, c) = (window(t, c) - stats.mean[c]) / stats.stddev[c];
    }
  }
  return out;
}

Matrix denormalize(const Matrix& window, const ChannelStats& stats) {
  if (window.cols() != stats.mean.size()) throw std::invalid_argument("denormalize: channel count");
  Matrix out(window.rows(), window.cols());
  for (std::size_t t = 0; t < window.rows(); ++t) {
    for (std::size_t c = 0; c < window.cols(); ++c) {
      out(t, c) = window(t, c) * stats.stddev[c] + stats.mean[c];
    }
  }
  return out;
}

Dataset normalize(const Dataset& ds, const ChannelStats& stats) {
  Dataset out = ds;
  for (std::size_t w = 0; w < ds.size(); ++w) {
    out.windows[w] = hadamard(normalize(ds.windows[w], stats), ds.native_mask[w]);
  }
  return out;
}

Dataset make_synthetic(std::size_t n_windows, std::size_t length, std::size_t channels, Rng& rng,
                       const SyntheticOptions& opts, SyntheticParts* parts) {
  if (n_windows == 0 || length == 0 || channels == 0) {
    throw std::invalid_argument("make_synthetic: sizes must be positive");
  }
  if (opts.min_period < 2 || opts.min_period > opts.max_period) {
    throw std::invalid_argument("make_synthetic: need 2 <= min_period <= max_period");
  }
  const std::size_t total = n_windows * length;
  std::vector<double> period(channels), phase(channels), amp(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    period[c] = static_cast<double>(rng.uniform_int(opts.min_period, opts.max_period));
    phase[c] = 2.0 * std::numbers::pi * rng.uniform();
    amp[c] = 0.5 + rng.uniform();
  }
  Matrix mix(channels, channels);
  for (std::size_t i = 0; i < channels; ++i) {
    for (std::size_t j = 0; j < channels; ++j) {
      mix(i, j) = i == j ? 1.0 : opts.mixing * rng.normal() / std::sqrt(static_cast<double>(channels));
    }
  }
  Matrix periodic(total, channels), noise(total, channels);
  const double stationary = opts.innovation_std / std::sqrt(1.0 - opts.ar_coef * opts.ar_coef);
  for (std::size_t c = 0; c < channels; ++c) {
    double e = stationary * rng.normal();
    for (std::size_t t = 0; t < total; ++t) {
      if (t > 0) e = opts.ar_coef * e + opts.innovation_std * rng.normal();
      periodic(t, c) = amp[c] * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period[c] + phase[c]);
      noise(t, c) = e;
    }
  }
  Dataset ds;
  for (std::size_t c = 0; c < channels; ++c) ds.channel_names.push_back("ch" + std::to_string(c));
  for (std::size_t w = 0; w < n_windows; ++w) {
    Matrix x(length, channels);
    for (std::size_t t = 0; t < length; ++t) {
      const std::size_t g = w * length + t;
      for (std::size_t i = 0; i < channels; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < channels; ++j) s += mix(i, j) * (periodic(g, j) + noise(g, j));
        x(t, i) = s;
      }
    }
    ds.windows.push_back(std::move(x));
    ds.native_mask.emplace_back(length, channels, 1.0);
  }
  if (parts) {
    parts->periodic = std::move(periodic);
    parts->noise = std::move(noise);
    parts->mixing = std::move(mix);
  }
  return ds;
}

}  // namespace dsdi
