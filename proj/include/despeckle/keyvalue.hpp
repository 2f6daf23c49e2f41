#pragma once

// Flat `key = value` text documents: one pair per line, `#` starts a comment,
// blank lines ignored, later keys override earlier ones. Used for training
// configs and metric reports. Numbers are written with 12 significant digits.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"
#include "despeckle/metrics.hpp"
#include "despeckle/train.hpp"

namespace despeckle {

using KeyValues = std::map<std::string, std::string>;

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace detail

inline KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("key-value: missing '=' in \"" + line + "\"", line_start);
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw FormatError("key-value: empty key", line_start);
    kv[key] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline double parse_number(const std::string& key, const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ConfigError("'" + key + "': not a number: \"" + s + "\"");
  return v;
}

inline std::uint64_t parse_count(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("'" + key + "': not a non-negative integer: \"" + s + "\"");
  return v;
}

// ---------------------------------------------------------------- reports

inline std::string format_report(const MetricReport& r) {
  std::ostringstream os;
  os << "m_index = " << format_number(r.m_index) << '\n';
  os << "enl_term = " << format_number(r.enl_term) << '\n';
  os << "homogeneity_term = " << format_number(r.homogeneity_term) << '\n';
  os << "looks = " << format_number(r.looks) << '\n';
  os << "ratio_mean = " << format_number(r.ratio_mean) << '\n';
  os << "ratio_enl = " << format_number(r.ratio_enl) << '\n';
  os << "glcm_homogeneity_ratio = " << format_number(r.glcm_homogeneity_ratio) << '\n';
  os << "glcm_homogeneity_reference = " << format_number(r.glcm_homogeneity_reference) << '\n';
  os << "regions = " << r.enl_per_region.size() << '\n';
  os << "enl_per_region =";
  for (std::size_t i = 0; i < r.enl_per_region.size(); ++i)
    os << (i ? ", " : " ") << format_number(r.enl_per_region[i]);
  os << '\n';
  if (r.psnr) os << "psnr = " << format_number(*r.psnr) << '\n';
  return os.str();
}

inline MetricReport parse_report(const std::string& text) {
  const KeyValues kv = parse_key_values(text);
  auto get = [&](const std::string& k) {
    const auto it = kv.find(k);
    if (it == kv.end()) throw ConfigError("report: missing key '" + k + "'");
    return parse_number(k, it->second);
  };
  MetricReport r;
  r.m_index = get("m_index");
  r.enl_term = get("enl_term");
  r.homogeneity_term = get("homogeneity_term");
  r.looks = get("looks");
  r.ratio_mean = get("ratio_mean");
  r.ratio_enl = get("ratio_enl");
  r.glcm_homogeneity_ratio = get("glcm_homogeneity_ratio");
  r.glcm_homogeneity_reference = get("glcm_homogeneity_reference");
  if (const auto it = kv.find("enl_per_region"); it != kv.end()) {
    std::istringstream list(it->second);
    std::string item;
    while (std::getline(list, item, ','))
      if (auto t = detail::trim(item); !t.empty()) r.enl_per_region.push_back(parse_number("enl_per_region", t));
  }
  if (kv.count("psnr")) r.psnr = get("psnr");
  return r;
}

// ---------------------------------------------------------------- configs

/// Architecture knobs carried next to TrainConfig in config files.
struct ArchConfig {
  std::size_t depth = 10;
  std::size_t features = 64;
  std::size_t kernel = 3;
  bool output_bias_from_data = true;  ///< key output_init: data_mean | he
  double output_kernel_scale = 0.1;   ///< applied only with output_init = data_mean

  ArchitectureSpec spec() const { return ArchitectureSpec::plain(depth, features, kernel); }

  /// He-initialized network; with output_init = data_mean the output layer is
  /// then re-seeded from the mean clean intensity of `data`.
  NetworkParams build(const PatchDataset& data, Rng& rng) const {
    NetworkParams net = build_network(spec(), rng);
    if (output_bias_from_data) init_output_layer(net, mean_clean_intensity(data), output_kernel_scale);
    return net;
  }
};

/// Applies recognised keys to `cfg` / `arch`; unknown keys are an error.
inline void apply_config(const KeyValues& kv, TrainConfig& cfg, ArchConfig& arch) {
  for (const auto& [k, v] : kv) {
    if (k == "lambda") cfg.lambda = parse_number(k, v);
    else if (k == "eta") cfg.eta = parse_number(k, v);
    else if (k == "momentum") cfg.momentum = parse_number(k, v);
    else if (k == "batch_size") cfg.batch_size = parse_count(k, v);
    else if (k == "epochs") cfg.epochs = parse_count(k, v);
    else if (k == "looks") cfg.looks = parse_number(k, v);
    else if (k == "seed") cfg.seed = parse_count(k, v);
    else if (k == "val_every") cfg.val_every = parse_count(k, v);
    else if (k == "patience") cfg.patience = parse_count(k, v);
    else if (k == "floor_eps") cfg.eps.floor_eps = parse_number(k, v);
    else if (k == "div_eps") cfg.eps.div_eps = parse_number(k, v);
    else if (k == "objective") {
      if (v == "composite") cfg.objective = Objective::composite;
      else if (v == "mse") cfg.objective = Objective::mse_only;
      else throw ConfigError("'objective' must be composite or mse");
    }
    else if (k == "depth") arch.depth = parse_count(k, v);
    else if (k == "features") arch.features = parse_count(k, v);
    else if (k == "kernel") arch.kernel = parse_count(k, v);
    else if (k == "output_init") {
      if (v == "data_mean") arch.output_bias_from_data = true;
      else if (v == "he") arch.output_bias_from_data = false;
      else throw ConfigError("'output_init' must be data_mean or he");
    }
    else if (k == "output_kernel_scale") arch.output_kernel_scale = parse_number(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }
}

}  // namespace despeckle
