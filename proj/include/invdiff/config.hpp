#pragma once

// Run configuration: flat `key = value` text, `#` starts a comment, unknown
// keys are rejected.

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "invdiff/detect.hpp"
#include "invdiff/grid.hpp"
#include "invdiff/physics.hpp"
#include "invdiff/solver.hpp"

namespace invdiff {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Random point-source layout, used when no sources file is given.
struct SourceLayout {
  std::size_t count = 0;
  double rate = 1.0;            // particles per second
  double rate_spread = 0.0;     // rates uniform in rate * [1 - spread, 1 + spread]
  long min_separation = 8;      // Chebyshev distance in pixels
  long border = 8;              // minimum distance to the image edge
  double start_max = 0.0;       // emission starts uniformly in [0, start_max] and runs to T
};

struct RunConfig {
  PhysicalParams physics;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> sigma_grid;  // boundaries in pixels, first must be 0
  std::vector<bool> xi;            // regularizer indicator per bin; empty = all
  std::size_t tau_steps = 2048;
  double truncation_eps = 1e-5;
  int kernel_quad_order = 16;

  std::string sources_file;
  SourceLayout layout;

  double noise_sigma = 0.0;
  int bits = 0;

  SolverConfig solver;
  std::optional<double> lambda_fraction;  // lambda as a multiple of lambda_scale
  DetectConfig detect;

  std::uint64_t seed = 0;
  std::string weights_file;
  std::string mask_file;

  [[nodiscard]] SigmaGrid grid() const { return SigmaGrid(sigma_grid, xi); }

  void validate() const {
    physics.validate();
    if (rows == 0 || cols == 0) throw ConfigError("config: rows and cols must be positive");
    const SigmaGrid g = grid();
    if (g.sigma_max() > physics.sigma_max_pixels() * (1.0 + 1e-12)) {
      throw ConfigError("config: sigma_grid exceeds sqrt(2 D T) / pixel_pitch = " +
                        std::to_string(physics.sigma_max_pixels()));
    }
    if (tau_steps < 16) throw ConfigError("config: tau_steps must be >= 16");
    if (!(truncation_eps > 0.0 && truncation_eps < 1.0)) throw ConfigError("config: truncation_eps must be in (0, 1)");
    if (kernel_quad_order < 4) throw ConfigError("config: kernel_quad_order must be >= 4");
    if (!(noise_sigma >= 0.0)) throw ConfigError("config: noise_sigma must be >= 0");
    if (bits != 0 && bits != 8 && bits != 12 && bits != 16) throw ConfigError("config: bits must be 0, 8, 12 or 16");
    solver.validate();
    if (lambda_fraction && !(*lambda_fraction >= 0.0)) throw ConfigError("config: lambda_fraction must be >= 0");
    if (!(detect.rel_threshold > 0.0 && detect.rel_threshold < 1.0)) {
      throw ConfigError("config: rel_threshold must be in (0, 1)");
    }
    if (detect.min_separation < 1) throw ConfigError("config: min_separation must be positive");
    if (!(detect.match_radius > 0.0)) throw ConfigError("config: match_radius must be positive");
    if (!(layout.rate >= 0.0) || !(layout.rate_spread >= 0.0 && layout.rate_spread <= 1.0)) {
      throw ConfigError("config: source_rate must be >= 0 and source_rate_spread in [0, 1]");
    }
    if (!(layout.start_max >= 0.0 && layout.start_max < physics.horizon)) {
      throw ConfigError("config: source_start_max must be in [0, horizon)");
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(x)) {
    throw ConfigError("config: " + key + ": expected a number, got '" + v + "'");
  }
  return x;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE) {
    throw ConfigError("config: " + key + ": expected an integer, got '" + v + "'");
  }
  return x;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  if (v.empty() || v.front() == '-') throw ConfigError("config: " + key + ": expected an unsigned integer");
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) throw ConfigError("config: " + key + ": expected an unsigned integer");
  return x;
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  const long long x = parse_int(key, v);
  if (x < 0) throw ConfigError("config: " + key + ": must be >= 0");
  return static_cast<std::size_t>(x);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: " + key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace detail

inline std::uint64_t parse_seed(const std::string& text) { return detail::parse_u64("seed", detail::trim(text)); }

inline RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::map<std::string, std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string v = detail::trim(line.substr(eq + 1));
    if (!seen.emplace(key, v).second) throw ConfigError("config: duplicate key '" + key + "'");

    using namespace detail;
    if (key == "kappa_a") c.physics.kappa_a = parse_double(key, v);
    else if (key == "kappa_d") c.physics.kappa_d = parse_double(key, v);
    else if (key == "diffusion") c.physics.diffusion = parse_double(key, v);
    else if (key == "horizon") c.physics.horizon = parse_double(key, v);
    else if (key == "pixel_pitch") c.physics.pixel_pitch = parse_double(key, v);
    else if (key == "psf_sigma") c.physics.psf_sigma = parse_double(key, v);
    else if (key == "rows") c.rows = parse_size(key, v);
    else if (key == "cols") c.cols = parse_size(key, v);
    else if (key == "sigma_grid") {
      for (const auto& item : split_list(v)) c.sigma_grid.push_back(parse_double(key, item));
    } else if (key == "xi") {
      for (const auto& item : split_list(v)) {
        if (item != "0" && item != "1") throw ConfigError("config: xi entries must be 0 or 1");
        c.xi.push_back(item == "1");
      }
    } else if (key == "tau_steps") c.tau_steps = parse_size(key, v);
    else if (key == "truncation_eps") c.truncation_eps = parse_double(key, v);
    else if (key == "kernel_quad_order") c.kernel_quad_order = static_cast<int>(parse_int(key, v));
    else if (key == "sources_file") c.sources_file = v;
    else if (key == "num_sources") c.layout.count = parse_size(key, v);
    else if (key == "source_rate") c.layout.rate = parse_double(key, v);
    else if (key == "source_rate_spread") c.layout.rate_spread = parse_double(key, v);
    else if (key == "source_min_separation") c.layout.min_separation = static_cast<long>(parse_int(key, v));
    else if (key == "source_border") c.layout.border = static_cast<long>(parse_int(key, v));
    else if (key == "source_start_max") c.layout.start_max = parse_double(key, v);
    else if (key == "noise_sigma") c.noise_sigma = parse_double(key, v);
    else if (key == "bits") c.bits = static_cast<int>(parse_int(key, v));
    else if (key == "lambda") c.solver.lambda = parse_double(key, v);
    else if (key == "lambda_fraction") c.lambda_fraction = parse_double(key, v);
    else if (key == "max_iters") c.solver.max_iters = static_cast<int>(parse_int(key, v));
    else if (key == "rel_tol") c.solver.rel_tol = parse_double(key, v);
    else if (key == "step_safety") c.solver.step_safety = parse_double(key, v);
    else if (key == "restart") c.solver.restart = parse_bool(key, v);
    else if (key == "norm_iters") c.solver.norm_iters = static_cast<int>(parse_int(key, v));
    else if (key == "rel_threshold") c.detect.rel_threshold = parse_double(key, v);
    else if (key == "min_separation") c.detect.min_separation = static_cast<long>(parse_int(key, v));
    else if (key == "match_radius") c.detect.match_radius = parse_double(key, v);
    else if (key == "seed") c.seed = parse_u64(key, v);
    else if (key == "weights_file") c.weights_file = v;
    else if (key == "mask_file") c.mask_file = v;
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  if (seen.count("lambda") && seen.count("lambda_fraction")) {
    throw ConfigError("config: give either lambda or lambda_fraction, not both");
  }
  for (const char* required : {"kappa_a", "diffusion", "horizon", "pixel_pitch", "rows", "cols", "sigma_grid"}) {
    if (!seen.count(required)) throw ConfigError(std::string("config: missing required key '") + required + "'");
  }
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  RunConfig c = parse_config(ss.str());
  // Relative file references resolve against the config's directory.
  for (std::string* file : {&c.sources_file, &c.weights_file, &c.mask_file}) {
    if (!file->empty() && std::filesystem::path(*file).is_relative()) *file = (path.parent_path() / *file).string();
  }
  return c;
}

/// Sources CSV: header "m,n,rate,t_start,t_stop".
inline SourceSpec read_sources(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("sources: cannot open " + path.string());
  SourceSpec spec;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line.rfind("m,", 0) == 0) continue;
    const auto fields = detail::split_list(line);
    if (fields.size() != 5) throw ConfigError("sources: line " + std::to_string(lineno) + ": expected 5 fields");
    PointSource s;
    s.m = detail::parse_size("m", fields[0]);
    s.n = detail::parse_size("n", fields[1]);
    s.rate = detail::parse_double("rate", fields[2]);
    s.t_start = detail::parse_double("t_start", fields[3]);
    s.t_stop = detail::parse_double("t_stop", fields[4]);
    spec.sources.push_back(s);
  }
  return spec;
}

/// Random layout by rejection sampling; deterministic in the seed.
inline SourceSpec random_sources(const SourceLayout& layout, const PhysicalParams& p, std::size_t rows,
                                 std::size_t cols, std::uint64_t seed) {
  SourceSpec spec;
  if (layout.count == 0) return spec;
  const long lo_m = layout.border;
  const long hi_m = static_cast<long>(rows) - 1 - layout.border;
  const long lo_n = layout.border;
  const long hi_n = static_cast<long>(cols) - 1 - layout.border;
  if (hi_m < lo_m || hi_n < lo_n) throw ConfigError("sources: border leaves no room for sources");
  std::mt19937_64 rng(seed);
  auto pick = [&](long lo, long hi) {
    return lo + static_cast<long>(detail::uniform01(rng) * static_cast<double>(hi - lo + 1));
  };
  const std::size_t max_attempts = 10000 * layout.count;
  for (std::size_t attempt = 0; spec.sources.size() < layout.count; ++attempt) {
    if (attempt >= max_attempts) throw ConfigError("sources: could not place sources with the requested separation");
    const long m = pick(lo_m, hi_m);
    const long n = pick(lo_n, hi_n);
    const bool clash = std::any_of(spec.sources.begin(), spec.sources.end(), [&](const PointSource& s) {
      return std::max(std::abs(static_cast<long>(s.m) - m), std::abs(static_cast<long>(s.n) - n)) <
             layout.min_separation;
    });
    if (clash) continue;
    PointSource s;
    s.m = static_cast<std::size_t>(m);
    s.n = static_cast<std::size_t>(n);
    s.rate = layout.rate * (1.0 + layout.rate_spread * (2.0 * detail::uniform01(rng) - 1.0));
    s.t_start = layout.start_max * detail::uniform01(rng);
    s.t_stop = p.horizon;
    spec.sources.push_back(s);
  }
  return spec;
}

}  // namespace invdiff
