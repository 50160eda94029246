#pragma once

// Implementations of the invdiff subcommands. Each writes its outputs into
// `out` and returns the in-memory results so tests can compare them with
// direct library calls.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "invdiff/invdiff.hpp"

namespace invdiff::cli {

namespace fs = std::filesystem;

// Source placement and sensor noise draw from separate streams of one seed.
inline std::uint64_t layout_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }
inline std::uint64_t sensor_seed(std::uint64_t seed) { return seed; }

inline void ensure_dir(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (!fs::is_directory(out)) throw std::runtime_error("cannot create output directory " + out.string());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

inline KernelBank kernels_for(const RunConfig& cfg) {
  return build_kernel_bank(cfg.grid(), cfg.physics.psf_sigma, cfg.kernel_quad_order);
}

inline Observation observation_for(const RunConfig& cfg, Image data) {
  Observation obs = Observation::uniform(std::move(data));
  if (!cfg.weights_file.empty()) obs.weights = io::read_image(cfg.weights_file);
  if (!cfg.mask_file.empty()) obs.mask = io::read_image(cfg.mask_file);
  obs.validate();
  return obs;
}

struct SynthOutput {
  SourceSpec sources;
  PsdrTensor psdr;
  Image clean;
  Image sensed;
};

inline SynthOutput cmd_synth(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  SynthOutput result;
  result.sources = cfg.sources_file.empty()
                       ? random_sources(cfg.layout, cfg.physics, cfg.rows, cfg.cols, layout_seed(cfg.seed))
                       : read_sources(cfg.sources_file);
  const SigmaGrid grid = cfg.grid();
  const PhiTable phi = phi_general(cfg.physics, cfg.tau_steps, cfg.truncation_eps);
  result.psdr = synth_psdr(result.sources, cfg.physics, grid, phi, cfg.rows, cfg.cols);
  const DiffusionOperator op(kernels_for(cfg), cfg.rows, cfg.cols);
  result.clean = op.forward(result.psdr);
  result.sensed = sensor_model(result.clean, cfg.noise_sigma, cfg.bits, sensor_seed(cfg.seed));

  ensure_dir(out);
  io::write_psdr(out / "psdr_true.idf", result.psdr);
  io::write_image(out / "clean.idf", result.clean);
  io::write_image(out / "sensed.idf", result.sensed);
  io::write_pgm(out / "sensed.pgm", result.sensed);
  std::vector<Location> truth;
  for (const auto& s : result.sources.sources) {
    truth.push_back({static_cast<long>(s.m), static_cast<long>(s.n), s.rate});
  }
  io::write_locations(out / "truth.csv", truth);
  return result;
}

inline Image cmd_forward(const RunConfig& cfg, const fs::path& input, const fs::path& out) {
  cfg.validate();
  const PsdrTensor a = io::read_psdr(input);
  if (a.rows() != cfg.rows || a.cols() != cfg.cols || a.bins() != cfg.grid().bins()) {
    throw std::runtime_error("forward: tensor shape does not match the config");
  }
  const Image image = forward(a, kernels_for(cfg));
  ensure_dir(out);
  io::write_image(out / "forward.idf", image);
  return image;
}

struct SolveOutput {
  PsdrTensor psdr;
  SolveTrace trace;
  double lambda = 0.0;
};

inline SolveOutput cmd_solve(const RunConfig& cfg, const fs::path& input, const fs::path& out) {
  cfg.validate();
  const Image data = io::read_image(input);
  if (data.rows() != cfg.rows || data.cols() != cfg.cols) throw std::runtime_error("solve: image shape does not match the config");
  const Observation obs = observation_for(cfg, data);
  const DiffusionOperator op(kernels_for(cfg), cfg.rows, cfg.cols);
  SolverConfig scfg = cfg.solver;
  if (cfg.lambda_fraction) scfg.lambda = *cfg.lambda_fraction * lambda_scale(obs, op);

  SolveOutput result;
  result.lambda = scfg.lambda;
  ensure_dir(out);
  try {
    auto [psdr, trace] = fista_solve(obs, op, scfg);
    result.psdr = std::move(psdr);
    result.trace = std::move(trace);
  } catch (const SolveError& e) {
    std::ostringstream csv;
    e.trace().write_csv(csv);
    write_text(out / "trace.csv", csv.str());
    throw;
  }
  io::write_psdr(out / "psdr.idf", result.psdr);
  std::ostringstream csv;
  result.trace.write_csv(csv);
  write_text(out / "trace.csv", csv.str());
  char buf[128];
  std::snprintf(buf, sizeof buf, "lambda = %.17g\niterations = %d\nconverged = %d\n", result.lambda,
                result.trace.iterations, result.trace.converged ? 1 : 0);
  write_text(out / "solve_info.txt", buf);
  return result;
}

struct DetectOutput {
  Image map;
  DetectionResult detections;
  std::optional<MatchReport> report;
};

/// Input is either a PSDR tensor (rank 3, aggregated first) or a map (rank 2).
inline DetectOutput cmd_detect(const RunConfig& cfg, const fs::path& input, const std::optional<fs::path>& truth,
                               const fs::path& out) {
  cfg.validate();
  const io::RawTensor raw = io::read_tensor(input);
  DetectOutput result;
  ensure_dir(out);
  if (raw.dims.size() == 3) {
    result.map = aggregate_map(io::to_psdr(raw), cfg.grid());
    io::write_image(out / "map.idf", result.map);
  } else {
    result.map = io::to_image(raw);
  }
  result.detections = find_sources(result.map, cfg.detect.rel_threshold, cfg.detect.min_separation);
  io::write_locations(out / "detections.csv", result.detections.locations);
  if (truth) {
    result.report = match_and_score(result.detections, io::read_locations(*truth), cfg.detect.match_radius);
    std::ostringstream csv;
    result.report->write_csv(csv);
    write_text(out / "metrics.csv", csv.str());
  }
  return result;
}

inline MatchReport cmd_eval(const RunConfig& cfg, const fs::path& detections, const fs::path& truth,
                            const fs::path& out) {
  cfg.validate();
  DetectionResult det;
  det.locations = io::read_locations(detections);
  const MatchReport report = match_and_score(det, io::read_locations(truth), cfg.detect.match_radius);
  ensure_dir(out);
  std::ostringstream csv;
  report.write_csv(csv);
  write_text(out / "metrics.csv", csv.str());
  return report;
}

/// Writes kernel_<k>.idf for k = 1..K.
inline KernelBank cmd_kernels(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  KernelBank bank = kernels_for(cfg);
  ensure_dir(out);
  for (std::size_t k = 0; k < bank.bins(); ++k) {
    io::write_tensor(out / ("kernel_" + std::to_string(k + 1) + ".idf"), io::to_raw(bank.kernels[k]));
  }
  return bank;
}

}  // namespace invdiff::cli
