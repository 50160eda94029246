// invdiff: synthesize, solve and evaluate inverse diffusion problems.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace invdiff;
  CLI::App app{"Source localization from diffusion-blurred surface images"};
  app.require_subcommand(1);

  std::string config_path;
  std::string seed_text;
  std::string out_dir = ".";
  std::string input;
  std::string truth;
  std::string detections;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed_text, "Random seed (overrides the config)");
    sub->add_option("--out", out_dir, "Output directory");
  };

  auto* synth = app.add_subcommand("synth", "Simulate sources, the clean image and the sensed image");
  common(synth);
  auto* fwd = app.add_subcommand("forward", "Apply the diffusion operator to a PSDR tensor");
  common(fwd);
  fwd->add_option("--input", input, "PSDR tensor file")->required()->check(CLI::ExistingFile);
  auto* solve = app.add_subcommand("solve", "Recover a PSDR tensor from an image");
  common(solve);
  solve->add_option("--input", input, "Image tensor file")->required()->check(CLI::ExistingFile);
  auto* detect = app.add_subcommand("detect", "Locate sources in a PSDR tensor or map");
  common(detect);
  detect->add_option("--input", input, "PSDR tensor or map file")->required()->check(CLI::ExistingFile);
  detect->add_option("--truth", truth, "Ground-truth CSV; also writes metrics.csv")->check(CLI::ExistingFile);
  auto* eval = app.add_subcommand("eval", "Score detections against ground truth");
  common(eval);
  eval->add_option("--detections", detections, "Detections CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--truth", truth, "Ground-truth CSV")->required()->check(CLI::ExistingFile);
  auto* kernels = app.add_subcommand("kernels", "Write the discrete kernel of every scale bin");
  common(kernels);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_config(config_path);
    if (!seed_text.empty()) cfg.seed = parse_seed(seed_text);
    if (synth->parsed()) {
      const auto r = cli::cmd_synth(cfg, out_dir);
      std::cout << "synth: " << r.sources.sources.size() << " sources, image max " << r.clean.max() << "\n";
    } else if (fwd->parsed()) {
      cli::cmd_forward(cfg, input, out_dir);
    } else if (solve->parsed()) {
      const auto r = cli::cmd_solve(cfg, input, out_dir);
      std::cout << "solve: lambda " << r.lambda << ", " << r.trace.iterations << " iterations"
                << (r.trace.converged ? "" : " (not converged)") << "\n";
    } else if (detect->parsed()) {
      std::optional<std::filesystem::path> truth_path;
      if (!truth.empty()) truth_path = truth;
      const auto r = cli::cmd_detect(cfg, input, truth_path, out_dir);
      std::cout << "detect: " << r.detections.locations.size() << " detections";
      if (r.report) std::cout << ", F1 " << r.report->f1;
      std::cout << "\n";
    } else if (eval->parsed()) {
      const auto r = cli::cmd_eval(cfg, detections, truth, out_dir);
      std::cout << "eval: precision " << r.precision << ", recall " << r.recall << ", F1 " << r.f1 << "\n";
    } else if (kernels->parsed()) {
      const auto bank = cli::cmd_kernels(cfg, out_dir);
      std::cout << "kernels: " << bank.bins() << " bins written\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "invdiff: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
