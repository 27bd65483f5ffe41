#pragma once

#include "mpid/metrics.hpp"
#include "mpid/optim.hpp"
#include "mpid/synth.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mpid {

inline constexpr const char* kToolVersion = "mpidefocus 0.1.0";

// Flat key=value configuration text ('#' starts a comment line).
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_config_text(const std::string& text);
KeyValues load_config_file(const std::filesystem::path& path);

// Builds an OptimConfig from a base key set with overrides applied on
// top (command-line flags win over the config file).
OptimConfig config_from_keys(const KeyValues& base,
                             const KeyValues& overrides);
std::string config_to_text(const OptimConfig& config);

std::uint64_t fnv1a_file(const std::filesystem::path& path);

struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string command;
  std::uint64_t seed = 0;
  std::string config_text;
  std::map<std::string, std::uint64_t> input_hashes;
  std::vector<std::string> outputs;
  double wall_time_s = 0.0;
};
// Written to a temporary file first, then renamed into place.
void write_manifest(const std::filesystem::path& path,
                    const RunManifest& manifest);

double csv_round(double v);  // 9 significant digits, reproducible diffs
std::string format_csv_value(double v);

// ---- subcommands ----

struct SynthOptions {
  SceneSpec scene;
  double kernel_radius = 4.0;
  double perturb = 0.0;
  std::filesystem::path outdir;
  bool dry_run = false;
};
int cmd_synth(const SynthOptions& options);

struct CalibrateOptions {
  std::filesystem::path captured_left, captured_right;
  std::optional<std::filesystem::path> white, black;
  std::vector<std::filesystem::path> diffuser_left, diffuser_right;
  double disc_radius = 4.2;
  int discs_per_cell = 5;
  double margin = 3.0;
  Index kernel_extent = 7;
  double reg_weight = 1e-3;
  std::filesystem::path outdir;
  bool dry_run = false;
};
int cmd_calibrate(const CalibrateOptions& options);

struct DeblurOptions {
  std::filesystem::path left, right;
  std::filesystem::path left_grid, right_grid;
  std::optional<std::filesystem::path> vignette_left, vignette_right;
  std::optional<std::filesystem::path> config_file;
  KeyValues flag_overrides;
  std::optional<std::filesystem::path> resume_state;
  std::filesystem::path outdir;
};
int cmd_deblur(const DeblurOptions& options);

struct SweepBiasOptions {
  std::vector<double> d_true = {16.0, 32.0, 48.0};
  std::vector<double> sigma2 = {0.0, 5e-5};
  double phi2 = 100.0;
  double d_min = 1.0, d_max = 59.0, d_step = 0.25;
  double reference_radius = 29.0;
  Index spectrum_extent = 128;
  Index jobs = 1;
  std::filesystem::path out_csv;
};
int cmd_sweep_bias(const SweepBiasOptions& options);

struct EvalScene {
  std::string name;
  std::filesystem::path pred_sharp, pred_defocus, gt_sharp, gt_defocus;
  std::optional<std::filesystem::path> conf;
};
struct EvalOptions {
  std::vector<EvalScene> scenes;
  bool align = false;
  Index jobs = 1;
  std::filesystem::path out_csv;
};
int cmd_eval(const EvalOptions& options);

}  // namespace mpid
