#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ssp/data.hpp"
#include "ssp/model.hpp"
#include "ssp/prompts.hpp"

namespace ssp {

/// A config document could not be parsed or names an unknown key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Scalar knobs of a SceneSpec; the palettes themselves are built in.
struct SceneKnobs {
  int min_shapes = 1;
  int max_shapes = 4;
  double noise_sigma = 0.02;
  double texture_amplitude = 0.08;
  double texture_frequency = 3.0;
  double color_jitter = 0.04;
};

/// Everything a run depends on besides the command line.
struct RunConfig {
  ModelConfig model;
  std::uint64_t model_seed = 1;
  PretrainConfig pretrain;
  TrainConfig train;

  SceneKnobs source;
  SceneKnobs downstream;
  double fog_strength = 0.5;
  double night_strength = 1.0;
  double rain_strength = 1.0;
  double snow_strength = 1.0;

  SplitSizes sizes;
  std::uint64_t data_seed = 7;

  /// Experiment suites.
  std::size_t suite_seeds = 5;
  std::size_t suite_shots = 16;
  std::size_t bench_steps = 100;
  std::size_t bench_warmup = 10;

  /// Defaults used by the experiment suites. Prompt learning uses a larger
  /// step size than TrainConfig's default so that the toy model moves
  /// within the step budget.
  static RunConfig defaults();

  void validate() const;
};

/// `key=value` lines with flat dotted keys; blank lines and lines starting
/// with '#' are ignored. Keys not listed in config_keys() are rejected.
RunConfig parse_config(std::string_view text);
RunConfig parse_config(std::string_view text, RunConfig base);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical text of every key in config_keys() order; parse_config of the
/// result reproduces `cfg`.
std::string to_text(const RunConfig& cfg);
std::vector<std::string> config_keys();

/// Scene recipes derived from the config.
SceneSpec source_spec(const RunConfig& cfg);
SceneSpec downstream_spec(const RunConfig& cfg);

/// Named evaluation domains: "source" (no shift), "downstream" and the
/// downstream domain under "fog", "night", "rain" and "snow".
const std::vector<std::string>& dataset_names();
/// All domains from one seed layout so they never share scene seeds.
struct Benchmark {
  Dataset pretrain;
  std::vector<std::string> names;
  std::vector<DownstreamSplit> splits;

  const DownstreamSplit& split(const std::string& name) const;
};
Benchmark make_benchmark(const RunConfig& cfg);

}  // namespace ssp
