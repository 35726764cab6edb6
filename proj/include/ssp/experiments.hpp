#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssp/config.hpp"
#include "ssp/eval.hpp"
#include "ssp/gradcheck.hpp"
#include "ssp/model.hpp"
#include "ssp/prompts.hpp"

namespace ssp {

/// Process exit codes of the command-line tools.
enum class ExitCode : int {
  ok = 0,
  failure = 1,
  usage = 2,
  missing_input = 3,
  bad_config = 4,
  diverged = 5,
  bad_checkpoint = 6,
  criteria_failed = 7,
};

/// A referenced input file does not exist.
class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_model(const FrozenModel& model, const std::filesystem::path& path);
FrozenModel load_model(const std::filesystem::path& path);
void save_prompts(const PromptsFile& file, const std::filesystem::path& path);
PromptsFile load_prompts(const std::filesystem::path& path);

/// Config, frozen model and the generated benchmark shared by every cell.
struct Lab {
  RunConfig cfg;
  FrozenModel model;
  Benchmark bench;

  /// Classes that received text supervision at the full rate during
  /// pretraining (the foreground classes).
  std::vector<bool> frequent_classes() const;
};

Lab make_lab(const RunConfig& cfg, FrozenModel model);
Lab open_lab(const RunConfig& cfg, const std::filesystem::path& model_path);

/// Pretrains from a random init on the config's pretraining corpus with
/// the non-foreground classes as rarely supervised.
FrozenModel pretrain_model(const RunConfig& cfg, PretrainReport* report = nullptr);

struct Cell {
  std::string label;
  Method method = Method::ssprompt;
  WeightsMode spatial_weights = WeightsMode::learnable;
  WeightsMode semantic_weights = WeightsMode::learnable;
  std::string dataset = "downstream";
  std::size_t shots = 16;
  /// Training seed (batch order, CoOp context init).
  std::uint64_t seed = 0;
  /// Few-shot selection seed.
  std::uint64_t sample_seed = 0;
};

struct ExperimentPlan {
  std::vector<Cell> cells;
  std::filesystem::path out_dir;
  bool plots = true;

  /// Checks every cell's dataset and few-shot pool before anything runs.
  void validate(const Lab& lab) const;
};

/// Runs the cells in order. RunResult::method carries the cell label.
std::vector<RunResult> run_plan(const Lab& lab, const ExperimentPlan& plan);

struct SuiteRow {
  std::string label;
  std::vector<RunResult> runs;
  /// Medians of mIoU, per-class IoU, step time and memory over the runs.
  RunResult median;
};

/// Groups results by label in order of first appearance.
std::vector<SuiteRow> summarize(const std::vector<RunResult>& results);
double median(std::vector<double> values);

struct SuiteOutput {
  std::vector<SuiteRow> rows;
  std::vector<std::filesystem::path> files;

  const SuiteRow& row(const std::string& label) const;
};

/// Baseline, spatial and semantic branches with fixed-half and learned
/// weights, and the full method, on one shared few-shot sample.
SuiteOutput run_ablation(const Lab& lab, const std::filesystem::path& out_dir, bool plots = true);
/// The full method at 4, 8, 12 and 16 shots (nested samples) plus the
/// zero-shot baseline.
SuiteOutput run_shots(const Lab& lab, const std::filesystem::path& out_dir, bool plots = true);
/// Default, CoOp and the full method on the clean and adverse domains.
SuiteOutput run_conditions(const Lab& lab, const std::filesystem::path& out_dir, bool plots = true);
/// Default, coordinate learning, spatial embedding learning and the full
/// method.
SuiteOutput run_vspl(const Lab& lab, const std::filesystem::path& out_dir, bool plots = true);

struct BenchOutput {
  std::vector<RunResult> rows;
  std::vector<TimingReport> timings;
  std::vector<std::filesystem::path> files;
};
/// Per-step time, memory and encoder invocation counts of the full method,
/// CoOp and the semantic branch alone on the same batch stream.
BenchOutput run_bench(const Lab& lab, const std::filesystem::path& out_dir, bool plots = true);

struct WeightsOutput {
  std::vector<WeightReport> reports;  // one per seed
  std::vector<std::filesystem::path> files;
};
/// Semantic prompt learning over the suite seeds; learnt fusion weights
/// grouped by pretraining text-supervision frequency.
WeightsOutput run_weights(const Lab& lab, const std::filesystem::path& out_dir, bool plots = true);

// Single-shot commands behind the CLI.
void cmd_pretrain(const RunConfig& cfg, const std::filesystem::path& out);
void cmd_learn(const RunConfig& cfg, Method method, const std::filesystem::path& model_path, const std::string& dataset,
               std::size_t shots, std::uint64_t seed, const std::filesystem::path& out);
RunResult cmd_eval(const RunConfig& cfg, const std::filesystem::path& model_path,
                   const std::optional<std::filesystem::path>& prompts_path, const std::string& dataset,
                   const std::filesystem::path& out);
GradcheckReport cmd_gradcheck(std::uint64_t seed);

}  // namespace ssp
