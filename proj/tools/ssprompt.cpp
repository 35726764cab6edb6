// Command-line front end for pretraining, prompt learning, evaluation and
// the experiment suites. Exit codes follow ssp::ExitCode.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ssp/experiments.hpp"
#include "ssp/persist.hpp"

namespace fs = std::filesystem;
using namespace ssp;

namespace {

struct Common {
  std::string config;
  std::string model = "out/model.ckpt";
  std::string out = "out";
  bool no_plots = false;
};

RunConfig resolve(const Common& c) { return c.config.empty() ? RunConfig::defaults() : load_config(c.config); }

void report_suite(const SuiteOutput& s) {
  for (const auto& row : s.rows) {
    fmt::print("{:<20} {:<11} shots={:<3} median mIoU {:.4f}\n", row.label, row.median.dataset, row.median.shots,
               row.median.miou);
  }
  for (const auto& f : s.files) fmt::print("wrote {}\n", f.string());
}

int run(int argc, char** argv) {
  CLI::App app{"Spatial and semantic prompt learning on a frozen promptable segmentation surrogate"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config, "Run config (flat key=value lines); defaults when omitted");

  std::optional<std::uint64_t> seed;
  auto* pre = app.add_subcommand("pretrain", "Pretrain and freeze the surrogate model");
  pre->add_option("--out", common.model, "Checkpoint path")->required();
  pre->add_option("--seed", seed, "Overrides pretrain.seed and model.seed");

  std::string method_name = "ssprompt", dataset = "downstream";
  std::size_t shots = 16;
  std::uint64_t learn_seed = 0;
  std::string learn_out;
  auto* learn = app.add_subcommand("learn", "Learn prompts on a few-shot sample");
  learn->add_option("--method", method_name, "default|spaprompt|semprompt|ssprompt|coop|vspl")->required();
  learn->add_option("--model", common.model, "Model checkpoint")->required();
  learn->add_option("--dataset", dataset, "source|downstream|fog|night|rain|snow");
  learn->add_option("--shots", shots, "Images per class");
  learn->add_option("--seed", learn_seed, "Few-shot sample and training seed");
  learn->add_option("--out", learn_out, "Prompts file")->required();

  std::string prompts_path, eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate prompts (defaults when --prompts is omitted)");
  eval->add_option("--model", common.model, "Model checkpoint")->required();
  eval->add_option("--prompts", prompts_path, "Prompts file");
  eval->add_option("--dataset", dataset, "source|downstream|fog|night|rain|snow");
  eval->add_option("--out", eval_out, "Results CSV")->required();

  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "Reverse mode versus central differences");
  gc->add_option("--seed", gc_seed, "Instance seed");

  struct Suite {
    const char* name;
    const char* help;
    CLI::App* cmd = nullptr;
  };
  Suite suites[] = {{"ablate", "Branch and weighting ablation"},
                    {"shots", "Shots-per-class sweep"},
                    {"conditions", "Adverse-condition domains"},
                    {"bench", "Per-step time, memory and encoder calls"},
                    {"vspl", "Coordinate versus embedding spatial prompts"},
                    {"weights", "Learnt semantic fusion weights by class frequency"}};
  for (auto& s : suites) {
    s.cmd = app.add_subcommand(s.name, s.help);
    s.cmd->add_option("--model", common.model, "Model checkpoint")->required();
    s.cmd->add_option("--out", common.out, "Output directory");
    s.cmd->add_flag("--no-plots", common.no_plots, "Skip SVG output");
  }

  std::string export_dir;
  std::size_t export_count = 4;
  auto* exp = app.add_subcommand("export", "Write sample images (PPM) and label maps (text)");
  exp->add_option("--dataset", dataset, "source|downstream|fog|night|rain|snow");
  exp->add_option("--count", export_count, "Images from the eval split");
  exp->add_option("--out", export_dir, "Output directory")->required();

  app.add_subcommand("config", "Print the effective config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  RunConfig cfg = resolve(common);
  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();

  if (name == "config") {
    fmt::print("{}", to_text(cfg));
  } else if (name == "pretrain") {
    if (seed) {
      cfg.pretrain.seed = *seed;
      cfg.model_seed = *seed;
    }
    cmd_pretrain(cfg, common.model);
    fmt::print("wrote {} (checksum {:016x})\n", common.model, freeze_checksum(load_model(common.model)));
  } else if (name == "learn") {
    cmd_learn(cfg, parse_method(method_name), common.model, dataset, shots, learn_seed, learn_out);
    fmt::print("wrote {}\n", learn_out);
  } else if (name == "eval") {
    const std::optional<fs::path> p = prompts_path.empty() ? std::nullopt : std::optional<fs::path>(prompts_path);
    const RunResult r = cmd_eval(cfg, common.model, p, dataset, eval_out);
    fmt::print("{} on {}: mIoU {:.4f}\nwrote {}\n", r.method, r.dataset, r.miou, eval_out);
  } else if (name == "gradcheck") {
    const GradcheckReport rep = cmd_gradcheck(gc_seed);
    for (const auto& e : rep.entries) fmt::print("{:<32} {:>4} elems  rel err {:.3e}\n", e.name, e.elements, e.max_rel_error);
    fmt::print("max relative error {:.3e} (eps {:g}): {}\n", rep.worst(), rep.eps, rep.passed() ? "PASS" : "FAIL");
    return rep.passed() ? 0 : static_cast<int>(ExitCode::criteria_failed);
  } else if (name == "export") {
    const Benchmark b = make_benchmark(cfg);
    const Dataset& d = b.split(dataset).eval;
    for (std::size_t i = 0; i < std::min(export_count, d.size()); ++i) {
      const fs::path stem = fs::path(export_dir) / fmt::format("{}_{:03}", dataset, i);
      write_file(stem.string() + ".ppm", to_ppm(d.samples[i].image));
      write_file(stem.string() + ".labels.txt", to_label_text(d.samples[i].labels));
    }
    fmt::print("wrote {} samples to {}\n", std::min(export_count, d.size()), export_dir);
  } else {
    const Lab lab = open_lab(cfg, common.model);
    const std::uint64_t before = freeze_checksum(lab.model);
    const bool plots = !common.no_plots;
    if (name == "ablate") report_suite(run_ablation(lab, common.out, plots));
    if (name == "shots") report_suite(run_shots(lab, common.out, plots));
    if (name == "conditions") report_suite(run_conditions(lab, common.out, plots));
    if (name == "vspl") report_suite(run_vspl(lab, common.out, plots));
    if (name == "bench") {
      const BenchOutput b = run_bench(lab, common.out, plots);
      for (std::size_t i = 0; i < b.rows.size(); ++i) {
        const auto& t = b.timings[i];
        fmt::print("{:<10} {:.4f} ms/step (sd {:.4f}), peak {} B, encoder calls image/spatial/text {}/{}/{}\n",
                   b.rows[i].method, t.mean_ms, t.stddev_ms, t.peak_tensor_bytes, t.loop_calls.image,
                   t.loop_calls.spatial, t.loop_calls.text);
      }
      for (const auto& f : b.files) fmt::print("wrote {}\n", f.string());
    }
    if (name == "weights") {
      const WeightsOutput w = run_weights(lab, common.out, plots);
      for (std::size_t s = 0; s < w.reports.size(); ++s) {
        fmt::print("seed {}: mean (1 - w) frequent {:.4f}, rare {:.4f}\n", s, *w.reports[s].frequent_encoder_mean,
                   *w.reports[s].rare_encoder_mean);
      }
      for (const auto& f : w.files) fmt::print("wrote {}\n", f.string());
    }
    if (freeze_checksum(lab.model) != before) throw std::logic_error("frozen model changed during the suite");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const MissingInput& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return static_cast<int>(ExitCode::missing_input);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return static_cast<int>(ExitCode::bad_config);
  } catch (const TrainingDiverged& e) {
    fmt::print(stderr, "training diverged at step {}: {}\n", e.step(), e.what());
    return static_cast<int>(ExitCode::diverged);
  } catch (const CheckpointError& e) {
    fmt::print(stderr, "checkpoint error: {}\n", e.what());
    return static_cast<int>(ExitCode::bad_checkpoint);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return static_cast<int>(ExitCode::failure);
  }
}
