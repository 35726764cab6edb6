#include <filesystem>

#include <doctest.h>

#include "helpers.hpp"
#include "ssp/persist.hpp"
#include "ssp/report.hpp"

namespace fs = std::filesystem;
using namespace ssp;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "ssp_experiments_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("median") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK_THROWS(median({}));
}

TEST_CASE("model and prompts files") {
  const Lab& lab = test::small_lab();
  const fs::path dir = scratch("files");
  save_model(lab.model, dir / "m.ckpt");
  CHECK(freeze_checksum(load_model(dir / "m.ckpt")) == freeze_checksum(lab.model));
  CHECK_THROWS_AS(load_model(dir / "missing.ckpt"), MissingInput);
  write_file(dir / "junk.ckpt", "not a checkpoint");
  CHECK_THROWS_AS(load_model(dir / "junk.ckpt"), CheckpointError);
  // A valid container holding the wrong tensors.
  write_file(dir / "wrong.ckpt", store({{"w", Tensor({2})}}));
  CHECK_THROWS_AS(load_model(dir / "wrong.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_prompts(dir / "missing.ckpt"), MissingInput);
}

TEST_CASE("commands") {
  const Lab& lab = test::small_lab();
  const RunConfig& cfg = lab.cfg;
  const fs::path dir = scratch("commands");
  save_model(lab.model, dir / "m.ckpt");

  SUBCASE("learn with the default method writes the encoded defaults") {
    cmd_learn(cfg, Method::default_prompts, dir / "m.ckpt", "downstream", 4, 0, dir / "d.ckpt");
    const PromptsFile f = load_prompts(dir / "d.ckpt");
    const LearnedPrompts d = default_prompts(lab.model, lab.bench.pretrain.class_names);
    CHECK(f.prompts.spatial == d.spatial);
    CHECK(f.prompts.text == d.text);
  }

  SUBCASE("eval with default prompts matches the committed row") {
    cmd_eval(cfg, dir / "m.ckpt", std::nullopt, "downstream", dir / "eval.csv");
    CHECK(read_file(dir / "eval.csv") == std::string(kCsvHeader) + "\n" +
                                            "default,downstream,clean,0,0,0.103293,0.619760;0.000000;0.000000;0.000000;0.000000;0.000000,,0" + "\n");
  }

  SUBCASE("learn then eval is reproducible") {
    for (const char* tag : {"a", "b"}) {
      const fs::path p = dir / (std::string(tag) + ".ckpt");
      cmd_learn(cfg, Method::ssprompt, dir / "m.ckpt", "fog", 4, 9, p);
      cmd_eval(cfg, dir / "m.ckpt", p, "fog", dir / (std::string(tag) + ".csv"));
    }
    CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
    CHECK(read_file(dir / "a.csv") == read_file(dir / "b.csv"));
    const PromptsFile f = load_prompts(dir / "a.ckpt");
    CHECK(f.method == Method::ssprompt);
    CHECK(f.shots == 4);
    CHECK(f.seed == 9);
  }

  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(cmd_learn(cfg, Method::ssprompt, dir / "m.ckpt", "hail", 4, 0, dir / "x.ckpt"), ConfigError);
    CHECK_THROWS_AS(cmd_learn(cfg, Method::ssprompt, dir / "m.ckpt", "downstream", 100000, 0, dir / "x.ckpt"),
                    std::invalid_argument);
    CHECK_THROWS_AS(cmd_eval(cfg, dir / "nope.ckpt", std::nullopt, "downstream", dir / "x.csv"), MissingInput);
  }
}

TEST_CASE("loss trace regression fixture") {
  const Lab& lab = test::small_lab();
  const Dataset fs = few_shot_sample(lab.bench.split("downstream").train_pool, 16, lab.cfg.data_seed);
  TrainConfig tc = lab.cfg.train;
  tc.total_steps = 40;
  const TrainResult r = train(Method::ssprompt, lab.model, fs, tc);
  const double expected[] = {1.0648857060635031, 0.67721250463640126, 0.54354075476398744, 0.65757785516274625};
  const std::size_t checkpoints[] = {0, 10, 20, 39};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r.loss_trace[checkpoints[i]] == doctest::Approx(expected[i]).epsilon(1e-10));
  }
  CHECK(r.loss_trace.back() < r.loss_trace.front());
}

TEST_CASE("suites") {
  const Lab& lab = test::small_lab();
  const fs::path dir = scratch("suites");
  const std::uint64_t before = freeze_checksum(lab.model);

  const SuiteOutput a = run_ablation(lab, dir / "a");
  CHECK(freeze_checksum(lab.model) == before);
  REQUIRE(a.rows.size() == 6);
  CHECK(a.rows[0].label == "default");
  CHECK(a.rows[5].label == "ssprompt");
  for (const auto& row : a.rows) {
    CHECK(row.runs.size() == lab.cfg.suite_seeds);
    CHECK((row.median.miou >= 0.0 && row.median.miou <= 1.0));
  }
  CHECK(a.rows[0].median.shots == 0);
  CHECK(fs::exists(dir / "a" / "ablation.csv"));
  CHECK(fs::exists(dir / "a" / "ablation.svg"));
  CHECK_THROWS(a.row("nonexistent"));

  const SuiteOutput again = run_ablation(lab, dir / "b", false);
  CHECK(read_file(dir / "a" / "ablation.csv") == read_file(dir / "b" / "ablation.csv"));
  CHECK(read_file(dir / "a" / "ablation_runs.csv") == read_file(dir / "b" / "ablation_runs.csv"));
  CHECK_FALSE(fs::exists(dir / "b" / "ablation.svg"));

  const BenchOutput bench = run_bench(lab, dir / "bench", false);
  REQUIRE(bench.timings.size() == 3);
  CHECK(bench.timings[0].loop_calls.text == 0);
  CHECK(bench.timings[1].loop_calls.text == lab.cfg.bench_steps);

  const WeightsOutput w = run_weights(lab, dir / "w", false);
  CHECK(w.reports.size() == lab.cfg.suite_seeds);
  for (const auto& r : w.reports) CHECK(r.comparable());
}

TEST_CASE("plans are validated before running") {
  const Lab& lab = test::small_lab();
  ExperimentPlan plan;
  plan.out_dir = scratch("plan");
  Cell c;
  c.dataset = "downstream";
  c.shots = 100000;
  plan.cells = {c};
  CHECK_THROWS_AS(plan.validate(lab), std::invalid_argument);
  plan.cells[0].shots = 2;
  plan.cells[0].dataset = "hail";
  CHECK_THROWS_AS(run_plan(lab, plan), ConfigError);
}
