#include <doctest.h>

#include "helpers.hpp"
#include "ssp/report.hpp"

using namespace ssp;

TEST_CASE("config text round trip") {
  RunConfig cfg = RunConfig::defaults();
  cfg.train.base_lr = 0.25;
  cfg.train.semantic_weights = WeightsMode::fixed_half;
  cfg.downstream.noise_sigma = 0.07;
  cfg.sizes.eval = 33;
  cfg.data_seed = 123456789012345ull;
  const std::string text = to_text(cfg);
  CHECK(to_text(parse_config(text)) == text);
  const RunConfig back = parse_config(text);
  CHECK(back.train.base_lr == 0.25);
  CHECK(back.train.semantic_weights == WeightsMode::fixed_half);
  CHECK(back.sizes.eval == 33);
  CHECK(back.data_seed == 123456789012345ull);
  CHECK(config_keys().size() == static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
}

TEST_CASE("config parsing") {
  const RunConfig cfg = parse_config("# comment\n\ntrain.total_steps = 42\n  suite.seeds=3  \n");
  CHECK(cfg.train.total_steps == 42);
  CHECK(cfg.suite_seeds == 3);
  CHECK(cfg.train.base_lr == RunConfig::defaults().train.base_lr);

  const auto error_of = [](const char* text) {
    try {
      (void)parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(error_of("nonsense.key=1\n").find("line 1") != std::string::npos);
  CHECK(error_of("train.seed=1\ntrain.seed=2\n").find("line 2") != std::string::npos);
  CHECK_FALSE(error_of("train.batch_size=abc\n").empty());
  CHECK_FALSE(error_of("train.batch_size=0\n").empty());
  CHECK_FALSE(error_of("model.patch_size=5\n").empty());
  CHECK_FALSE(error_of("train.random_flip=maybe\n").empty());
  CHECK_FALSE(error_of("missing equals sign\n").empty());
  CHECK_FALSE(error_of("data.pool_size=-4\n").empty());
  CHECK_THROWS_AS(load_config("/nonexistent/run.cfg"), std::exception);
}

TEST_CASE("benchmark domains") {
  RunConfig cfg = RunConfig::defaults();
  cfg.sizes = {4, 4, 4};
  const Benchmark b = make_benchmark(cfg);
  CHECK(b.names == dataset_names());
  CHECK(b.split("fog").eval.size() == 4);
  CHECK_THROWS_AS(b.split("hail"), ConfigError);
  CHECK_FALSE(b.split("downstream").eval.samples[0] == b.split("rain").eval.samples[0]);
  const Benchmark again = make_benchmark(cfg);
  CHECK(again.split("snow").train_pool.samples[3] == b.split("snow").train_pool.samples[3]);
}

TEST_CASE("csv rows") {
  RunResult r;
  r.method = "ssprompt";
  r.dataset = "fog";
  r.condition = "fog";
  r.shots = 16;
  r.seed = 3;
  r.class_iou = {0.5, std::nullopt, 1.0 / 3.0};
  r.miou = 0.41666666;
  r.mem_bytes = 1024;
  CHECK(csv_row(r) == "ssprompt,fog,fog,16,3,0.416667,0.500000;na;0.333333,,1024");
  r.step_ms_mean = 0.123456;
  CHECK(csv_row(r, "median") == "ssprompt,fog,fog,16,median,0.416667,0.500000;na;0.333333,0.1235,1024");
  const std::string doc = csv_document({r, r});
  CHECK(doc.substr(0, doc.find('\n')) == kCsvHeader);
  CHECK(std::count(doc.begin(), doc.end(), '\n') == 3);
  CHECK_THROWS(csv_document({r}, {"a", "b"}));
}

TEST_CASE("svg charts") {
  const std::string bar = svg_bar_chart("A & B <test>", {"x", "y\"z"}, {0.25, 0.75}, "mIoU");
  CHECK(bar.rfind("<?xml", 0) == 0);
  CHECK(bar.find("A &amp; B &lt;test&gt;") != std::string::npos);
  CHECK(bar.find("y&quot;z") != std::string::npos);
  CHECK(bar.find("</svg>") != std::string::npos);
  const std::string line = svg_line_chart("t", {"4", "8"}, {{"a", {0.1, 0.2}}, {"b", {0.3, 0.1}}}, "m");
  CHECK(line.find("<polyline") != std::string::npos);
  CHECK_THROWS(svg_bar_chart("t", {"a"}, {1.0, 2.0}, "y"));
  CHECK_THROWS(svg_line_chart("t", {"a", "b"}, {{"s", {1.0}}}, "y"));
}
