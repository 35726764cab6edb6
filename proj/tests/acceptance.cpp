// Runs the ten acceptance criteria end to end and prints one PASS/FAIL line
// per criterion. Exit status is 0 when every criterion not listed with
// --known-failure passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "ssp/experiments.hpp"
#include "ssp/persist.hpp"

namespace fs = std::filesystem;
using namespace ssp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool same_bytes(const fs::path& a, const fs::path& b) { return read_file(a) == read_file(b); }

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport rep = cmd_gradcheck(0);
  const double secs = seconds_since(t0);
  std::string worst_name;
  for (const auto& e : rep.entries) {
    if (e.max_rel_error == rep.worst()) worst_name = e.name;
  }
  return {rep.passed(1e-4) && secs < 30.0,
          fmt::format("{} checks, max rel err {:.2e} ({}), {:.2f} s", rep.entries.size(), rep.worst(), worst_name, secs)};
}

Outcome zero_shot_preservation(const Lab& lab) {
  const Dataset& eval = lab.bench.split("downstream").eval;
  auto [spatial, semantic] = init_prompt_sets(lab.model, eval.class_names);
  const LearnedPrompts defaults = default_prompts(lab.model, eval.class_names);
  double worst = 0.0;
  const std::size_t n = std::min<std::size_t>(20, eval.size());
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor z_img = lab.model.encode_image(eval.samples[i].image);
    const Prediction base = lab.model.decode(z_img, defaults.spatial, defaults.text);

    Graph g;
    const WeightNodes w = lab.model.bind(g);
    const Node zs = fuse(g, g.constant_ref(spatial.prompts.defaults), g.param(spatial.prompts.learnable),
                         g.param(spatial.prompts.weight_logits), spatial.prompts.mode);
    const Node zt = fuse(g, g.constant_ref(semantic.prompts.defaults), g.param(semantic.prompts.learnable),
                         g.param(semantic.prompts.weight_logits), semantic.prompts.mode);
    const DecodeNodes fused = lab.model.decode(g, w, g.constant_ref(z_img), zs, zt);
    worst = std::max({worst, max_abs_diff(base.semantic_logits, fused.semantic_logits.value()),
                      max_abs_diff(base.mask_logits, fused.mask_logits.value()),
                      max_abs_diff(base.class_scores, fused.class_scores.value())});
  }
  return {worst <= 1e-12, fmt::format("{} images, max |logit diff| {:.3e}", n, worst)};
}

Outcome ablation_ordering(const SuiteOutput& a, double secs) {
  const auto m = [&](const char* label) { return a.row(label).median.miou; };
  const double d = m("default"), sph = m("spa-embed-half"), spw = m("spa-embed+weights"), smh = m("sem-embed-half"),
               smw = m("sem-embed+weights"), full = m("ssprompt");
  const bool spatial = d < sph && sph < spw;
  const bool semantic = d < smh && smh < smw;
  const bool top = full >= std::max({sph, spw, smh, smw}) - 0.005;
  return {spatial && semantic && top && secs < 600.0,
          fmt::format("default {:.4f}; spa half {:.4f} < weights {:.4f}: {}; sem half {:.4f} < weights {:.4f}: {}; "
                      "ssprompt {:.4f} top: {}; {:.1f} s",
                      d, sph, spw, spatial ? "yes" : "no", smh, smw, semantic ? "yes" : "no", full, top ? "yes" : "no",
                      secs)};
}

Outcome vspl_comparison(const SuiteOutput& v) {
  const double d = v.row("default").median.miou, vs = v.row("vspl").median.miou, sp = v.row("spaprompt").median.miou;
  return {vs >= d && sp - vs >= 0.01, fmt::format("default {:.4f} <= vspl {:.4f}, spaprompt {:.4f} (gap {:.4f})", d, vs,
                                                  sp, sp - vs)};
}

Outcome shot_sweep(const SuiteOutput& s) {
  const double d = s.rows.front().median.miou;
  std::vector<double> m;
  for (std::size_t i = 1; i < s.rows.size(); ++i) m.push_back(s.rows[i].median.miou);
  bool monotone = true;
  for (std::size_t i = 1; i < m.size(); ++i) monotone = monotone && m[i] >= m[i - 1] - 0.01;
  return {m.size() == 4 && m.front() > d && monotone,
          fmt::format("default {:.4f}; k=4,8,12,16: {:.4f}", d, fmt::join(m, ", "))};
}

Outcome efficiency(const BenchOutput& b, std::size_t steps) {
  const TimingReport* ss = nullptr;
  const TimingReport* coop = nullptr;
  for (std::size_t i = 0; i < b.rows.size(); ++i) {
    if (b.rows[i].method == "ssprompt") ss = &b.timings[i];
    if (b.rows[i].method == "coop") coop = &b.timings[i];
  }
  if (!ss || !coop) return {false, "bench rows missing"};
  const bool counters = ss->loop_calls.text == 0 && ss->loop_calls.spatial == 0 && coop->loop_calls.text == steps;
  const bool faster = ss->mean_ms < coop->mean_ms;
  return {counters && faster,
          fmt::format("text encoder calls ssprompt {} / coop {} over {} steps: {}; ms/step ssprompt {:.4f} vs coop {:.4f}: {}",
                      ss->loop_calls.text, coop->loop_calls.text, steps, counters ? "ok" : "wrong", ss->mean_ms,
                      coop->mean_ms, faster ? "faster" : "slower")};
}

Outcome weight_bias(const WeightsOutput& w) {
  std::size_t wins = 0;
  std::vector<std::string> parts;
  for (const auto& r : w.reports) {
    const bool win = r.comparable() && *r.frequent_encoder_mean > *r.rare_encoder_mean;
    wins += win;
    parts.push_back(r.comparable() ? fmt::format("{:.3f}/{:.3f}", *r.frequent_encoder_mean, *r.rare_encoder_mean) : "n/a");
  }
  return {wins >= 4, fmt::format("frequent > rare encoder-side weight in {}/{} seeds ({})", wins, w.reports.size(),
                                 fmt::join(parts, " "))};
}

Outcome determinism(const RunConfig& cfg, const fs::path& work, const Lab& lab, const SuiteOutput& first_ablation) {
  std::vector<std::string> failed;
  const auto check = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  const fs::path a = work / "rerun_a", b = work / "rerun_b";
  fs::create_directories(a);
  fs::create_directories(b);

  cmd_pretrain(cfg, a / "model.ckpt");
  cmd_pretrain(cfg, b / "model.ckpt");
  check(same_bytes(a / "model.ckpt", b / "model.ckpt"), "pretrain checkpoint");
  check(same_bytes(a / "model.ckpt.cfg", b / "model.ckpt.cfg"), "pretrain config");

  for (const fs::path& dir : {a, b}) {
    cmd_learn(cfg, Method::ssprompt, a / "model.ckpt", "downstream", cfg.suite_shots, 3, dir / "prompts.ckpt");
    cmd_eval(cfg, a / "model.ckpt", dir / "prompts.ckpt", "downstream", dir / "eval.csv");
  }
  check(same_bytes(a / "prompts.ckpt", b / "prompts.ckpt"), "learned prompts");
  check(same_bytes(a / "eval.csv", b / "eval.csv"), "eval csv");

  const SuiteOutput again = run_ablation(lab, work / "ablation_rerun");
  for (std::size_t i = 0; i < again.files.size(); ++i) {
    check(same_bytes(first_ablation.files[i], again.files[i]), again.files[i].filename().string());
  }

  // Round trips.
  const std::string model_bytes = read_file(a / "model.ckpt");
  check(store(load(model_bytes)) == model_bytes, "store(load) of model bytes");
  const FrozenModel restored = load_model(a / "model.ckpt");
  check(freeze_checksum(restored) == freeze_checksum(lab.model), "restored model checksum");
  const PromptsFile p = load_prompts(a / "prompts.ckpt");
  check(store(to_named_tensors(p)) == read_file(a / "prompts.ckpt"), "prompts round trip");

  // Corruption.
  std::size_t rejected = 0, attempts = 0;
  const auto expect_reject = [&](std::string bytes, const std::string& what) {
    ++attempts;
    write_file(work / "corrupt.ckpt", bytes);
    try {
      (void)load_model(work / "corrupt.ckpt");
      failed.push_back("accepted " + what);
    } catch (const CheckpointError&) {
      ++rejected;
    }
  };
  for (std::size_t pos : {std::size_t{0}, model_bytes.size() / 2, model_bytes.size() - 1}) {
    std::string bad = model_bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x5A);
    expect_reject(bad, fmt::format("byte flip at {}", pos));
  }
  expect_reject(model_bytes.substr(0, model_bytes.size() / 3), "truncation");
  expect_reject(model_bytes + "x", "trailing byte");

  return {failed.empty(), failed.empty() ? fmt::format("checkpoints, prompts, eval and suite outputs byte-identical on "
                                                       "rerun; round trips exact; {}/{} corruptions rejected",
                                                       rejected, attempts)
                                         : fmt::format("mismatch: {}", fmt::join(failed, ", "))};
}

Outcome metric_oracle() {
  const double m = miou(ConfusionMatrix::from_counts(2, {2, 1, 0, 1}));
  const std::vector<int> gt = {0, 0, 1, 1, 2, 2};
  const std::vector<int> same = gt;
  const std::vector<int> disjoint = {1, 2, 0, 2, 0, 1};
  const double perfect = miou(confusion(same, gt, 3));
  const double none = miou(confusion(disjoint, gt, 3));
  return {std::abs(m - 7.0 / 12.0) <= 1e-12 && perfect == 1.0 && none == 0.0,
          fmt::format("[[2,1],[0,1]] -> {:.15f} (7/12 = {:.15f}); perfect {}; disjoint {}", m, 7.0 / 12.0, perfect, none)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work_dir = "acceptance_work";
  std::vector<int> known;
  app.add_option("--work-dir", work_dir, "Scratch directory for checkpoints and suite outputs");
  app.add_option("--known-failure", known, "Criterion numbers whose failure does not affect the exit status");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> known_failures(known.begin(), known.end());

  std::vector<std::pair<int, Outcome>> results;
  const auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    fmt::print("criterion {:>2} {:<26} {}  {}\n", id, name, o.pass ? "PASS" : "FAIL", o.detail);
    std::fflush(stdout);
    results.emplace_back(id, o);
  };

  const fs::path work = fs::absolute(work_dir);
  fs::remove_all(work);
  fs::create_directories(work);
  const RunConfig cfg = RunConfig::defaults();
  cmd_pretrain(cfg, work / "model.ckpt");
  const Lab lab = open_lab(cfg, work / "model.ckpt");

  report(1, "gradient correctness", gradients);
  report(2, "zero-shot preservation", [&] { return zero_shot_preservation(lab); });

  const std::uint64_t before = freeze_checksum(lab.model);
  const auto t0 = std::chrono::steady_clock::now();
  const SuiteOutput ablation = run_ablation(lab, work / "ablation");
  const double ablation_secs = seconds_since(t0);
  const std::uint64_t after = freeze_checksum(lab.model);
  const std::uint64_t reloaded = freeze_checksum(load_model(work / "model.ckpt"));
  report(3, "frozen-model invariance", [&] {
    return Outcome{before == after && after == reloaded,
                   fmt::format("checksum {:016x} before, {:016x} after, {:016x} reloaded", before, after, reloaded)};
  });
  report(4, "ablation ordering", [&] { return ablation_ordering(ablation, ablation_secs); });
  report(5, "vspl vs spaprompt", [&] { return vspl_comparison(run_vspl(lab, work / "vspl")); });
  report(6, "shot sweep", [&] { return shot_sweep(run_shots(lab, work / "shots")); });
  report(7, "training efficiency", [&] { return efficiency(run_bench(lab, work / "bench"), cfg.bench_steps); });
  report(8, "fusion weight bias", [&] { return weight_bias(run_weights(lab, work / "weights")); });
  report(9, "determinism and round trip", [&] { return determinism(cfg, work, lab, ablation); });
  report(10, "metric oracle", metric_oracle);

  int unexpected = 0;
  for (const auto& [id, o] : results) {
    if (!o.pass && !known_failures.count(id)) ++unexpected;
  }
  const auto passed = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.second.pass; });
  fmt::print("{}/{} criteria pass", passed, results.size());
  if (!known_failures.empty()) fmt::print("; known failures: {}", fmt::join(known_failures, ","));
  fmt::print("\n");
  return unexpected == 0 ? 0 : static_cast<int>(ExitCode::criteria_failed);
}
