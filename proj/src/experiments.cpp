#include "ssp/experiments.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>

#include "ssp/persist.hpp"
#include "ssp/report.hpp"
#include "ssp/rng.hpp"

namespace ssp {

namespace fs = std::filesystem;

namespace {

std::string read_existing(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw MissingInput(fmt::format("{} not found: {}", what, path.string()));
  return read_file(path);
}

std::string condition_of(const std::string& dataset) {
  return dataset == "source" || dataset == "downstream" ? "clean" : dataset;
}

const fs::path& write(std::vector<fs::path>& files, const fs::path& path, std::string_view bytes) {
  write_file(path, bytes);
  files.push_back(path);
  return files.back();
}

}  // namespace

void save_model(const FrozenModel& model, const fs::path& path) { write_file(path, store(model.named_tensors())); }

FrozenModel load_model(const fs::path& path) {
  const NamedTensors tensors = load(read_existing(path, "model checkpoint"));
  try {
    return FrozenModel::restore(tensors);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointError::Reason::malformed, fmt::format("{}: {}", path.string(), e.what()));
  }
}

void save_prompts(const PromptsFile& file, const fs::path& path) { write_file(path, store(to_named_tensors(file))); }

PromptsFile load_prompts(const fs::path& path) {
  const NamedTensors tensors = load(read_existing(path, "prompts file"));
  try {
    return prompts_from_named_tensors(tensors);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointError::Reason::malformed, fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<bool> Lab::frequent_classes() const {
  std::vector<bool> out;
  for (const auto& style : source_spec(cfg).palette) out.push_back(style.foreground);
  return out;
}

Lab make_lab(const RunConfig& cfg, FrozenModel model) {
  cfg.validate();
  if (model.config().image_size != cfg.model.image_size) {
    throw ConfigError(fmt::format("model image size {} differs from config model.image_size {}",
                                  model.config().image_size, cfg.model.image_size));
  }
  return Lab{cfg, std::move(model), make_benchmark(cfg)};
}

Lab open_lab(const RunConfig& cfg, const fs::path& model_path) { return make_lab(cfg, load_model(model_path)); }

FrozenModel pretrain_model(const RunConfig& cfg, PretrainReport* report) {
  cfg.validate();
  const SceneSpec spec = source_spec(cfg);
  const Dataset corpus = generate_dataset(spec, cfg.sizes.pretrain, cfg.data_seed, "pretrain");
  std::vector<bool> rare;
  for (const auto& style : spec.palette) rare.push_back(!style.foreground);
  return pretrain(cfg.model, ModelWeights::random(cfg.model, cfg.model_seed), corpus, rare, cfg.pretrain, report);
}

// ---- plans

void ExperimentPlan::validate(const Lab& lab) const {
  if (cells.empty()) throw ConfigError("experiment plan has no cells");
  for (const Cell& cell : cells) {
    const DownstreamSplit& split = lab.bench.split(cell.dataset);
    if (cell.method != Method::default_prompts) {
      if (cell.shots == 0) throw ConfigError(fmt::format("cell '{}': shots must be positive", cell.label));
      (void)few_shot_sample(split.train_pool, cell.shots, cell.sample_seed);
    }
  }
  if (!out_dir.empty()) fs::create_directories(out_dir);
}

std::vector<RunResult> run_plan(const Lab& lab, const ExperimentPlan& plan) {
  plan.validate(lab);
  const auto class_names = lab.bench.pretrain.class_names;
  std::vector<RunResult> out;
  for (const Cell& cell : plan.cells) {
    const DownstreamSplit& split = lab.bench.split(cell.dataset);
    RunResult r;
    r.method = cell.label;
    r.dataset = cell.dataset;
    r.condition = condition_of(cell.dataset);
    r.seed = cell.seed;
    LearnedPrompts prompts;
    if (cell.method == Method::default_prompts) {
      prompts = default_prompts(lab.model, class_names);
    } else {
      const Dataset fewshot = few_shot_sample(split.train_pool, cell.shots, cell.sample_seed);
      TrainConfig tc = lab.cfg.train;
      tc.seed = cell.seed;
      tc.spatial_weights = cell.spatial_weights;
      tc.semantic_weights = cell.semantic_weights;
      TrainResult tr = train(cell.method, lab.model, fewshot, tc);
      prompts = std::move(tr.prompts);
      r.shots = cell.shots;
      r.mem_bytes = tr.peak_tensor_bytes;
    }
    const EvalResult e = evaluate(lab.model, prompts, split.eval);
    r.class_iou = e.class_iou;
    r.miou = e.miou;
    r.text_weights = prompts.text_weights;
    r.spatial_weights = prompts.spatial_weights;
    out.push_back(std::move(r));
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<SuiteRow> summarize(const std::vector<RunResult>& results) {
  std::vector<SuiteRow> rows;
  std::map<std::string, std::size_t> index;
  for (const RunResult& r : results) {
    const std::string key = fmt::format("{}|{}|{}", r.method, r.dataset, r.shots);
    auto [it, fresh] = index.emplace(key, rows.size());
    if (fresh) rows.push_back({r.method, {}, {}});
    rows[it->second].runs.push_back(r);
  }
  for (SuiteRow& row : rows) {
    RunResult m = row.runs.front();
    std::vector<double> miou, mem, step;
    for (const RunResult& r : row.runs) {
      miou.push_back(r.miou);
      mem.push_back(static_cast<double>(r.mem_bytes));
      if (r.step_ms_mean) step.push_back(*r.step_ms_mean);
    }
    m.miou = median(miou);
    m.mem_bytes = static_cast<std::int64_t>(median(mem));
    m.step_ms_mean = step.empty() ? std::nullopt : std::optional<double>(median(step));
    m.step_ms_stddev.reset();
    for (std::size_t c = 0; c < m.class_iou.size(); ++c) {
      std::vector<double> v;
      for (const RunResult& r : row.runs) {
        if (r.class_iou[c]) v.push_back(*r.class_iou[c]);
      }
      m.class_iou[c] = v.empty() ? std::nullopt : std::optional<double>(median(v));
    }
    m.text_weights.reset();
    m.spatial_weights.reset();
    row.median = std::move(m);
  }
  return rows;
}

const SuiteRow& SuiteOutput::row(const std::string& label) const {
  for (const auto& r : rows) {
    if (r.label == label) return r;
  }
  throw std::out_of_range("no suite row '" + label + "'");
}

namespace {

// With per_seed_sample each seed also draws its own few-shot sample;
// otherwise all seeds share the data_seed sample.
std::vector<Cell> seeded(const RunConfig& cfg, Cell base, bool per_seed_sample = false) {
  std::vector<Cell> out;
  for (std::uint64_t s = 0; s < cfg.suite_seeds; ++s) {
    base.seed = s;
    if (per_seed_sample) base.sample_seed = mix_seed(cfg.data_seed, s);
    out.push_back(base);
  }
  return out;
}

void append(std::vector<Cell>& cells, const std::vector<Cell>& more) { cells.insert(cells.end(), more.begin(), more.end()); }

SuiteOutput write_suite(const std::string& name, const std::vector<RunResult>& runs, const fs::path& out_dir) {
  SuiteOutput out;
  out.rows = summarize(runs);
  std::vector<RunResult> medians;
  for (const auto& row : out.rows) medians.push_back(row.median);
  write(out.files, out_dir / (name + ".csv"),
        csv_document(medians, std::vector<std::string>(medians.size(), "median")));
  write(out.files, out_dir / (name + "_runs.csv"), csv_document(runs));
  return out;
}

std::vector<std::string> labels_of(const std::vector<SuiteRow>& rows) {
  std::vector<std::string> out;
  for (const auto& r : rows) out.push_back(r.label);
  return out;
}

std::vector<double> medians_of(const std::vector<SuiteRow>& rows) {
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r.median.miou);
  return out;
}

Cell cell(std::string label, Method method, const RunConfig& cfg, std::string dataset = "downstream") {
  Cell c;
  c.label = std::move(label);
  c.method = method;
  c.dataset = std::move(dataset);
  c.shots = cfg.suite_shots;
  c.sample_seed = cfg.data_seed;
  return c;
}

}  // namespace

SuiteOutput run_ablation(const Lab& lab, const fs::path& out_dir, bool plots) {
  const RunConfig& cfg = lab.cfg;
  ExperimentPlan plan{{}, out_dir, plots};
  Cell spa_half = cell("spa-embed-half", Method::spaprompt, cfg);
  spa_half.spatial_weights = WeightsMode::fixed_half;
  Cell sem_half = cell("sem-embed-half", Method::semprompt, cfg);
  sem_half.semantic_weights = WeightsMode::fixed_half;
  for (const Cell& c : {cell("default", Method::default_prompts, cfg), spa_half,
                        cell("spa-embed+weights", Method::spaprompt, cfg), sem_half,
                        cell("sem-embed+weights", Method::semprompt, cfg), cell("ssprompt", Method::ssprompt, cfg)}) {
    append(plan.cells, seeded(cfg, c));
  }
  SuiteOutput out = write_suite("ablation", run_plan(lab, plan), out_dir);
  if (plots) {
    write(out.files, out_dir / "ablation.svg",
          svg_bar_chart("Ablation: median mIoU over seeds", labels_of(out.rows), medians_of(out.rows), "mIoU"));
  }
  return out;
}

SuiteOutput run_shots(const Lab& lab, const fs::path& out_dir, bool plots) {
  const RunConfig& cfg = lab.cfg;
  ExperimentPlan plan{{}, out_dir, plots};
  append(plan.cells, seeded(cfg, cell("default", Method::default_prompts, cfg)));
  const std::size_t shots[] = {4, 8, 12, 16};
  for (std::size_t k : shots) {
    Cell c = cell("ssprompt", Method::ssprompt, cfg);
    c.shots = k;
    append(plan.cells, seeded(cfg, c, true));
  }
  SuiteOutput out = write_suite("shots", run_plan(lab, plan), out_dir);
  if (plots) {
    std::vector<std::string> x;
    Series learned{"ssprompt", {}}, baseline{"default", {}};
    for (std::size_t i = 0; i < std::size(shots); ++i) {
      x.push_back(std::to_string(shots[i]));
      learned.values.push_back(out.rows[1 + i].median.miou);
      baseline.values.push_back(out.rows[0].median.miou);
    }
    write(out.files, out_dir / "shots.svg",
          svg_line_chart("Median mIoU versus shots per class", x, {learned, baseline}, "mIoU"));
  }
  return out;
}

SuiteOutput run_conditions(const Lab& lab, const fs::path& out_dir, bool plots) {
  const RunConfig& cfg = lab.cfg;
  ExperimentPlan plan{{}, out_dir, plots};
  const std::vector<std::string> datasets = {"downstream", "fog", "night", "rain", "snow"};
  const std::pair<const char*, Method> methods[] = {
      {"default", Method::default_prompts}, {"coop", Method::coop}, {"ssprompt", Method::ssprompt}};
  for (const auto& d : datasets) {
    for (const auto& [label, m] : methods) append(plan.cells, seeded(cfg, cell(label, m, cfg, d)));
  }
  SuiteOutput out = write_suite("conditions", run_plan(lab, plan), out_dir);
  if (plots) {
    std::vector<Series> series;
    for (const auto& [label, m] : methods) {
      Series s{label, {}};
      for (const auto& row : out.rows) {
        if (row.label == label) s.values.push_back(row.median.miou);
      }
      series.push_back(std::move(s));
    }
    std::vector<std::string> x;
    for (const auto& d : datasets) x.push_back(condition_of(d));
    write(out.files, out_dir / "conditions.svg", svg_line_chart("Median mIoU per condition", x, series, "mIoU"));
  }
  return out;
}

SuiteOutput run_vspl(const Lab& lab, const fs::path& out_dir, bool plots) {
  const RunConfig& cfg = lab.cfg;
  ExperimentPlan plan{{}, out_dir, plots};
  for (const Cell& c : {cell("default", Method::default_prompts, cfg), cell("vspl", Method::vspl, cfg),
                        cell("spaprompt", Method::spaprompt, cfg), cell("ssprompt", Method::ssprompt, cfg)}) {
    append(plan.cells, seeded(cfg, c));
  }
  SuiteOutput out = write_suite("vspl", run_plan(lab, plan), out_dir);
  if (plots) {
    write(out.files, out_dir / "vspl.svg",
          svg_bar_chart("Coordinate vs embedding spatial prompts", labels_of(out.rows), medians_of(out.rows), "mIoU"));
  }
  return out;
}

BenchOutput run_bench(const Lab& lab, const fs::path& out_dir, bool plots) {
  const RunConfig& cfg = lab.cfg;
  ExperimentPlan plan{{cell("ssprompt", Method::ssprompt, cfg), cell("coop", Method::coop, cfg),
                       cell("semprompt", Method::semprompt, cfg)},
                      out_dir, plots};
  plan.validate(lab);
  const DownstreamSplit& split = lab.bench.split("downstream");
  const Dataset fewshot = few_shot_sample(split.train_pool, cfg.suite_shots, cfg.data_seed);

  BenchOutput out;
  std::string counters =
      "method,steps,warmup,step_ms_mean,step_ms_stddev,peak_tensor_bytes,image_encoder_calls,spatial_encoder_calls,"
      "text_encoder_calls\n";
  for (const Cell& c : plan.cells) {
    TrainConfig tc = cfg.train;
    tc.seed = 0;
    const TimingReport t = time_training(c.method, lab.model, fewshot, tc, cfg.bench_steps, cfg.bench_warmup);
    const EvalResult e = evaluate(lab.model, t.prompts, split.eval);
    RunResult r;
    r.method = c.label;
    r.dataset = c.dataset;
    r.condition = condition_of(c.dataset);
    r.shots = c.shots;
    r.seed = tc.seed;
    r.class_iou = e.class_iou;
    r.miou = e.miou;
    r.step_ms_mean = t.mean_ms;
    r.step_ms_stddev = t.stddev_ms;
    r.mem_bytes = t.peak_tensor_bytes;
    counters += fmt::format("{},{},{},{:.4f},{:.4f},{},{},{},{}\n", c.label, cfg.bench_steps, cfg.bench_warmup, t.mean_ms,
                            t.stddev_ms, t.peak_tensor_bytes, t.loop_calls.image, t.loop_calls.spatial,
                            t.loop_calls.text);
    out.rows.push_back(std::move(r));
    out.timings.push_back(t);
  }
  write(out.files, out_dir / "bench.csv", csv_document(out.rows));
  write(out.files, out_dir / "bench_counters.csv", counters);
  if (plots) {
    std::vector<std::string> labels;
    std::vector<double> ms;
    for (const auto& r : out.rows) {
      labels.push_back(r.method);
      ms.push_back(*r.step_ms_mean);
    }
    write(out.files, out_dir / "bench.svg", svg_bar_chart("Mean wall time per training step", labels, ms, "ms"));
  }
  return out;
}

WeightsOutput run_weights(const Lab& lab, const fs::path& out_dir, bool plots) {
  const RunConfig& cfg = lab.cfg;
  ExperimentPlan plan{seeded(cfg, cell("semprompt", Method::semprompt, cfg)), out_dir, plots};
  const std::vector<RunResult> runs = run_plan(lab, plan);
  const std::vector<bool> frequent = lab.frequent_classes();
  const auto& names = lab.bench.pretrain.class_names;

  WeightsOutput out;
  std::string csv = "seed,class,role,learnable_weight,encoder_weight\n";
  std::vector<double> mean_encoder(names.size(), 0.0);
  for (const RunResult& r : runs) {
    WeightReport rep = weight_report(names, *r.text_weights, frequent);
    for (std::size_t c = 0; c < names.size(); ++c) {
      csv += fmt::format("{},{},{},{:.6f},{:.6f}\n", r.seed, names[c], frequent[c] ? "frequent" : "rare",
                         rep.weights[c], 1.0 - rep.weights[c]);
      mean_encoder[c] += (1.0 - rep.weights[c]) / static_cast<double>(runs.size());
    }
    out.reports.push_back(std::move(rep));
  }
  write(out.files, out_dir / "weights.csv", csv);
  write(out.files, out_dir / "weights_runs.csv", csv_document(runs));
  if (plots) {
    write(out.files, out_dir / "weights.svg",
          svg_bar_chart("Mean encoder-side weight (1 - w) per class", names, mean_encoder, "1 - w"));
  }
  return out;
}

// ---- single commands

void cmd_pretrain(const RunConfig& cfg, const fs::path& out) {
  const FrozenModel model = pretrain_model(cfg);
  save_model(model, out);
  write_file(fs::path(out.string() + ".cfg"), to_text(cfg));
}

void cmd_learn(const RunConfig& cfg, Method method, const fs::path& model_path, const std::string& dataset,
               std::size_t shots, std::uint64_t seed, const fs::path& out) {
  const Lab lab = open_lab(cfg, model_path);
  const DownstreamSplit& split = lab.bench.split(dataset);
  const Dataset fewshot = few_shot_sample(split.train_pool, shots, seed);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  const std::uint64_t before = freeze_checksum(lab.model);
  const TrainResult r = train(method, lab.model, fewshot, tc);
  if (!freeze_audit(lab.model, before, freeze_checksum(lab.model))) {
    throw std::logic_error("frozen model parameters changed during prompt learning");
  }
  save_prompts({r.prompts, method, method == Method::default_prompts ? 0 : shots, seed}, out);
}

RunResult cmd_eval(const RunConfig& cfg, const fs::path& model_path, const std::optional<fs::path>& prompts_path,
                   const std::string& dataset, const fs::path& out) {
  const Lab lab = open_lab(cfg, model_path);
  const DownstreamSplit& split = lab.bench.split(dataset);
  const PromptsFile file = prompts_path ? load_prompts(*prompts_path)
                                        : PromptsFile{default_prompts(lab.model, split.eval.class_names),
                                                      Method::default_prompts, 0, 0};
  const EvalResult e = evaluate(lab.model, file.prompts, split.eval);
  RunResult r;
  r.method = to_string(file.method);
  r.dataset = dataset;
  r.condition = condition_of(dataset);
  r.shots = file.shots;
  r.seed = file.seed;
  r.class_iou = e.class_iou;
  r.miou = e.miou;
  write_file(out, csv_document({r}));
  return r;
}

GradcheckReport cmd_gradcheck(std::uint64_t seed) { return run_gradcheck(seed); }

}  // namespace ssp
