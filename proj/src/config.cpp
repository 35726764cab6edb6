#include "ssp/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <set>

#include <fmt/format.h>

#include "ssp/persist.hpp"

namespace ssp {

namespace {

template <typename T>
T parse_value(std::string_view text, std::string_view key) {
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true") return true;
    if (text == "false") return false;
  } else if constexpr (std::is_same_v<T, WeightsMode>) {
    if (text == "fixed_half") return WeightsMode::fixed_half;
    if (text == "learnable") return WeightsMode::learnable;
  } else {
    T value{};
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec == std::errc() && end == text.data() + text.size()) return value;
  }
  throw ConfigError(fmt::format("config: bad value '{}' for {}", text, key));
}

template <typename T>
std::string format_value(const T& value) {
  if constexpr (std::is_same_v<T, bool>) return value ? "true" : "false";
  else if constexpr (std::is_same_v<T, WeightsMode>) return to_string(value);
  else return fmt::format("{}", value);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Field field(std::string key, Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<RunConfig&>()))>;
  Field f;
  f.key = key;
  f.set = [access, key](RunConfig& c, std::string_view v) { access(c) = parse_value<T>(v, key); };
  f.get = [access](const RunConfig& c) { return format_value<T>(access(c)); };
  return f;
}

#define SSP_FIELD(key, member) field(key, [](auto& c) -> auto& { return c.member; })

void add_scene_fields(std::vector<Field>& out, const std::string& prefix, SceneKnobs RunConfig::*knobs) {
  out.push_back(field(prefix + ".min_shapes", [knobs](auto& c) -> auto& { return (c.*knobs).min_shapes; }));
  out.push_back(field(prefix + ".max_shapes", [knobs](auto& c) -> auto& { return (c.*knobs).max_shapes; }));
  out.push_back(field(prefix + ".noise_sigma", [knobs](auto& c) -> auto& { return (c.*knobs).noise_sigma; }));
  out.push_back(
      field(prefix + ".texture_amplitude", [knobs](auto& c) -> auto& { return (c.*knobs).texture_amplitude; }));
  out.push_back(
      field(prefix + ".texture_frequency", [knobs](auto& c) -> auto& { return (c.*knobs).texture_frequency; }));
  out.push_back(field(prefix + ".color_jitter", [knobs](auto& c) -> auto& { return (c.*knobs).color_jitter; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f = {
        SSP_FIELD("model.image_size", model.image_size),
        SSP_FIELD("model.patch_size", model.patch_size),
        SSP_FIELD("model.embed_dim", model.embed_dim),
        SSP_FIELD("model.num_spatial_prompts", model.num_spatial_prompts),
        SSP_FIELD("model.token_dim", model.token_dim),
        SSP_FIELD("model.fourier_bands", model.fourier_bands),
        SSP_FIELD("model.fourier_scale", model.fourier_scale),
        SSP_FIELD("model.num_classes_pretrain", model.num_classes_pretrain),
        SSP_FIELD("model.seed", model_seed),
        SSP_FIELD("pretrain.steps", pretrain.steps),
        SSP_FIELD("pretrain.batch_size", pretrain.batch_size),
        SSP_FIELD("pretrain.base_lr", pretrain.base_lr),
        SSP_FIELD("pretrain.weight_decay", pretrain.weight_decay),
        SSP_FIELD("pretrain.power", pretrain.power),
        SSP_FIELD("pretrain.imbalance_ratio", pretrain.imbalance_ratio),
        SSP_FIELD("pretrain.seed", pretrain.seed),
        SSP_FIELD("train.total_steps", train.total_steps),
        SSP_FIELD("train.batch_size", train.batch_size),
        SSP_FIELD("train.base_lr", train.base_lr),
        SSP_FIELD("train.weight_decay", train.weight_decay),
        SSP_FIELD("train.power", train.power),
        SSP_FIELD("train.context_tokens", train.context_tokens),
        SSP_FIELD("train.context_init_std", train.context_init_std),
        SSP_FIELD("train.random_flip", train.random_flip),
        SSP_FIELD("train.spatial_weights", train.spatial_weights),
        SSP_FIELD("train.semantic_weights", train.semantic_weights),
        SSP_FIELD("train.seed", train.seed),
    };
    add_scene_fields(f, "source", &RunConfig::source);
    add_scene_fields(f, "downstream", &RunConfig::downstream);
    for (Field x : {SSP_FIELD("conditions.fog_strength", fog_strength),
                    SSP_FIELD("conditions.night_strength", night_strength),
                    SSP_FIELD("conditions.rain_strength", rain_strength),
                    SSP_FIELD("conditions.snow_strength", snow_strength),
                    SSP_FIELD("data.pretrain_size", sizes.pretrain),
                    SSP_FIELD("data.pool_size", sizes.train_pool),
                    SSP_FIELD("data.eval_size", sizes.eval),
                    SSP_FIELD("data.seed", data_seed),
                    SSP_FIELD("suite.seeds", suite_seeds),
                    SSP_FIELD("suite.shots", suite_shots),
                    SSP_FIELD("bench.steps", bench_steps),
                    SSP_FIELD("bench.warmup", bench_warmup)}) {
      f.push_back(std::move(x));
    }
    return f;
  }();
  return table;
}

#undef SSP_FIELD

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

SceneKnobs knobs_of(const SceneSpec& s) {
  return {s.min_shapes, s.max_shapes, s.noise_sigma, s.texture_amplitude, s.texture_frequency, s.color_jitter};
}

SceneSpec apply(SceneSpec spec, const SceneKnobs& k, std::size_t image_size) {
  spec.image_size = image_size;
  spec.min_shapes = k.min_shapes;
  spec.max_shapes = k.max_shapes;
  spec.noise_sigma = k.noise_sigma;
  spec.texture_amplitude = k.texture_amplitude;
  spec.texture_frequency = k.texture_frequency;
  spec.color_jitter = k.color_jitter;
  return spec;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.source = knobs_of(source_scene_spec());
  c.downstream = knobs_of(downstream_scene_spec());
  c.train.base_lr = 1.0;
  return c;
}

void RunConfig::validate() const {
  model.validate();
  if (model.num_classes_pretrain != source_scene_spec().num_classes()) {
    throw ConfigError(fmt::format("config: model.num_classes_pretrain must be {}", source_scene_spec().num_classes()));
  }
  train.validate();
  source_spec(*this).validate();
  downstream_spec(*this).validate();
  for (double s : {fog_strength, night_strength, rain_strength, snow_strength}) {
    if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("config: condition strengths must lie in [0,1]");
  }
  if (suite_seeds == 0) throw ConfigError("config: suite.seeds must be positive");
  if (bench_steps <= bench_warmup) throw ConfigError("config: bench.steps must exceed bench.warmup");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

RunConfig parse_config(std::string_view text) { return parse_config(text, RunConfig::defaults()); }

RunConfig parse_config(std::string_view text, RunConfig cfg) {
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(fmt::format("config line {}: expected key=value", line_no));
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return f.key == key; });
    if (it == fields().end()) throw ConfigError(fmt::format("config line {}: unknown key '{}'", line_no, key));
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError(fmt::format("config line {}: duplicate key '{}'", line_no, key));
    }
    try {
      it->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("config line {}: {}", line_no, e.what()));
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += fmt::format("{}={}\n", f.key, f.get(cfg));
  return out;
}

SceneSpec source_spec(const RunConfig& cfg) { return apply(source_scene_spec(), cfg.source, cfg.model.image_size); }

SceneSpec downstream_spec(const RunConfig& cfg) {
  return apply(downstream_scene_spec(), cfg.downstream, cfg.model.image_size);
}

const std::vector<std::string>& dataset_names() {
  static const std::vector<std::string> names = {"source", "downstream", "fog", "night", "rain", "snow"};
  return names;
}

const DownstreamSplit& Benchmark::split(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return splits[i];
  }
  throw ConfigError(fmt::format("unknown dataset '{}' (expected one of: {})", name, fmt::join(names, ", ")));
}

Benchmark make_benchmark(const RunConfig& cfg) {
  const SceneSpec down = downstream_spec(cfg);
  const std::vector<SceneSpec> specs = {
      source_spec(cfg),
      down,
      with_condition(down, Condition::fog, cfg.fog_strength),
      with_condition(down, Condition::night, cfg.night_strength),
      with_condition(down, Condition::rain, cfg.rain_strength),
      with_condition(down, Condition::snow, cfg.snow_strength),
  };
  Corpora corpora = make_splits(source_spec(cfg), specs, cfg.sizes, cfg.data_seed);
  Benchmark b;
  b.pretrain = std::move(corpora.pretrain);
  b.names = dataset_names();
  b.splits = std::move(corpora.downstream);
  for (std::size_t i = 0; i < b.splits.size(); ++i) {
    b.splits[i].train_pool.split = b.names[i] + "/pool";
    b.splits[i].eval.split = b.names[i] + "/eval";
  }
  return b;
}

}  // namespace ssp
