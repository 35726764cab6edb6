#include "ssp/prompts.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <tuple>

#include <fmt/format.h>

#include "ssp/optim.hpp"
#include "ssp/rng.hpp"

namespace ssp {

const char* to_string(Method method) {
  switch (method) {
    case Method::default_prompts: return "default";
    case Method::spaprompt: return "spaprompt";
    case Method::semprompt: return "semprompt";
    case Method::ssprompt: return "ssprompt";
    case Method::coop: return "coop";
    case Method::vspl: return "vspl";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::default_prompts, Method::spaprompt, Method::semprompt, Method::ssprompt, Method::coop,
                   Method::vspl}) {
    if (name == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown method '" + name + "'");
}

const char* to_string(WeightsMode mode) { return mode == WeightsMode::fixed_half ? "fixed_half" : "learnable"; }

Tensor FusedPromptSet::weights() const {
  if (mode == WeightsMode::fixed_half) return Tensor::full(weight_logits.value.shape(), 0.5);
  return sigmoid(weight_logits.value);
}

Tensor FusedPromptSet::fused() const { return fuse(defaults, learnable.value, weight_logits.value, mode); }

Node fuse(Graph& g, Node defaults, Node learnable, Node weight_logits, WeightsMode mode) {
  const Tensor& d = defaults.value();
  const Tensor& l = learnable.value();
  if (d.shape() != l.shape() || d.rank() != 2) {
    throw ShapeError(fmt::format("fuse: shape mismatch {} vs {}", shape_str(d.shape()), shape_str(l.shape())));
  }
  if (mode == WeightsMode::fixed_half) return scale(add(learnable, defaults), 0.5);
  if (weight_logits.value().numel() != d.dim(0)) {
    throw ShapeError(fmt::format("fuse: {} weight logits for {} rows", weight_logits.value().numel(), d.dim(0)));
  }
  (void)g;
  Node w = sigmoid(weight_logits);
  return add(defaults, row_scale(sub(learnable, defaults), w));
}

Tensor fuse(const Tensor& defaults, const Tensor& learnable, const Tensor& weight_logits, WeightsMode mode) {
  Graph g;
  return fuse(g, g.constant_ref(defaults), g.constant_ref(learnable), g.constant_ref(weight_logits), mode).value();
}

std::pair<SpatialPromptSet, SemanticPromptSet> init_prompt_sets(const FrozenModel& model,
                                                                const std::vector<std::string>& class_names,
                                                                WeightsMode spatial_mode, WeightsMode semantic_mode) {
  SpatialPromptSet spatial;
  spatial.default_points = default_grid_points(model.config());
  Tensor zs = model.encode_spatial(spatial.default_points);
  const std::size_t n = zs.dim(0);
  spatial.prompts.learnable = Variable("prompt.spatial.learnable", zs, true);
  spatial.prompts.weight_logits = Variable("prompt.spatial.weight_logits", Tensor({n}), true);
  spatial.prompts.defaults = std::move(zs);
  spatial.prompts.mode = spatial_mode;

  SemanticPromptSet semantic;
  semantic.class_names = class_names;
  semantic.class_tokens = tokenize_classes(class_names);
  Tensor zt = model.encode_classes(semantic.class_tokens);
  const std::size_t c = zt.dim(0);
  semantic.prompts.learnable = Variable("prompt.text.learnable", zt, true);
  semantic.prompts.weight_logits = Variable("prompt.text.weight_logits", Tensor({c}), true);
  semantic.prompts.defaults = std::move(zt);
  semantic.prompts.mode = semantic_mode;
  return {std::move(spatial), std::move(semantic)};
}

LearnedPrompts default_prompts(const FrozenModel& model, const std::vector<std::string>& class_names) {
  auto [spatial, semantic] = init_prompt_sets(model, class_names);
  return {spatial.prompts.defaults, semantic.prompts.defaults, std::nullopt, std::nullopt};
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (base_lr < 0.0) throw std::invalid_argument("train: base_lr must be >= 0");
  if (context_tokens == 0) throw std::invalid_argument("train: context_tokens must be >= 1");
}

std::vector<std::pair<std::string, Tensor>> to_named_tensors(const PromptsFile& file) {
  if (file.seed > (std::uint64_t{1} << 53)) throw std::invalid_argument("prompts file: seed exceeds 2^53");
  std::vector<std::pair<std::string, Tensor>> out = {
      {"meta.method", Tensor::scalar(static_cast<double>(file.method))},
      {"meta.shots", Tensor::scalar(static_cast<double>(file.shots))},
      {"meta.seed", Tensor::scalar(static_cast<double>(file.seed))},
      {"prompts.spatial", file.prompts.spatial},
      {"prompts.text", file.prompts.text},
  };
  if (file.prompts.spatial_weights) out.emplace_back("prompts.spatial_weights", *file.prompts.spatial_weights);
  if (file.prompts.text_weights) out.emplace_back("prompts.text_weights", *file.prompts.text_weights);
  return out;
}

PromptsFile prompts_from_named_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors) {
  const auto find = [&](std::string_view name) -> const Tensor* {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  };
  const auto require = [&](std::string_view name) -> const Tensor& {
    const Tensor* t = find(name);
    if (!t) throw std::invalid_argument(fmt::format("prompts file: missing '{}'", name));
    return *t;
  };
  const auto whole = [&](std::string_view name, double max) {
    const double v = require(name).item();
    if (!(v >= 0.0 && v <= max && v == std::floor(v))) {
      throw std::invalid_argument(fmt::format("prompts file: bad '{}' value {}", name, v));
    }
    return v;
  };
  PromptsFile f;
  f.method = static_cast<Method>(static_cast<int>(whole("meta.method", static_cast<double>(Method::vspl))));
  f.shots = static_cast<std::size_t>(whole("meta.shots", 1e9));
  f.seed = static_cast<std::uint64_t>(whole("meta.seed", 0x1p53));
  f.prompts.spatial = require("prompts.spatial");
  f.prompts.text = require("prompts.text");
  if (const Tensor* w = find("prompts.spatial_weights")) f.prompts.spatial_weights = *w;
  if (const Tensor* w = find("prompts.text_weights")) f.prompts.text_weights = *w;
  if (f.prompts.spatial.rank() != 2 || f.prompts.text.rank() != 2 ||
      f.prompts.spatial.cols() != f.prompts.text.cols()) {
    throw std::invalid_argument("prompts file: embeddings must be matrices of equal width");
  }
  return f;
}

bool freeze_audit(const FrozenModel&, std::uint64_t before, std::uint64_t after) { return before == after; }

namespace {

struct CachedSample {
  Tensor embedding;  // P x D
  std::vector<int> targets;
};

bool uses_spatial_fusion(Method m) { return m == Method::ssprompt || m == Method::spaprompt; }
bool uses_semantic_fusion(Method m) { return m == Method::ssprompt || m == Method::semprompt; }

}  // namespace

TrainResult train(Method method, const FrozenModel& model, const Dataset& fewshot, const TrainConfig& cfg) {
  cfg.validate();
  if (fewshot.empty()) throw std::invalid_argument("train: empty few-shot dataset");
  if (!model.intact()) throw std::invalid_argument("train: model parameters differ from their frozen checksum");
  const ModelConfig& mc = model.config();
  const std::size_t num_classes = fewshot.class_names.size();

  TrainResult result;
  result.method = method;
  std::tie(result.spatial, result.semantic) =
      init_prompt_sets(model, fewshot.class_names, cfg.spatial_weights, cfg.semantic_weights);
  SpatialPromptSet& spatial = result.spatial;
  SemanticPromptSet& semantic = result.semantic;

  const bool spa = uses_spatial_fusion(method);
  const bool sem = uses_semantic_fusion(method);
  spatial.prompts.learnable.trainable = spa;
  spatial.prompts.weight_logits.trainable = spa && spatial.prompts.mode == WeightsMode::learnable;
  semantic.prompts.learnable.trainable = sem;
  semantic.prompts.weight_logits.trainable = sem && semantic.prompts.mode == WeightsMode::learnable;

  Rng init_rng(mix_seed(cfg.seed, 0xC0));
  Variable context;
  if (method == Method::coop) {
    Tensor ctx({cfg.context_tokens, mc.token_dim});
    for (auto& v : ctx.data()) v = init_rng.normal(0.0, cfg.context_init_std);
    context = Variable("prompt.context", std::move(ctx), true);
  }
  Variable points;
  if (method == Method::vspl) {
    Tensor pts({spatial.default_points.size(), 2});
    for (std::size_t i = 0; i < spatial.default_points.size(); ++i) {
      pts.at(i, 0) = spatial.default_points[i].h;
      pts.at(i, 1) = spatial.default_points[i].w;
    }
    points = Variable("prompt.vspl.points", std::move(pts), true);
  }

  std::vector<Variable*> owned;
  for (Variable* v : {&spatial.prompts.learnable, &spatial.prompts.weight_logits, &semantic.prompts.learnable,
                      &semantic.prompts.weight_logits, &context, &points}) {
    if (v->trainable) owned.push_back(v);
  }

  // The image encoder is frozen, so embeddings are computed once per sample
  // and orientation.
  std::vector<CachedSample> cache[2];
  if (method != Method::default_prompts) {
    for (const Sample& s : fewshot.samples) {
      cache[0].push_back({model.encode_image(s.image), patch_labels(s.labels, mc.patch_size, num_classes)});
      if (cfg.random_flip) {
        const Sample m = flip_horizontal(s);
        cache[1].push_back({model.encode_image(m.image), patch_labels(m.labels, mc.patch_size, num_classes)});
      }
    }
  }

  const std::size_t steps = method == Method::default_prompts ? 0 : cfg.total_steps;
  OptimizerState opt{cfg.base_lr, cfg.weight_decay, cfg.power, std::max<std::size_t>(steps, 1), 0};
  Rng batch_rng(mix_seed(cfg.seed, 0xBA7C));
  const double limit_lo = 1.0, limit_hi = static_cast<double>(mc.image_size) - 1.0;

  const EncoderCalls calls_before = EncoderCalls::snapshot();
  TensorMemory::reset_peak();
  const std::int64_t baseline_bytes = TensorMemory::live_bytes();
  for (std::size_t step = 0; step < steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_value = 0.0;
    try {
      Graph g;
      const WeightNodes w = model.bind(g);

      Node z_spatial;
      if (spa) {
        z_spatial = fuse(g, g.constant_ref(spatial.prompts.defaults), g.param(spatial.prompts.learnable),
                         g.param(spatial.prompts.weight_logits), spatial.prompts.mode);
      } else if (method == Method::vspl) {
        z_spatial = model.encode_spatial(g, w, g.param(points));
      } else {
        z_spatial = g.constant_ref(spatial.prompts.defaults);
      }

      Node z_text;
      if (sem) {
        z_text = fuse(g, g.constant_ref(semantic.prompts.defaults), g.param(semantic.prompts.learnable),
                      g.param(semantic.prompts.weight_logits), semantic.prompts.mode);
      } else if (method == Method::coop) {
        z_text = model.encode_classes(g, w, semantic.class_tokens, g.param(context));
      } else {
        z_text = g.constant_ref(semantic.prompts.defaults);
      }

      std::vector<Node> logits;
      std::vector<int> targets;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const std::size_t idx = batch_rng.below(fewshot.size());
        const int flip = cfg.random_flip && batch_rng.bernoulli(0.5) ? 1 : 0;
        const CachedSample& s = cache[flip][idx];
        logits.push_back(model.decode(g, w, g.constant_ref(s.embedding), z_spatial, z_text).semantic_logits);
        targets.insert(targets.end(), s.targets.begin(), s.targets.end());
      }
      Node loss = cross_entropy(concat(logits, 0), targets);
      loss_value = loss.value().item();
      g.backward(loss);
      sgd_step(owned, opt);
    } catch (const NumericError& e) {
      throw TrainingDiverged(step, fmt::format("train({}): non-finite value at step {}: {}", to_string(method), step, e.what()));
    }
    result.loss_trace.push_back(loss_value);
    if (method == Method::vspl) {
      for (auto& v : points.value.data()) v = std::clamp(v, limit_lo, limit_hi);
    }
    if (cfg.record_step_times) {
      const auto t1 = std::chrono::steady_clock::now();
      result.step_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  }
  result.peak_tensor_bytes = TensorMemory::peak_bytes() - baseline_bytes;
  const EncoderCalls calls_after = EncoderCalls::snapshot();
  result.loop_calls = {calls_after.image - calls_before.image, calls_after.spatial - calls_before.spatial,
                       calls_after.text - calls_before.text};

  LearnedPrompts& out = result.prompts;
  out.spatial = spa ? spatial.prompts.fused() : spatial.prompts.defaults;
  out.text = sem ? semantic.prompts.fused() : semantic.prompts.defaults;
  if (spa) out.spatial_weights = spatial.prompts.weights();
  if (sem) out.text_weights = semantic.prompts.weights();
  if (method == Method::vspl) {
    std::vector<Point> pts;
    for (std::size_t i = 0; i < points.value.dim(0); ++i) pts.push_back({points.value.at(i, 0), points.value.at(i, 1)});
    out.spatial = model.encode_spatial(pts);
    result.vspl_points = points.value;
  }
  if (method == Method::coop) {
    Graph g;
    const WeightNodes w = model.bind(g);
    out.text = model.encode_classes(g, w, semantic.class_tokens, g.constant_ref(context.value)).value();
    result.context = context.value;
  }
  return result;
}

}  // namespace ssp
