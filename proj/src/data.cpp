#include "ssp/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "ssp/kernels.hpp"
#include "ssp/rng.hpp"

namespace ssp {

const char* to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::disk: return "disk";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::background_texture: return "background-texture";
  }
  return "?";
}

const char* to_string(Condition condition) {
  switch (condition) {
    case Condition::clean: return "clean";
    case Condition::fog: return "fog";
    case Condition::night: return "night";
    case Condition::rain: return "rain";
    case Condition::snow: return "snow";
  }
  return "?";
}

Condition parse_condition(const std::string& name) {
  for (Condition c : {Condition::clean, Condition::fog, Condition::night, Condition::rain, Condition::snow}) {
    if (name == to_string(c)) return c;
  }
  throw std::invalid_argument("unknown condition '" + name + "'");
}

std::vector<std::string> SceneSpec::class_names() const {
  std::vector<std::string> names;
  for (const auto& c : palette) names.push_back(c.name);
  return names;
}

void SceneSpec::validate() const {
  if (image_size < 4) throw std::invalid_argument("scene: image_size must be >= 4");
  if (palette.size() < 2) throw std::invalid_argument("scene: palette needs background plus >= 1 class");
  if (palette[0].kind != ShapeKind::background_texture) {
    throw std::invalid_argument("scene: class 0 must be the background texture");
  }
  bool drawable = false;
  for (std::size_t c = 0; c < palette.size(); ++c) {
    const auto& s = palette[c];
    for (double v : s.color) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(fmt::format("scene: class {} colour outside [0,1]", c));
    }
    if (c > 0 && s.kind == ShapeKind::background_texture) {
      throw std::invalid_argument(fmt::format("scene: class {} cannot be a background texture", c));
    }
    if (c > 0 && !(s.min_size > 0.0 && s.min_size <= s.max_size && s.max_size <= 1.0)) {
      throw std::invalid_argument(fmt::format("scene: class {} has a bad size range", c));
    }
    if (s.draw_weight < 0.0) throw std::invalid_argument(fmt::format("scene: class {} negative draw weight", c));
    if (c > 0 && s.draw_weight > 0.0) drawable = true;
    for (std::size_t o = 0; o < c; ++o) {
      double linf = 0.0;
      for (int ch = 0; ch < 3; ++ch) linf = std::max(linf, std::abs(s.color[ch] - palette[o].color[ch]));
      if (linf < 0.1) {
        throw std::invalid_argument(
            fmt::format("scene: classes {} and {} have colours closer than 0.1 (L-inf {:.3f})", o, c, linf));
      }
    }
  }
  if (!drawable) throw std::invalid_argument("scene: no drawable foreground class");
  if (min_shapes < 1 || max_shapes < min_shapes) throw std::invalid_argument("scene: bad shape count range");
  if (noise_sigma < 0.0) throw std::invalid_argument("scene: negative noise sigma");
  if (condition_strength < 0.0 || condition_strength > 1.0) {
    throw std::invalid_argument("scene: condition strength outside [0,1]");
  }
}

SceneSpec source_scene_spec() {
  SceneSpec s;
  s.palette = {
      {"background", {0.45, 0.42, 0.38}, ShapeKind::background_texture, false, 1.0, 1.0, 0.0},
      {"sky", {0.35, 0.60, 0.90}, ShapeKind::rectangle, false, 0.55, 0.95, 1.2},
      {"car", {0.85, 0.20, 0.20}, ShapeKind::rectangle, true, 0.25, 0.45, 1.0},
      {"person", {0.20, 0.75, 0.30}, ShapeKind::triangle, true, 0.30, 0.50, 1.0},
      {"sign", {0.90, 0.85, 0.20}, ShapeKind::disk, true, 0.25, 0.45, 1.0},
      {"pole", {0.65, 0.25, 0.80}, ShapeKind::rectangle, true, 0.20, 0.40, 1.0},
  };
  return s;
}

SceneSpec downstream_scene_spec() {
  SceneSpec s = source_scene_spec();
  // Colour shift toward a warmer, lower-contrast domain.
  const Color shifted[] = {
      {0.38, 0.40, 0.30}, {0.50, 0.62, 0.78}, {0.70, 0.32, 0.20},
      {0.34, 0.62, 0.26}, {0.80, 0.72, 0.34}, {0.52, 0.34, 0.66},
  };
  for (std::size_t c = 0; c < s.palette.size(); ++c) s.palette[c].color = shifted[c];
  s.noise_sigma = 0.05;
  s.texture_amplitude = 0.15;
  s.texture_frequency = 5.0;
  return s;
}

SceneSpec with_condition(SceneSpec spec, Condition condition, double strength) {
  spec.condition = condition;
  spec.condition_strength = strength;
  return spec;
}

namespace {

std::size_t pick_class(Rng& rng, const SceneSpec& spec) {
  double total = 0.0;
  for (std::size_t c = 1; c < spec.palette.size(); ++c) total += spec.palette[c].draw_weight;
  double u = rng.uniform() * total;
  std::size_t last = 1;
  for (std::size_t c = 1; c < spec.palette.size(); ++c) {
    if (spec.palette[c].draw_weight <= 0.0) continue;
    last = c;
    if (u < spec.palette[c].draw_weight) return c;
    u -= spec.palette[c].draw_weight;
  }
  return last;
}

void apply_condition(Tensor& img, const SceneSpec& spec, Rng& rng) {
  const std::size_t n = spec.image_size;
  const double a = spec.condition_strength;
  switch (spec.condition) {
    case Condition::clean: break;
    case Condition::fog:
      for (std::size_t i = 0; i < img.numel(); ++i) img[i] = (1.0 - a) * img[i] + a * 0.8;
      break;
    case Condition::night:
      for (std::size_t i = 0; i < img.numel(); ++i) img[i] *= 1.0 - 0.7 * a;
      break;
    case Condition::rain: {
      const int streaks = static_cast<int>(std::lround(14.0 * a));
      for (int s = 0; s < streaks; ++s) {
        const int x0 = rng.range(0, static_cast<int>(n) - 1);
        const int y0 = rng.range(0, static_cast<int>(n) - 1);
        const int len = rng.range(6, 14);
        for (int t = 0; t < len; ++t) {
          const int y = y0 + t, x = x0 + t / 2;
          if (y >= static_cast<int>(n) || x >= static_cast<int>(n)) break;
          for (int ch = 0; ch < 3; ++ch) {
            double& v = img[(static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x)) * 3 + ch];
            v = 0.4 * v + 0.6 * 0.9;
          }
        }
      }
      break;
    }
    case Condition::snow: {
      const double density = 0.08 * a;
      for (std::size_t p = 0; p < n * n; ++p) {
        if (rng.bernoulli(density)) {
          for (int ch = 0; ch < 3; ++ch) img[p * 3 + ch] = 0.95;
        }
      }
      break;
    }
  }
}

}  // namespace

Sample generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(seed, 0x5CE9E));
  const std::size_t n = spec.image_size;
  const double nd = static_cast<double>(n);
  Tensor img({n, n, 3});
  LabelMap labels{n, n, std::vector<std::uint16_t>(n * n, 0)};

  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double kx = std::cos(theta), ky = std::sin(theta);
  const Color& bg = spec.palette[0].color;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double u = (kx * (static_cast<double>(x) + 0.5) + ky * (static_cast<double>(y) + 0.5)) / nd;
      const double mod =
          1.0 + spec.texture_amplitude * std::sin(2.0 * std::numbers::pi * spec.texture_frequency * u + phase);
      for (int ch = 0; ch < 3; ++ch) img[(y * n + x) * 3 + ch] = bg[ch] * mod;
    }

  const int shapes = rng.range(spec.min_shapes, spec.max_shapes);
  for (int s = 0; s < shapes; ++s) {
    const std::size_t cls = pick_class(rng, spec);
    const ClassStyle& style = spec.palette[cls];
    const double size = std::max(3.0, rng.uniform(style.min_size, style.max_size) * nd);
    const double bright = 1.0 + rng.uniform(-spec.color_jitter, spec.color_jitter);
    double w = size, h = size;
    if (style.kind == ShapeKind::rectangle) h = std::clamp(size * rng.uniform(0.6, 1.4), 3.0, nd);
    const double x0 = rng.uniform(0.0, nd - w);
    const double y0 = rng.uniform(0.0, nd - h);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double px = static_cast<double>(x) + 0.5 - x0;
        const double py = static_cast<double>(y) + 0.5 - y0;
        bool inside = false;
        switch (style.kind) {
          case ShapeKind::rectangle: inside = px >= 0 && px < w && py >= 0 && py < h; break;
          case ShapeKind::disk: {
            const double dx = px - w / 2, dy = py - h / 2;
            inside = dx * dx + dy * dy <= (w / 2) * (w / 2);
            break;
          }
          case ShapeKind::triangle:
            // Apex at top centre, base along the bottom edge.
            inside = py >= 0 && py < h && std::abs(px - w / 2) <= (py / h) * (w / 2);
            break;
          case ShapeKind::background_texture: break;
        }
        if (!inside) continue;
        labels.labels[y * n + x] = static_cast<std::uint16_t>(cls);
        for (int ch = 0; ch < 3; ++ch) img[(y * n + x) * 3 + ch] = std::clamp(style.color[ch] * bright, 0.0, 1.0);
      }
  }

  apply_condition(img, spec, rng);
  if (spec.noise_sigma > 0.0) {
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] += rng.normal(0.0, spec.noise_sigma);
  }
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
  img.check_finite("generate_scene");
  return Sample{std::move(img), std::move(labels)};
}

Sample flip_horizontal(const Sample& sample) {
  const std::size_t h = sample.labels.height, w = sample.labels.width;
  Tensor img(sample.image.shape());
  LabelMap labels{h, w, std::vector<std::uint16_t>(h * w)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t src = y * w + (w - 1 - x), dst = y * w + x;
      labels.labels[dst] = sample.labels.labels[src];
      for (int ch = 0; ch < 3; ++ch) img[dst * 3 + ch] = sample.image[src * 3 + ch];
    }
  return Sample{std::move(img), std::move(labels)};
}

Dataset generate_dataset_serial(const SceneSpec& spec, std::size_t count, std::uint64_t first_seed,
                                std::string split) {
  spec.validate();
  Dataset ds;
  ds.class_names = spec.class_names();
  ds.split = std::move(split);
  ds.seed = first_seed;
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) ds.samples.push_back(generate_scene(first_seed + i, spec));
  return ds;
}

Dataset generate_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t first_seed, std::string split) {
  spec.validate();
  Dataset ds;
  ds.class_names = spec.class_names();
  ds.split = std::move(split);
  ds.seed = first_seed;
  ds.samples.resize(count);
  const long long n = static_cast<long long>(count);
#pragma omp parallel for schedule(dynamic, 8) num_threads(kernels::max_threads())
  for (long long i = 0; i < n; ++i) {
    ds.samples[static_cast<std::size_t>(i)] = generate_scene(first_seed + static_cast<std::uint64_t>(i), spec);
  }
  return ds;
}

Corpora make_splits(const SceneSpec& pretrain_spec, const std::vector<SceneSpec>& downstream_specs,
                    const SplitSizes& sizes, std::uint64_t seed) {
  if (sizes.eval == 0) throw std::invalid_argument("make_splits: eval partition size must be positive");
  if (sizes.train_pool == 0) throw std::invalid_argument("make_splits: few-shot pool size must be positive");
  if (sizes.pretrain == 0) throw std::invalid_argument("make_splits: pretraining corpus size must be positive");
  for (std::size_t n : {sizes.pretrain, sizes.train_pool, sizes.eval}) {
    if (n > kSeedStride) throw std::invalid_argument("make_splits: split size overlaps the next seed range");
  }
  const std::size_t ranges = 1 + 2 * downstream_specs.size();
  if (seed > UINT64_MAX - ranges * kSeedStride) throw std::invalid_argument("make_splits: seed ranges wrap around");
  for (const auto& spec : downstream_specs) {
    if (spec.num_classes() != pretrain_spec.num_classes()) {
      throw std::invalid_argument("make_splits: downstream classes must match pretraining class ids");
    }
  }
  Corpora out;
  out.pretrain = generate_dataset(pretrain_spec, sizes.pretrain, seed, "pretrain");
  for (std::size_t j = 0; j < downstream_specs.size(); ++j) {
    const std::uint64_t base = seed + (1 + 2 * j) * kSeedStride;
    DownstreamSplit split;
    split.train_pool = generate_dataset(downstream_specs[j], sizes.train_pool, base, fmt::format("train{}", j));
    split.eval = generate_dataset(downstream_specs[j], sizes.eval, base + kSeedStride, fmt::format("eval{}", j));
    out.downstream.push_back(std::move(split));
  }
  return out;
}

std::vector<std::uint16_t> classes_present(const LabelMap& labels) {
  std::vector<std::uint16_t> out(labels.labels.begin(), labels.labels.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Dataset few_shot_sample(const Dataset& pool, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("few_shot_sample: k must be positive");
  const std::size_t num_classes = pool.class_names.size();
  std::vector<std::vector<std::uint16_t>> present;
  std::vector<std::size_t> available(num_classes, 0);
  for (const auto& s : pool.samples) {
    present.push_back(classes_present(s.labels));
    for (auto c : present.back()) ++available.at(c);
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (available[c] < k) {
      throw std::invalid_argument(fmt::format("few_shot_sample: class '{}' appears in {} pool images, need {}",
                                              pool.class_names[c], available[c], k));
    }
  }
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0xF3));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::vector<std::size_t> kept_count(num_classes, 0);
  std::vector<std::size_t> chosen;
  for (std::size_t idx : order) {
    bool needed = false;
    for (auto c : present[idx]) needed = needed || kept_count[c] < k;
    if (!needed) continue;
    chosen.push_back(idx);
    for (auto c : present[idx]) ++kept_count[c];
  }
  std::sort(chosen.begin(), chosen.end());
  Dataset out;
  out.class_names = pool.class_names;
  out.split = fmt::format("{}-{}shot", pool.split, k);
  out.seed = seed;
  out.source_indices = chosen;
  for (std::size_t idx : chosen) out.samples.push_back(pool.samples[idx]);
  return out;
}

std::string to_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("to_ppm: expected HxWx3, got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1);
  std::string out = fmt::format("P6\n{} {}\n255\n", w, h);
  for (std::size_t i = 0; i < image.numel(); ++i) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0))));
  }
  return out;
}

std::string to_label_text(const LabelMap& labels) {
  std::string out;
  for (std::size_t y = 0; y < labels.height; ++y) {
    for (std::size_t x = 0; x < labels.width; ++x) {
      if (x) out += ' ';
      out += std::to_string(labels.at(y, x));
    }
    out += '\n';
  }
  return out;
}

}  // namespace ssp
