#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ssp/tensor.hpp"

namespace ssp {

enum class ShapeKind { rectangle, disk, triangle, background_texture };
enum class Condition { clean, fog, night, rain, snow };

const char* to_string(ShapeKind kind);
const char* to_string(Condition condition);
Condition parse_condition(const std::string& name);

using Color = std::array<double, 3>;

struct ClassStyle {
  std::string name;
  Color color{};
  ShapeKind kind = ShapeKind::rectangle;
  /// Rarely-supervised "stuff"/background classes are not foreground.
  bool foreground = true;
  /// Side length (or diameter) range as a fraction of the image size.
  double min_size = 0.25;
  double max_size = 0.5;
  /// Relative chance of being drawn; 0 never draws the class.
  double draw_weight = 1.0;
};

/// Scene recipe. Class 0 is always the textured background.
struct SceneSpec {
  std::size_t image_size = 32;
  std::vector<ClassStyle> palette;
  int min_shapes = 1;
  int max_shapes = 4;
  double noise_sigma = 0.02;
  /// Amplitude of the background texture modulation.
  double texture_amplitude = 0.08;
  /// Spatial frequency of the background texture, in cycles per image.
  double texture_frequency = 3.0;
  /// Per-shape brightness jitter (uniform +-).
  double color_jitter = 0.04;
  Condition condition = Condition::clean;
  double condition_strength = 1.0;

  std::size_t num_classes() const { return palette.size(); }
  std::vector<std::string> class_names() const;
  /// Throws std::invalid_argument on a broken recipe (see generate_scene).
  void validate() const;
};

/// Per-pixel class indices, row-major.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> labels;

  std::uint16_t at(std::size_t h, std::size_t w) const { return labels[h * width + w]; }
  bool operator==(const LabelMap&) const = default;
};

struct Sample {
  Tensor image;  // H x W x 3 in [0, 1]
  LabelMap labels;

  bool operator==(const Sample& o) const { return image == o.image && labels == o.labels; }
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;
  std::string split;
  std::uint64_t seed = 0;
  /// Pool indices the samples were drawn from (few-shot subsets), else empty.
  std::vector<std::size_t> source_indices;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

/// The toy benchmark palette: background, sky (stuff) and four foreground
/// object classes.
SceneSpec source_scene_spec();
/// Same class ids with shifted colours, texture and noise.
SceneSpec downstream_scene_spec();
/// Downstream spec with a weather/lighting condition applied.
SceneSpec with_condition(SceneSpec spec, Condition condition, double strength = 1.0);

/// Draws 1..4 shapes over the textured background in painter's order, then
/// applies the condition transform and Gaussian pixel noise, clamped to [0,1].
Sample generate_scene(std::uint64_t seed, const SceneSpec& spec);

/// Horizontal mirror of image and labels.
Sample flip_horizontal(const Sample& sample);

/// Sample i is generate_scene(first_seed + i). The parallel variant fills
/// the same slots from worker threads and yields identical bytes.
Dataset generate_dataset_serial(const SceneSpec& spec, std::size_t count, std::uint64_t first_seed,
                                std::string split);
Dataset generate_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t first_seed, std::string split);

struct DownstreamSplit {
  Dataset train_pool;
  Dataset eval;
};

struct Corpora {
  Dataset pretrain;
  std::vector<DownstreamSplit> downstream;
};

struct SplitSizes {
  std::size_t pretrain = 512;
  std::size_t train_pool = 128;
  std::size_t eval = 128;
};

/// Seeds per split are disjoint ranges of width kSeedStride starting at
/// seed + j * kSeedStride.
inline constexpr std::uint64_t kSeedStride = std::uint64_t{1} << 24;

Corpora make_splits(const SceneSpec& pretrain_spec, const std::vector<SceneSpec>& downstream_specs,
                    const SplitSizes& sizes, std::uint64_t seed);

/// Greedy scan of a seeded permutation: an image is kept while any class it
/// contains has fewer than k kept images. Selections for k1 < k2 with one
/// seed are nested.
Dataset few_shot_sample(const Dataset& pool, std::size_t k, std::uint64_t seed);

/// Classes present in a label map, ascending.
std::vector<std::uint16_t> classes_present(const LabelMap& labels);

/// Binary PPM (P6) bytes of an H x W x 3 image.
std::string to_ppm(const Tensor& image);
/// Plain-text label map: one row of space-separated ids per line.
std::string to_label_text(const LabelMap& labels);

}  // namespace ssp
