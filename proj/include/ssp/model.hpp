#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssp/autodiff.hpp"
#include "ssp/data.hpp"

namespace ssp {

/// Fixed word list shared by every checkpoint; token ids index this list.
class Vocabulary {
 public:
  static const Vocabulary& builtin();

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t id) const { return words_.at(id); }
  /// Whitespace-split, lower-cased lookup. Throws std::invalid_argument
  /// naming the first unknown word.
  std::vector<int> tokenize(std::string_view text) const;

 private:
  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {}
  std::vector<std::string> words_;
};

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 32;
  std::size_t num_spatial_prompts = 16;
  std::size_t token_dim = 64;
  /// 0 selects embed_dim / 2.
  std::size_t fourier_bands = 0;
  double fourier_scale = 1.0;
  std::size_t num_classes_pretrain = 6;
  std::size_t vocab_size = Vocabulary::builtin().size();

  std::size_t bands() const { return fourier_bands ? fourier_bands : embed_dim / 2; }
  std::size_t grid_side() const;
  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t patch_features() const { return patch_size * patch_size * 3; }
  void validate() const;
};

struct Point {
  double h = 0.0;
  double w = 0.0;
  bool operator==(const Point&) const = default;
};

/// Uniform sqrt(N) x sqrt(N) grid with half-cell offsets:
/// ((i + 0.5) H / sqrt(N), (j + 0.5) W / sqrt(N)).
std::vector<Point> default_grid_points(const ModelConfig& cfg);

/// All surrogate parameters. Every Variable is trainable except the
/// Fourier basis, which stays fixed from initialisation.
struct ModelWeights {
  Variable patch_projection;  // (patch^2 * 3) x D
  Variable mixer;             // D x D
  Variable fourier_basis;     // 2 x bands
  Variable spatial_linear;    // (2 * bands) x D
  Variable token_table;       // V x token_dim
  Variable text_hidden;       // token_dim x D
  Variable text_out;          // D x D
  Variable query_proj;        // D x D
  Variable key_proj;          // D x D
  Variable value_proj;        // D x D

  static ModelWeights random(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<Variable*> all();
  std::vector<const Variable*> all() const;
  void set_trainable(bool trainable);
};

/// Per-thread encoder invocation counters. One call that encodes a batch
/// (all grid points, all class names) counts once.
struct EncoderCalls {
  std::uint64_t image = 0;
  std::uint64_t spatial = 0;
  std::uint64_t text = 0;

  static EncoderCalls& current();
  static EncoderCalls snapshot() { return current(); }
};

struct Prediction {
  Tensor mask_logits;      // N x P
  Tensor class_scores;     // N x K
  Tensor semantic_logits;  // P x K
};

/// Graph handles for one forward pass.
struct WeightNodes {
  Node patch_projection, mixer, fourier_basis, spatial_linear, token_table, text_hidden, text_out, query_proj,
      key_proj, value_proj;
};

struct DecodeNodes {
  Node mask_logits;
  Node class_scores;
  Node attention;  // P x N
  Node semantic_logits;
};

/// Binds weights onto `g`. With track=true trainable Variables accumulate
/// gradients (pretraining); otherwise every weight is a constant.
WeightNodes bind_weights(Graph& g, ModelWeights& weights, bool track);
WeightNodes bind_weights(Graph& g, const ModelWeights& weights);

// Forward passes shared by pretraining and inference. They do not touch
// the invocation counters; FrozenModel's entry points do.
namespace forward {
Tensor patchify(const ModelConfig& cfg, const Tensor& image);
Node image(Graph& g, const WeightNodes& w, const ModelConfig& cfg, const Tensor& image);
/// Rows of `points` are (h, w) in pixels.
Node spatial(Graph& g, const WeightNodes& w, const ModelConfig& cfg, Node points);
/// Fourier features [sin(2 pi p B) | cos(2 pi p B)] for normalised points.
Node spatial_features(Graph& g, const WeightNodes& w, const ModelConfig& cfg, Node points);
/// One text embedding (1 x D) from token ids, optionally prefixed by
/// learnable context rows (M x token_dim).
Node text(Graph& g, const WeightNodes& w, std::span<const int> tokens, std::optional<Node> context);
Node classes(Graph& g, const WeightNodes& w, const std::vector<std::vector<int>>& class_tokens,
             std::optional<Node> context);
DecodeNodes decode(Graph& g, const WeightNodes& w, Node z_img, Node z_spatial, Node z_text);
}  // namespace forward

/// The pretrained surrogate with every parameter frozen. The checksum of
/// the canonical parameter bytes is recorded at freeze time.
class FrozenModel {
 public:
  static FrozenModel freeze(const ModelConfig& cfg, ModelWeights weights);
  /// Inverse of named_tensors(). Throws std::invalid_argument on missing,
  /// unexpected or misshapen entries.
  static FrozenModel restore(const std::vector<std::pair<std::string, Tensor>>& tensors);

  const ModelConfig& config() const { return cfg_; }
  const ModelWeights& weights() const { return weights_; }
  /// Copy of the weights, all marked trainable again.
  ModelWeights thawed_weights() const;
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;

  std::uint64_t recorded_checksum() const { return checksum_; }
  /// Recomputes the checksum and compares with the recorded one.
  bool intact() const;

  Tensor encode_image(const Tensor& image) const;
  Tensor encode_spatial(Point p) const;
  Tensor encode_spatial(std::span<const Point> points) const;
  Tensor encode_text(std::span<const int> tokens, const Tensor* context = nullptr) const;
  Tensor encode_classes(const std::vector<std::vector<int>>& class_tokens) const;
  Prediction decode(const Tensor& z_img, const Tensor& z_spatial, const Tensor& z_text) const;

  // Graph-level entry points for prompt learning; weights enter as constants.
  WeightNodes bind(Graph& g) const { return bind_weights(g, weights_); }
  Node encode_spatial(Graph& g, const WeightNodes& w, Node points) const;
  Node encode_classes(Graph& g, const WeightNodes& w, const std::vector<std::vector<int>>& class_tokens,
                      std::optional<Node> context) const;
  DecodeNodes decode(Graph& g, const WeightNodes& w, Node z_img, Node z_spatial, Node z_text) const;

 private:
  FrozenModel(ModelConfig cfg, ModelWeights weights);
  ModelConfig cfg_;
  ModelWeights weights_;
  std::uint64_t checksum_ = 0;
};

/// Checksum of the canonical checkpoint bytes of every frozen parameter.
std::uint64_t freeze_checksum(const FrozenModel& model);

struct PretrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 4;
  double base_lr = 0.1;
  double weight_decay = 1e-4;
  double power = 0.9;
  /// Supervision ratio of frequent to rare class text. 1 disables dropping.
  double imbalance_ratio = 20.0;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  std::vector<double> loss_trace;
  /// Per class, the number of steps whose text embedding received gradient.
  std::vector<std::size_t> text_supervised_steps;
};

/// Trains every parameter except the Fourier basis with pixelwise cross
/// entropy on the default-prompt semantic logits. Rare (non-foreground)
/// classes lose their text gradient with probability 1 - 1/imbalance_ratio
/// per step. Returns the frozen model.
FrozenModel pretrain(const ModelConfig& cfg, ModelWeights weights, const Dataset& corpus,
                     const std::vector<bool>& rare_classes, const PretrainConfig& pcfg,
                     PretrainReport* report = nullptr);

/// Class-name token ids for a dataset's classes.
std::vector<std::vector<int>> tokenize_classes(const std::vector<std::string>& names);

/// Majority-vote label per patch (ties to the lowest class id), row-major
/// over the patch grid.
std::vector<int> patch_labels(const LabelMap& labels, std::size_t patch_size, std::size_t num_classes);

}  // namespace ssp
