#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssp/autodiff.hpp"
#include "ssp/data.hpp"
#include "ssp/model.hpp"

namespace ssp {

enum class Method { default_prompts, spaprompt, semprompt, ssprompt, coop, vspl };
enum class WeightsMode { fixed_half, learnable };

const char* to_string(Method method);
Method parse_method(const std::string& name);
const char* to_string(WeightsMode mode);

/// Default embeddings, their learnable counterparts and one weight logit
/// per row. The fused row is w * learnable + (1 - w) * default with
/// w = sigmoid(logit), or w = 0.5 in fixed_half mode.
struct FusedPromptSet {
  Tensor defaults;
  Variable learnable;
  Variable weight_logits;
  WeightsMode mode = WeightsMode::learnable;

  /// Effective fusion weights w (one per row).
  Tensor weights() const;
  Tensor fused() const;
};

struct SpatialPromptSet {
  std::vector<Point> default_points;
  FusedPromptSet prompts;
};

struct SemanticPromptSet {
  std::vector<std::string> class_names;
  std::vector<std::vector<int>> class_tokens;
  FusedPromptSet prompts;
};

/// Rows on the segment between defaults and learnable; differentiable in
/// `learnable` and (learnable mode only) `weight_logits`.
Node fuse(Graph& g, Node defaults, Node learnable, Node weight_logits, WeightsMode mode);
Tensor fuse(const Tensor& defaults, const Tensor& learnable, const Tensor& weight_logits, WeightsMode mode);

/// Default embeddings come from one pass through each frozen prompt
/// encoder; the learnable copies start equal to them with zero logits.
std::pair<SpatialPromptSet, SemanticPromptSet> init_prompt_sets(const FrozenModel& model,
                                                                const std::vector<std::string>& class_names,
                                                                WeightsMode spatial_mode = WeightsMode::learnable,
                                                                WeightsMode semantic_mode = WeightsMode::learnable);

/// Prompt embeddings ready for decode().
struct LearnedPrompts {
  Tensor spatial;  // N x D
  Tensor text;     // C x D
  /// Fusion weights when the method learns them.
  std::optional<Tensor> spatial_weights;
  std::optional<Tensor> text_weights;
};

struct TrainConfig {
  std::size_t total_steps = 600;
  std::size_t batch_size = 2;
  double base_lr = 1e-3;
  double weight_decay = 1e-4;
  double power = 0.9;
  std::size_t context_tokens = 4;
  double context_init_std = 0.02;
  bool random_flip = true;
  WeightsMode spatial_weights = WeightsMode::learnable;
  WeightsMode semantic_weights = WeightsMode::learnable;
  std::uint64_t seed = 0;
  bool record_step_times = false;

  void validate() const;
};

/// Thrown when the loss turns non-finite; carries the failing step.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct TrainResult {
  Method method = Method::default_prompts;
  LearnedPrompts prompts;
  std::vector<double> loss_trace;
  std::vector<double> step_ms;
  /// Prompt-encoder invocations made inside the optimisation loop.
  EncoderCalls loop_calls;
  /// High-water mark of live tensor bytes during the loop, above the level
  /// at its start.
  std::int64_t peak_tensor_bytes = 0;
  SpatialPromptSet spatial;
  SemanticPromptSet semantic;
  std::optional<Tensor> context;      // coop
  std::optional<Tensor> vspl_points;  // vspl, N x 2 pixels
};

/// Optimises the method-owned prompt state against the frozen model with
/// pixelwise cross entropy on the semantic logits, plain SGD and the
/// polynomial schedule. Method::default_prompts performs no steps.
TrainResult train(Method method, const FrozenModel& model, const Dataset& fewshot, const TrainConfig& cfg);

/// Prompts that reproduce zero-shot inference.
LearnedPrompts default_prompts(const FrozenModel& model, const std::vector<std::string>& class_names);

/// Checkpoint entries for a prompts file; `meta.*` entries record how the
/// prompts were produced.
struct PromptsFile {
  LearnedPrompts prompts;
  Method method = Method::default_prompts;
  std::size_t shots = 0;
  std::uint64_t seed = 0;
};
std::vector<std::pair<std::string, Tensor>> to_named_tensors(const PromptsFile& file);
PromptsFile prompts_from_named_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors);

/// True iff both checksums are bit-identical.
bool freeze_audit(const FrozenModel& model, std::uint64_t before, std::uint64_t after);

}  // namespace ssp
