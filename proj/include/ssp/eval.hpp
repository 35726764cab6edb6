#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssp/data.hpp"
#include "ssp/model.hpp"
#include "ssp/prompts.hpp"

namespace ssp {

/// K x K counts; rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = 0);
  /// Row-major counts.
  static ConfusionMatrix from_counts(std::size_t num_classes, std::vector<std::uint64_t> counts);

  std::size_t num_classes() const { return k_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * k_ + pred]; }
  void add(std::size_t gt, std::size_t pred, std::uint64_t n = 1);
  std::uint64_t total() const;
  const std::vector<std::uint64_t>& counts() const { return counts_; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> gt, std::size_t num_classes);
ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes);

/// TP / (TP + FP + FN) per class; nullopt for classes absent from both
/// ground truth and prediction.
std::vector<std::optional<double>> per_class_iou(const ConfusionMatrix& cm);
/// Mean over present classes. Throws std::invalid_argument if none is.
double miou(const ConfusionMatrix& cm);

/// Argmax over the semantic logits per patch; ties go to the lowest class.
std::vector<int> predict_patches(const FrozenModel& model, const LearnedPrompts& prompts, const Tensor& image);

struct EvalResult {
  ConfusionMatrix confusion;
  std::vector<std::optional<double>> class_iou;
  double miou = 0.0;
};

/// Patch-resolution evaluation against majority-vote patch labels. The
/// parallel variant splits images across threads and sums the per-thread
/// matrices, so both agree exactly.
EvalResult evaluate_serial(const FrozenModel& model, const LearnedPrompts& prompts, const Dataset& dataset);
EvalResult evaluate(const FrozenModel& model, const LearnedPrompts& prompts, const Dataset& dataset);

struct TimingReport {
  std::size_t measured_steps = 0;
  double mean_ms = 0.0;
  double stddev_ms = 0.0;
  std::int64_t peak_tensor_bytes = 0;
  /// Encoder invocations across all steps, warmup included.
  EncoderCalls loop_calls;
  LearnedPrompts prompts;
};

/// Runs `steps` training steps and reports wall time over the steps after
/// `warmup`, with kernels pinned to one thread. Throws
/// std::invalid_argument unless steps > warmup.
TimingReport time_training(Method method, const FrozenModel& model, const Dataset& fewshot, TrainConfig cfg,
                           std::size_t steps = 100, std::size_t warmup = 10);

struct WeightReport {
  std::vector<std::string> class_names;
  /// Learnable-side weight w per class; the encoder side is 1 - w.
  std::vector<double> weights;
  std::vector<bool> frequent;
  std::optional<double> frequent_encoder_mean;
  std::optional<double> rare_encoder_mean;

  /// Both groups are non-empty.
  bool comparable() const { return frequent_encoder_mean && rare_encoder_mean; }
};

WeightReport weight_report(const SemanticPromptSet& semantic, const std::vector<bool>& frequent);
WeightReport weight_report(const std::vector<std::string>& class_names, const Tensor& weights,
                           const std::vector<bool>& frequent);

/// One evaluated cell of an experiment.
struct RunResult {
  std::string method;
  std::string dataset;
  std::string condition;
  std::size_t shots = 0;
  std::uint64_t seed = 0;
  std::vector<std::optional<double>> class_iou;
  double miou = 0.0;
  std::optional<double> step_ms_mean;
  std::optional<double> step_ms_stddev;
  std::int64_t mem_bytes = 0;
  std::optional<Tensor> text_weights;
  std::optional<Tensor> spatial_weights;
};

}  // namespace ssp
