#include "ssp/eval.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "ssp/kernels.hpp"

#ifdef SSP_HAVE_OPENMP
#include <omp.h>
#endif

namespace ssp {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {}

ConfusionMatrix ConfusionMatrix::from_counts(std::size_t num_classes, std::vector<std::uint64_t> counts) {
  if (counts.size() != num_classes * num_classes) {
    throw std::invalid_argument(fmt::format("confusion: {} counts for {} classes", counts.size(), num_classes));
  }
  ConfusionMatrix cm(num_classes);
  cm.counts_ = std::move(counts);
  return cm;
}

void ConfusionMatrix::add(std::size_t gt, std::size_t pred, std::uint64_t n) {
  if (gt >= k_ || pred >= k_) {
    throw std::out_of_range(fmt::format("confusion: label ({}, {}) outside {} classes", gt, pred, k_));
  }
  counts_[gt * k_ + pred] += n;
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("confusion: merging matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> gt, std::size_t num_classes) {
  if (pred.size() != gt.size()) {
    throw ShapeError(fmt::format("confusion: {} predictions for {} labels", pred.size(), gt.size()));
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || gt[i] < 0) throw std::out_of_range("confusion: negative label");
    cm.add(static_cast<std::size_t>(gt[i]), static_cast<std::size_t>(pred[i]));
  }
  return cm;
}

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError(fmt::format("confusion: label maps {}x{} and {}x{}", pred.height, pred.width, gt.height, gt.width));
  }
  std::vector<int> p(pred.labels.begin(), pred.labels.end()), g(gt.labels.begin(), gt.labels.end());
  return confusion(p, g, num_classes);
}

std::vector<std::optional<double>> per_class_iou(const ConfusionMatrix& cm) {
  const std::size_t k = cm.num_classes();
  std::vector<std::optional<double>> out(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t gt = 0, pred = 0;
    for (std::size_t j = 0; j < k; ++j) {
      gt += cm.at(c, j);
      pred += cm.at(j, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t uni = gt + pred - tp;
    if (uni > 0) out[c] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return out;
}

double miou(const ConfusionMatrix& cm) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& iou : per_class_iou(cm)) {
    if (iou) {
      sum += *iou;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("miou: no class appears in ground truth or prediction");
  return sum / static_cast<double>(n);
}

std::vector<int> predict_patches(const FrozenModel& model, const LearnedPrompts& prompts, const Tensor& image) {
  const Prediction pred = model.decode(model.encode_image(image), prompts.spatial, prompts.text);
  const Tensor& s = pred.semantic_logits;
  std::vector<int> out(s.rows());
  for (std::size_t p = 0; p < s.rows(); ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < s.cols(); ++c) {
      if (s.at(p, c) > s.at(p, best)) best = c;
    }
    out[p] = static_cast<int>(best);
  }
  return out;
}

namespace {

void check_eval_inputs(const FrozenModel& model, const LearnedPrompts& prompts, const Dataset& dataset) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const std::size_t d = model.config().embed_dim;
  if (prompts.spatial.rank() != 2 || prompts.spatial.cols() != d || prompts.text.rank() != 2 ||
      prompts.text.cols() != d) {
    throw ShapeError(fmt::format("evaluate: prompts {} / {} do not match embed_dim {}", shape_str(prompts.spatial.shape()),
                                 shape_str(prompts.text.shape()), d));
  }
  if (prompts.text.rows() != dataset.class_names.size()) {
    throw ShapeError(fmt::format("evaluate: {} text prompts for {} classes", prompts.text.rows(),
                                 dataset.class_names.size()));
  }
}

ConfusionMatrix image_confusion(const FrozenModel& model, const LearnedPrompts& prompts, const Sample& s,
                                std::size_t k) {
  const std::vector<int> pred = predict_patches(model, prompts, s.image);
  const std::vector<int> gt = patch_labels(s.labels, model.config().patch_size, k);
  return confusion(pred, gt, k);
}

EvalResult finish(ConfusionMatrix cm) {
  EvalResult r;
  r.class_iou = per_class_iou(cm);
  r.miou = miou(cm);
  r.confusion = std::move(cm);
  return r;
}

}  // namespace

EvalResult evaluate_serial(const FrozenModel& model, const LearnedPrompts& prompts, const Dataset& dataset) {
  check_eval_inputs(model, prompts, dataset);
  const std::size_t k = dataset.class_names.size();
  ConfusionMatrix total(k);
  for (const Sample& s : dataset.samples) total += image_confusion(model, prompts, s, k);
  return finish(std::move(total));
}

EvalResult evaluate(const FrozenModel& model, const LearnedPrompts& prompts, const Dataset& dataset) {
#ifdef SSP_HAVE_OPENMP
  const int threads = kernels::max_threads();
  if (threads <= 1 || dataset.size() < 2) return evaluate_serial(model, prompts, dataset);
  check_eval_inputs(model, prompts, dataset);
  const std::size_t k = dataset.class_names.size();
  const auto n = static_cast<std::ptrdiff_t>(dataset.size());
  std::vector<ConfusionMatrix> partial(static_cast<std::size_t>(threads), ConfusionMatrix(k));
  std::exception_ptr failure;
#pragma omp parallel num_threads(threads)
  {
    ConfusionMatrix& mine = partial[static_cast<std::size_t>(omp_get_thread_num())];
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      try {
        mine += image_confusion(model, prompts, dataset.samples[static_cast<std::size_t>(i)], k);
      } catch (...) {
#pragma omp critical(ssp_eval_failure)
        if (!failure) failure = std::current_exception();
      }
    }
  }
  if (failure) std::rethrow_exception(failure);
  ConfusionMatrix total(k);
  for (const auto& cm : partial) total += cm;
  return finish(std::move(total));
#else
  return evaluate_serial(model, prompts, dataset);
#endif
}

TimingReport time_training(Method method, const FrozenModel& model, const Dataset& fewshot, TrainConfig cfg,
                           std::size_t steps, std::size_t warmup) {
  if (steps <= warmup) {
    throw std::invalid_argument(fmt::format("time_training: steps ({}) must exceed warmup ({})", steps, warmup));
  }
  cfg.total_steps = steps;
  cfg.record_step_times = true;
  TrainResult r;
  {
    const kernels::SerialScope serial;
    r = train(method, model, fewshot, cfg);
  }
  TimingReport out;
  out.prompts = r.prompts;
  out.loop_calls = r.loop_calls;
  out.peak_tensor_bytes = r.peak_tensor_bytes;
  const std::span<const double> measured(r.step_ms.data() + warmup, r.step_ms.size() - warmup);
  out.measured_steps = measured.size();
  for (double t : measured) out.mean_ms += t;
  out.mean_ms /= static_cast<double>(measured.size());
  for (double t : measured) out.stddev_ms += (t - out.mean_ms) * (t - out.mean_ms);
  out.stddev_ms = std::sqrt(out.stddev_ms / static_cast<double>(measured.size()));
  return out;
}

WeightReport weight_report(const SemanticPromptSet& semantic, const std::vector<bool>& frequent) {
  return weight_report(semantic.class_names, semantic.prompts.weights(), frequent);
}

WeightReport weight_report(const std::vector<std::string>& class_names, const Tensor& w,
                           const std::vector<bool>& frequent) {
  if (class_names.size() != w.numel()) {
    throw std::invalid_argument(fmt::format("weight_report: {} names for {} weights", class_names.size(), w.numel()));
  }
  if (frequent.size() != w.numel()) {
    throw std::invalid_argument(fmt::format("weight_report: {} roles for {} classes", frequent.size(), w.numel()));
  }
  WeightReport r;
  r.class_names = class_names;
  r.frequent = frequent;
  r.weights.assign(w.data().begin(), w.data().end());
  double sum[2] = {0, 0};
  std::size_t count[2] = {0, 0};
  for (std::size_t c = 0; c < frequent.size(); ++c) {
    sum[frequent[c]] += 1.0 - r.weights[c];
    ++count[frequent[c]];
  }
  if (count[1]) r.frequent_encoder_mean = sum[1] / static_cast<double>(count[1]);
  if (count[0]) r.rare_encoder_mean = sum[0] / static_cast<double>(count[0]);
  return r;
}

}  // namespace ssp
