#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ssp {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t elements = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double eps = 1e-6;

  double worst() const;
  bool passed(double tolerance = 1e-4) const { return worst() < tolerance; }
};

/// Reverse mode against central differences for every differentiable op
/// and for the prompt-learning loss with respect to the learnable
/// embeddings and weight logits on a small seeded instance (4 patches,
/// 4 spatial prompts, 3 classes).
GradcheckReport run_gradcheck(std::uint64_t seed, double eps = 1e-6);

}  // namespace ssp
