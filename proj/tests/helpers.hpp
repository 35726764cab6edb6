#pragma once

#include <cstdint>
#include <vector>

#include "ssp/experiments.hpp"
#include "ssp/rng.hpp"
#include "ssp/tensor.hpp"

namespace ssp::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// A small benchmark and a briefly pretrained model shared by the slower
/// tests. Built once per process.
inline RunConfig small_config() {
  RunConfig cfg = RunConfig::defaults();
  cfg.pretrain.steps = 400;
  cfg.sizes = {128, 128, 32};
  cfg.train.total_steps = 60;
  cfg.suite_seeds = 2;
  cfg.suite_shots = 4;
  cfg.bench_steps = 12;
  cfg.bench_warmup = 2;
  return cfg;
}

inline const Lab& small_lab() {
  static const Lab lab = make_lab(small_config(), pretrain_model(small_config()));
  return lab;
}

}  // namespace ssp::test
