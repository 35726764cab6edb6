#include <cmath>

#include <doctest.h>

#include "helpers.hpp"
#include "ssp/persist.hpp"

using namespace ssp;

namespace {

Dataset fewshot(std::size_t k = 16, std::uint64_t seed = 3) {
  return few_shot_sample(test::small_lab().bench.split("downstream").train_pool, k, seed);
}

TrainConfig small_train(std::size_t steps = 30) {
  TrainConfig tc = test::small_config().train;
  tc.total_steps = steps;
  return tc;
}

}  // namespace

TEST_CASE("fuse") {
  const Tensor d = Tensor::matrix({{0, 0}, {1, -1}});
  const Tensor l = Tensor::matrix({{2, 4}, {3, 5}});
  CHECK(fuse(d, l, Tensor::vector({-800, -800}), WeightsMode::learnable) == d);
  const Tensor hi = fuse(d, l, Tensor::vector({800, 800}), WeightsMode::learnable);
  CHECK(max_abs_diff(hi, l) < 1e-15);
  const Tensor mid = fuse(d, l, Tensor::vector({0, 0}), WeightsMode::learnable);
  CHECK(mid.at(0, 0) == 1.0);
  CHECK(mid.at(0, 1) == 2.0);
  CHECK(fuse(d, l, Tensor::vector({5, -5}), WeightsMode::fixed_half) == fuse(d, l, Tensor::vector({0, 0}), WeightsMode::learnable));
  CHECK_THROWS_AS(fuse(d, l, Tensor::vector({0, 0, 0}), WeightsMode::learnable), ShapeError);
  CHECK_THROWS_AS(fuse(d, Tensor({2, 3}), Tensor::vector({0, 0}), WeightsMode::learnable), ShapeError);

  const Tensor lg = Tensor::vector({0.3, -1.2});
  Graph g;
  const Tensor via_graph =
      fuse(g, g.constant(d), g.constant(l), g.constant(lg), WeightsMode::learnable).value();
  CHECK(max_abs_diff(via_graph, fuse(d, l, lg, WeightsMode::learnable)) < 1e-15);
}

TEST_CASE("method and mode names round trip") {
  for (Method m : {Method::default_prompts, Method::spaprompt, Method::semprompt, Method::ssprompt, Method::coop,
                   Method::vspl}) {
    CHECK(parse_method(to_string(m)) == m);
  }
  CHECK(parse_method("ssprompt") == Method::ssprompt);
  CHECK_THROWS_AS(parse_method("prompt-magic"), std::invalid_argument);
}

TEST_CASE("prompt sets at initialisation") {
  const Lab& lab = test::small_lab();
  const auto& names = lab.bench.pretrain.class_names;
  const auto [spa, sem] = init_prompt_sets(lab.model, names);
  CHECK(spa.prompts.fused() == spa.prompts.defaults);
  CHECK(sem.prompts.fused() == sem.prompts.defaults);
  const Tensor w0 = sem.prompts.weights();
  for (double w : w0.data()) CHECK(w == 0.5);
  CHECK(spa.default_points == default_grid_points(lab.model.config()));
  CHECK(spa.prompts.defaults.shape() == Shape{16, 32});
  CHECK(sem.prompts.defaults.shape() == Shape{names.size(), 32});

  const LearnedPrompts d = default_prompts(lab.model, names);
  CHECK(d.spatial == spa.prompts.defaults);
  CHECK(d.text == sem.prompts.defaults);
  const WeightReport rep = weight_report(sem, lab.frequent_classes());
  REQUIRE(rep.comparable());
  CHECK(*rep.frequent_encoder_mean == *rep.rare_encoder_mean);

  CHECK_THROWS_AS(init_prompt_sets(lab.model, {"background", "hovercraft"}), std::invalid_argument);
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = {};
  tc.base_lr = -1.0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = {};
  tc.context_tokens = 0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  CHECK(TrainConfig{}.total_steps == 600);
  CHECK(TrainConfig{}.batch_size == 2);
  CHECK(TrainConfig{}.base_lr == 1e-3);
  CHECK(TrainConfig{}.weight_decay == 1e-4);
  CHECK(TrainConfig{}.power == 0.9);
}

TEST_CASE("default method performs no optimisation") {
  const Lab& lab = test::small_lab();
  const TrainResult r = train(Method::default_prompts, lab.model, fewshot(), small_train());
  const LearnedPrompts d = default_prompts(lab.model, lab.bench.pretrain.class_names);
  CHECK(r.prompts.spatial == d.spatial);
  CHECK(r.prompts.text == d.text);
  CHECK(r.loss_trace.empty());
}

TEST_CASE("zero learning rate leaves every learnable state unchanged") {
  const Lab& lab = test::small_lab();
  TrainConfig tc = small_train(10);
  tc.base_lr = 0.0;
  const auto [spa, sem] = init_prompt_sets(lab.model, lab.bench.pretrain.class_names);
  for (Method m : {Method::ssprompt, Method::coop, Method::vspl}) {
    const TrainResult r = train(m, lab.model, fewshot(), tc);
    CHECK(r.spatial.prompts.learnable.value == spa.prompts.learnable.value);
    CHECK(r.semantic.prompts.learnable.value == sem.prompts.learnable.value);
    CHECK(r.spatial.prompts.weight_logits.value == spa.prompts.weight_logits.value);
    CHECK(r.semantic.prompts.weight_logits.value == sem.prompts.weight_logits.value);
    if (m == Method::vspl) {
      const auto pts = default_grid_points(lab.model.config());
      for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK(r.vspl_points->at(i, 0) == pts[i].h);
        CHECK(r.vspl_points->at(i, 1) == pts[i].w);
      }
    }
  }
}

TEST_CASE("only method-owned state is trained") {
  const Lab& lab = test::small_lab();
  const auto [spa, sem] = init_prompt_sets(lab.model, lab.bench.pretrain.class_names);

  const TrainResult s = train(Method::semprompt, lab.model, fewshot(), small_train());
  CHECK(s.prompts.spatial == spa.prompts.defaults);
  CHECK(s.prompts.text != sem.prompts.defaults);
  CHECK_FALSE(s.prompts.spatial_weights.has_value());
  CHECK(s.prompts.text_weights.has_value());

  const TrainResult p = train(Method::spaprompt, lab.model, fewshot(), small_train());
  CHECK(p.prompts.text == sem.prompts.defaults);
  CHECK(p.prompts.spatial != spa.prompts.defaults);

  TrainConfig half = small_train();
  half.spatial_weights = WeightsMode::fixed_half;
  half.semantic_weights = WeightsMode::fixed_half;
  const TrainResult h = train(Method::ssprompt, lab.model, fewshot(), half);
  const Tensor ws = h.spatial.prompts.weights(), wt = h.semantic.prompts.weights();
  for (double w : ws.data()) CHECK(w == 0.5);
  for (double w : wt.data()) CHECK(w == 0.5);

  const TrainResult full = train(Method::ssprompt, lab.model, fewshot(), small_train());
  CHECK(full.semantic.prompts.weight_logits.value != sem.prompts.weight_logits.value);
  CHECK(full.spatial.prompts.weight_logits.value != spa.prompts.weight_logits.value);
}

TEST_CASE("default caches are never written") {
  const Lab& lab = test::small_lab();
  const auto [spa, sem] = init_prompt_sets(lab.model, lab.bench.pretrain.class_names);
  const std::string spa_bytes = store({{"d", spa.prompts.defaults}});
  const std::string sem_bytes = store({{"d", sem.prompts.defaults}});
  const TrainResult r = train(Method::ssprompt, lab.model, fewshot(), small_train(500));
  CHECK(store({{"d", r.spatial.prompts.defaults}}) == spa_bytes);
  CHECK(store({{"d", r.semantic.prompts.defaults}}) == sem_bytes);
}

TEST_CASE("encoder invocations inside the training loop") {
  const Lab& lab = test::small_lab();
  const std::size_t steps = 25;
  const TrainResult ss = train(Method::ssprompt, lab.model, fewshot(), small_train(steps));
  CHECK(ss.loop_calls.text == 0);
  CHECK(ss.loop_calls.spatial == 0);
  CHECK(ss.loop_calls.image == 0);
  const TrainResult coop = train(Method::coop, lab.model, fewshot(), small_train(steps));
  CHECK(coop.loop_calls.text == steps);
  CHECK(coop.loop_calls.spatial == 0);
  const TrainResult vspl = train(Method::vspl, lab.model, fewshot(), small_train(steps));
  CHECK(vspl.loop_calls.spatial == steps);
  CHECK(vspl.loop_calls.text == 0);
}

TEST_CASE("freeze audit") {
  const Lab& lab = test::small_lab();
  const std::uint64_t before = freeze_checksum(lab.model);
  for (Method m : {Method::ssprompt, Method::coop, Method::vspl, Method::spaprompt, Method::semprompt}) {
    (void)train(m, lab.model, fewshot(), small_train(20));
    CHECK(freeze_audit(lab.model, before, freeze_checksum(lab.model)));
  }
  ModelWeights w = lab.model.thawed_weights();
  w.value_proj.value[0] += 1e-15;
  const FrozenModel perturbed = FrozenModel::freeze(lab.model.config(), w);
  CHECK_FALSE(freeze_audit(lab.model, before, freeze_checksum(perturbed)));
}

TEST_CASE("frozen checksum survives a long prompt-learning run") {
  const Lab& lab = test::small_lab();
  const std::uint64_t before = freeze_checksum(lab.model);
  (void)train(Method::ssprompt, lab.model, fewshot(), small_train(1000));
  CHECK(freeze_checksum(lab.model) == before);
  CHECK(lab.model.intact());
}

TEST_CASE("training reduces the loss and is reproducible") {
  const Lab& lab = test::small_lab();
  const TrainResult a = train(Method::ssprompt, lab.model, fewshot(), small_train(60));
  const TrainResult b = train(Method::ssprompt, lab.model, fewshot(), small_train(60));
  REQUIRE(a.loss_trace.size() == 60);
  CHECK(a.loss_trace.back() < a.loss_trace.front());
  CHECK(a.loss_trace == b.loss_trace);
  CHECK(a.prompts.spatial == b.prompts.spatial);
  CHECK(a.prompts.text == b.prompts.text);
}

TEST_CASE("divergence is reported with the step") {
  const Lab& lab = test::small_lab();
  TrainConfig tc = small_train(50);
  tc.base_lr = 1e200;
  CHECK_THROWS_AS(train(Method::ssprompt, lab.model, fewshot(), tc), TrainingDiverged);
}

TEST_CASE("prompt learning improves held-out mIoU") {
  const Lab& lab = test::small_lab();
  const Dataset& eval = lab.bench.split("downstream").eval;
  const double base = evaluate(lab.model, default_prompts(lab.model, eval.class_names), eval).miou;
  const TrainResult r = train(Method::ssprompt, lab.model, fewshot(), small_train(200));
  CHECK(evaluate(lab.model, r.prompts, eval).miou > base);
}

TEST_CASE("init state evaluates exactly like the default prompts") {
  const Lab& lab = test::small_lab();
  const Dataset& eval = lab.bench.split("downstream").eval;
  const auto [spa, sem] = init_prompt_sets(lab.model, eval.class_names);
  const LearnedPrompts init{spa.prompts.fused(), sem.prompts.fused(), spa.prompts.weights(), sem.prompts.weights()};
  const EvalResult a = evaluate(lab.model, init, eval);
  const EvalResult b = evaluate(lab.model, default_prompts(lab.model, eval.class_names), eval);
  CHECK(a.miou == b.miou);
  CHECK(a.confusion == b.confusion);
}

TEST_CASE("prompts file round trip") {
  const Lab& lab = test::small_lab();
  const TrainResult r = train(Method::ssprompt, lab.model, fewshot(), small_train(10));
  const PromptsFile f{r.prompts, Method::ssprompt, 16, 42};
  const PromptsFile back = prompts_from_named_tensors(load(store(to_named_tensors(f))));
  CHECK(back.method == Method::ssprompt);
  CHECK(back.shots == 16);
  CHECK(back.seed == 42);
  CHECK(back.prompts.spatial == r.prompts.spatial);
  CHECK(back.prompts.text == r.prompts.text);
  CHECK(*back.prompts.text_weights == *r.prompts.text_weights);

  auto broken = to_named_tensors(f);
  broken.erase(broken.begin());
  CHECK_THROWS(prompts_from_named_tensors(broken));
}
