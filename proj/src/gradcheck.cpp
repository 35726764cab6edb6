#include "ssp/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <map>

#include "ssp/autodiff.hpp"
#include "ssp/model.hpp"
#include "ssp/optim.hpp"
#include "ssp/prompts.hpp"
#include "ssp/rng.hpp"

namespace ssp {

double GradcheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

namespace {

using Builder = std::function<Node(Graph&, const std::vector<Node>&)>;

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Magnitudes in [lo, hi] with random sign, away from kinks and poles.
Tensor signed_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(lo, hi);
  return t;
}

class Checker {
 public:
  Checker(GradcheckReport& report, Rng& rng) : report_(report), rng_(rng) {}

  /// Scalar readout <out, R> / numel with a fixed random R so every output
  /// element contributes a distinct weight.
  Node readout(Graph& g, Node out) {
    auto it = weights_.find(out.shape());
    if (it == weights_.end()) it = weights_.emplace(out.shape(), random_tensor(rng_, out.shape())).first;
    return mean(mul(out, g.constant_ref(it->second)));
  }

  void check(const std::string& name, std::vector<Variable> vars, const Builder& build) {
    GradcheckEntry entry{name, 0.0, 0};
    for (std::size_t i = 0; i < vars.size(); ++i) {
      if (!vars[i].trainable) continue;
      for (auto& v : vars) v.zero_grad();
      {
        Graph g;
        std::vector<Node> nodes;
        for (auto& v : vars) nodes.push_back(g.param(v));
        g.backward(build(g, nodes));
      }
      const Tensor analytic = vars[i].grad;
      const Tensor original = vars[i].value;
      const auto f = [&](const Tensor& x) {
        vars[i].value = x;
        Graph g;
        std::vector<Node> nodes;
        for (const auto& v : vars) nodes.push_back(g.frozen(v));
        return build(g, nodes).value().item();
      };
      const Tensor numeric = finite_diff_grad(f, original, report_.eps);
      vars[i].value = original;
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic, numeric));
      entry.elements += original.numel();
    }
    report_.entries.push_back(entry);
  }

 private:
  GradcheckReport& report_;
  Rng& rng_;
  std::map<Shape, Tensor> weights_;
};

Variable var(const std::string& name, Tensor value) { return Variable(name, std::move(value), true); }

void op_battery(Checker& c, Rng& rng) {
  const auto unary = [&](const std::string& name, Tensor x, std::function<Node(Node)> op) {
    c.check(name, {var("x", std::move(x))}, [&](Graph& g, const std::vector<Node>& n) { return c.readout(g, op(n[0])); });
  };
  const auto binary = [&](const std::string& name, Tensor a, Tensor b, std::function<Node(Node, Node)> op) {
    c.check(name, {var("a", std::move(a)), var("b", std::move(b))},
            [&](Graph& g, const std::vector<Node>& n) { return c.readout(g, op(n[0], n[1])); });
  };

  binary("matmul", random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2}), [](Node a, Node b) { return matmul(a, b); });
  unary("transpose", random_tensor(rng, {3, 4}), [](Node a) { return transpose(a); });
  binary("add", random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4}), [](Node a, Node b) { return add(a, b); });
  binary("sub", random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4}), [](Node a, Node b) { return sub(a, b); });
  binary("mul", random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4}), [](Node a, Node b) { return mul(a, b); });
  unary("scale", random_tensor(rng, {3, 4}), [](Node a) { return scale(a, -1.7); });
  unary("affine", random_tensor(rng, {3, 4}), [](Node a) { return affine(a, 0.6, 0.25); });
  unary("sigmoid", random_tensor(rng, {3, 4}, -3, 3), [](Node a) { return sigmoid(a); });
  unary("relu", signed_tensor(rng, {3, 4}, 0.1, 1.0), [](Node a) { return relu(a); });
  unary("sin", random_tensor(rng, {3, 4}, -3, 3), [](Node a) { return sin(a); });
  unary("cos", random_tensor(rng, {3, 4}, -3, 3), [](Node a) { return cos(a); });
  unary("reciprocal", signed_tensor(rng, {3, 4}, 0.5, 2.0), [](Node a) { return reciprocal(a); });
  unary("softmax_rows", random_tensor(rng, {3, 4}, -2, 2), [](Node a) { return softmax(a, 1); });
  unary("softmax_cols", random_tensor(rng, {3, 4}, -2, 2), [](Node a) { return softmax(a, 0); });
  unary("mean", random_tensor(rng, {3, 4}), [](Node a) { return mean(a); });
  binary("concat_rows", random_tensor(rng, {2, 3}), random_tensor(rng, {4, 3}), [](Node a, Node b) {
    const Node parts[] = {a, b};
    return concat(parts, 0);
  });
  binary("concat_cols", random_tensor(rng, {3, 2}), random_tensor(rng, {3, 4}), [](Node a, Node b) {
    const Node parts[] = {a, b};
    return concat(parts, 1);
  });
  binary("row_scale", random_tensor(rng, {3, 4}), random_tensor(rng, {3}), [](Node a, Node s) { return row_scale(a, s); });
  unary("gather_rows", random_tensor(rng, {5, 3}), [](Node t) {
    static const int ids[] = {4, 0, 4, 2};
    return gather_rows(t, ids);
  });

  static const std::vector<int> targets = {0, 2, 1, 2, 0};
  c.check("cross_entropy", {var("logits", random_tensor(rng, {5, 3}, -2, 2))},
          [](Graph&, const std::vector<Node>& n) { return cross_entropy(n[0], targets); });
  c.check("cross_entropy_ignore", {var("logits", random_tensor(rng, {5, 3}, -2, 2))},
          [](Graph&, const std::vector<Node>& n) { return cross_entropy(n[0], targets, 2); });

  for (WeightsMode mode : {WeightsMode::learnable, WeightsMode::fixed_half}) {
    Variable defaults("defaults", random_tensor(rng, {3, 4}), false);
    c.check(std::string("fuse_") + to_string(mode),
            {defaults, var("learnable", random_tensor(rng, {3, 4})), var("logits", random_tensor(rng, {3}, -2, 2))},
            [&, mode](Graph& g, const std::vector<Node>& n) { return c.readout(g, fuse(g, n[0], n[1], n[2], mode)); });
  }
}

void end_to_end(Checker& c, Rng& rng, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.embed_dim = 8;
  cfg.num_spatial_prompts = 4;
  cfg.token_dim = 8;
  cfg.num_classes_pretrain = 3;
  const FrozenModel model = FrozenModel::freeze(cfg, ModelWeights::random(cfg, mix_seed(seed, 1)));
  const std::vector<std::string> classes = {"background", "car", "person"};

  std::vector<Tensor> images;
  std::vector<int> targets;
  for (int b = 0; b < 2; ++b) {
    // Well-conditioned image embeddings keep every gradient entry far from
    // the finite-difference noise floor.
    images.push_back(random_tensor(rng, {cfg.num_patches(), cfg.embed_dim}, -2.0, 2.0));
    for (std::size_t p = 0; p < cfg.num_patches(); ++p) targets.push_back(static_cast<int>(rng.below(classes.size())));
  }

  auto [spatial, semantic] = init_prompt_sets(model, classes);
  const auto perturbed = [&](const Tensor& t) {
    Tensor out = t;
    for (auto& v : out.data()) v += rng.normal(0.0, 1.0);
    return out;
  };
  const auto loss_of = [&](Graph& g, const WeightNodes& w, Node zs, Node zt) {
    std::vector<Node> logits;
    for (const Tensor& z : images) logits.push_back(model.decode(g, w, g.constant_ref(z), zs, zt).semantic_logits);
    return cross_entropy(concat(logits, 0), targets);
  };

  // Order: defaults S, learnable S, logits S, defaults T, learnable T, logits T.
  std::vector<Variable> vars = {
      Variable("zs_default", spatial.prompts.defaults, false), var("zs_learn", perturbed(spatial.prompts.defaults)),
      var("omega_s", random_tensor(rng, {cfg.num_spatial_prompts}, -2, 2)),
      Variable("zt_default", semantic.prompts.defaults, false), var("zt_learn", perturbed(semantic.prompts.defaults)),
      var("omega_t", random_tensor(rng, {classes.size()}, -2, 2))};
  const Builder full = [&](Graph& g, const std::vector<Node>& n) {
    const WeightNodes w = model.bind(g);
    return loss_of(g, w, fuse(g, n[0], n[1], n[2], WeightsMode::learnable),
                   fuse(g, n[3], n[4], n[5], WeightsMode::learnable));
  };
  const char* names[] = {"", "ssprompt_loss/spatial_embed", "ssprompt_loss/spatial_weights", "",
                         "ssprompt_loss/text_embed", "ssprompt_loss/text_weights"};
  for (std::size_t i : {1, 2, 4, 5}) {
    std::vector<Variable> only = vars;
    for (std::size_t j = 0; j < only.size(); ++j) only[j].trainable = j == i;
    c.check(names[i], std::move(only), full);
  }

  Tensor points({cfg.num_spatial_prompts, 2});
  for (auto& v : points.data()) v = rng.uniform(1.0, 7.0);
  c.check("vspl_loss/points", {var("points", points)}, [&](Graph& g, const std::vector<Node>& n) {
    const WeightNodes w = model.bind(g);
    return loss_of(g, w, model.encode_spatial(g, w, n[0]), g.constant_ref(semantic.prompts.defaults));
  });
  const auto tokens = tokenize_classes(classes);
  c.check("coop_loss/context", {var("context", random_tensor(rng, {2, cfg.token_dim}, -0.5, 0.5))},
          [&](Graph& g, const std::vector<Node>& n) {
            const WeightNodes w = model.bind(g);
            return loss_of(g, w, g.constant_ref(spatial.prompts.defaults), model.encode_classes(g, w, tokens, n[0]));
          });
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, double eps) {
  GradcheckReport report;
  report.eps = eps;
  Rng rng(mix_seed(seed, 0x6C));
  Checker checker(report, rng);
  op_battery(checker, rng);
  end_to_end(checker, rng, seed);
  return report;
}

}  // namespace ssp
