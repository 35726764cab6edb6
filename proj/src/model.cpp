#include "ssp/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "ssp/optim.hpp"
#include "ssp/persist.hpp"
#include "ssp/rng.hpp"

namespace ssp {

// ---- vocabulary

const Vocabulary& Vocabulary::builtin() {
  static const Vocabulary vocab({
      "<unk>", "background", "sky",   "car",    "person", "sign",     "pole",   "road",
      "building", "tree",    "wall",  "fence",  "rider",  "truck",    "bus",    "train",
      "bicycle", "terrain",  "a",     "photo",  "of",     "the",      "texture", "stuff",
  });
  return vocab;
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
  std::istringstream in{std::string(text)};
  std::vector<int> ids;
  std::string word;
  while (in >> word) {
    std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return std::tolower(c); });
    auto it = std::find(words_.begin(), words_.end(), word);
    if (it == words_.end() || it == words_.begin()) {
      throw std::invalid_argument(fmt::format("tokenize: '{}' is not in the vocabulary", word));
    }
    ids.push_back(static_cast<int>(it - words_.begin()));
  }
  if (ids.empty()) throw std::invalid_argument("tokenize: empty class name");
  return ids;
}

std::vector<std::vector<int>> tokenize_classes(const std::vector<std::string>& names) {
  std::vector<std::vector<int>> out;
  for (const auto& n : names) out.push_back(Vocabulary::builtin().tokenize(n));
  return out;
}

// ---- config

std::size_t ModelConfig::grid_side() const {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(num_spatial_prompts))));
  if (side * side != num_spatial_prompts) {
    throw std::invalid_argument(fmt::format("model: num_spatial_prompts {} is not a perfect square", num_spatial_prompts));
  }
  return side;
}

void ModelConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw std::invalid_argument(fmt::format("model: image_size {} not divisible by patch_size {}", image_size, patch_size));
  }
  if (embed_dim == 0 || embed_dim % 2 != 0) throw std::invalid_argument("model: embed_dim must be even and positive");
  if (num_spatial_prompts == 0) throw std::invalid_argument("model: num_spatial_prompts must be positive");
  grid_side();
  if (token_dim == 0) throw std::invalid_argument("model: token_dim must be positive");
  if (bands() == 0) throw std::invalid_argument("model: fourier_bands must be positive");
  if (!(fourier_scale > 0.0)) throw std::invalid_argument("model: fourier_scale must be positive");
  if (num_classes_pretrain == 0) throw std::invalid_argument("model: num_classes_pretrain must be positive");
  if (vocab_size != Vocabulary::builtin().size()) {
    throw std::invalid_argument(fmt::format("model: vocab_size {} does not match the built-in vocabulary ({})", vocab_size,
                                            Vocabulary::builtin().size()));
  }
}

std::vector<Point> default_grid_points(const ModelConfig& cfg) {
  const std::size_t side = cfg.grid_side();
  const double cell_h = static_cast<double>(cfg.image_size) / static_cast<double>(side);
  const double cell_w = cell_h;
  std::vector<Point> pts;
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j)
      pts.push_back({(static_cast<double>(i) + 0.5) * cell_h, (static_cast<double>(j) + 0.5) * cell_w});
  return pts;
}

// ---- weights

namespace {
Tensor gaussian(Rng& rng, Shape shape, double stddev) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(data));
}
}  // namespace

ModelWeights ModelWeights::random(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x30DE1));
  const std::size_t d = cfg.embed_dim, f = cfg.patch_features(), b = cfg.bands();
  const auto he = [](std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  const auto lecun = [](std::size_t fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); };
  ModelWeights w;
  w.patch_projection = Variable("image.patch_projection", gaussian(rng, {f, d}, lecun(f)), true);
  w.mixer = Variable("image.mixer", gaussian(rng, {d, d}, he(d)), true);
  w.fourier_basis = Variable("spatial.fourier_basis", gaussian(rng, {2, b}, cfg.fourier_scale), false);
  w.spatial_linear = Variable("spatial.linear", gaussian(rng, {2 * b, d}, lecun(2 * b)), true);
  w.token_table = Variable("text.token_table", gaussian(rng, {cfg.vocab_size, cfg.token_dim}, 1.0), true);
  w.text_hidden = Variable("text.hidden", gaussian(rng, {cfg.token_dim, d}, he(cfg.token_dim)), true);
  w.text_out = Variable("text.out", gaussian(rng, {d, d}, lecun(d)), true);
  w.query_proj = Variable("decoder.query_proj", gaussian(rng, {d, d}, lecun(d)), true);
  w.key_proj = Variable("decoder.key_proj", gaussian(rng, {d, d}, lecun(d)), true);
  w.value_proj = Variable("decoder.value_proj", gaussian(rng, {d, d}, lecun(d)), true);
  return w;
}

std::vector<Variable*> ModelWeights::all() {
  return {&patch_projection, &mixer, &fourier_basis, &spatial_linear, &token_table,
          &text_hidden,      &text_out, &query_proj,  &key_proj,       &value_proj};
}

std::vector<const Variable*> ModelWeights::all() const {
  return {&patch_projection, &mixer, &fourier_basis, &spatial_linear, &token_table,
          &text_hidden,      &text_out, &query_proj,  &key_proj,       &value_proj};
}

void ModelWeights::set_trainable(bool trainable) {
  for (Variable* v : all()) v->trainable = trainable;
  fourier_basis.trainable = false;
}

EncoderCalls& EncoderCalls::current() {
  thread_local EncoderCalls calls;
  return calls;
}

WeightNodes bind_weights(Graph& g, ModelWeights& w, bool track) {
  auto b = [&](Variable& v) { return track ? g.param(v) : g.frozen(v); };
  return {b(w.patch_projection), b(w.mixer),      b(w.fourier_basis), b(w.spatial_linear), b(w.token_table),
          b(w.text_hidden),      b(w.text_out),   b(w.query_proj),    b(w.key_proj),       b(w.value_proj)};
}

WeightNodes bind_weights(Graph& g, const ModelWeights& w) {
  auto b = [&](const Variable& v) { return g.frozen(v); };
  return {b(w.patch_projection), b(w.mixer),      b(w.fourier_basis), b(w.spatial_linear), b(w.token_table),
          b(w.text_hidden),      b(w.text_out),   b(w.query_proj),    b(w.key_proj),       b(w.value_proj)};
}

// ---- forward passes

namespace forward {

Tensor patchify(const ModelConfig& cfg, const Tensor& image) {
  const std::size_t n = cfg.image_size, ps = cfg.patch_size, side = cfg.patches_per_side();
  if (image.shape() != Shape{n, n, 3}) {
    throw ShapeError(fmt::format("encode_image: expected [{}x{}x3] image, got {}", n, n, shape_str(image.shape())));
  }
  Tensor patches({side * side, cfg.patch_features()});
  for (std::size_t py = 0; py < side; ++py)
    for (std::size_t px = 0; px < side; ++px) {
      std::size_t f = 0;
      const std::size_t row = py * side + px;
      for (std::size_t y = 0; y < ps; ++y)
        for (std::size_t x = 0; x < ps; ++x)
          for (std::size_t ch = 0; ch < 3; ++ch)
            patches.at(row, f++) = image[((py * ps + y) * n + (px * ps + x)) * 3 + ch];
    }
  return patches;
}

Node image(Graph& g, const WeightNodes& w, const ModelConfig& cfg, const Tensor& img) {
  Node patches = g.constant(patchify(cfg, img));
  return relu(matmul(matmul(patches, w.patch_projection), w.mixer));
}

Node spatial_features(Graph& g, const WeightNodes& w, const ModelConfig& cfg, Node points) {
  const Tensor& pv = points.value();
  if (pv.rank() != 2 || pv.dim(1) != 2) throw ShapeError("encode_spatial: points must be Nx2, got " + shape_str(pv.shape()));
  Tensor inv_size(pv.shape());
  const double size = static_cast<double>(cfg.image_size);
  for (std::size_t i = 0; i < pv.numel(); ++i) inv_size[i] = 1.0 / size;
  Node normalised = mul(points, g.constant(std::move(inv_size)));
  Node phase = scale(matmul(normalised, w.fourier_basis), 2.0 * std::numbers::pi);
  const Node parts[] = {sin(phase), cos(phase)};
  return concat(parts, 1);
}

Node spatial(Graph& g, const WeightNodes& w, const ModelConfig& cfg, Node points) {
  return matmul(spatial_features(g, w, cfg, points), w.spatial_linear);
}

Node text(Graph& g, const WeightNodes& w, std::span<const int> tokens, std::optional<Node> context) {
  if (tokens.empty()) throw std::invalid_argument("encode_text: empty token sequence");
  Node rows = gather_rows(w.token_table, tokens);
  if (context) {
    const Node parts[] = {*context, rows};
    rows = concat(parts, 0);
  }
  const std::size_t len = rows.value().dim(0);
  Node pooled = matmul(g.constant(Tensor::full({1, len}, 1.0 / static_cast<double>(len))), rows);
  return matmul(relu(matmul(pooled, w.text_hidden)), w.text_out);
}

Node classes(Graph& g, const WeightNodes& w, const std::vector<std::vector<int>>& class_tokens,
             std::optional<Node> context) {
  if (class_tokens.empty()) throw std::invalid_argument("encode_text: no class names");
  std::vector<Node> rows;
  rows.reserve(class_tokens.size());
  for (const auto& t : class_tokens) rows.push_back(text(g, w, t, context));
  return concat(rows, 0);
}

DecodeNodes decode(Graph& g, const WeightNodes& w, Node z_img, Node z_spatial, Node z_text) {
  const Tensor& zi = z_img.value();
  const Tensor& zs = z_spatial.value();
  const Tensor& zt = z_text.value();
  if (zi.rank() != 2 || zs.rank() != 2 || zt.rank() != 2) throw ShapeError("decode: embeddings must be rank-2");
  if (zs.dim(0) == 0 || zt.dim(0) == 0) throw std::invalid_argument("decode: need at least one prompt and one class");
  const std::size_t d = zi.dim(1);
  if (zs.dim(1) != d || zt.dim(1) != d) {
    throw ShapeError(fmt::format("decode: embedding widths differ: image {}, spatial {}, text {}", shape_str(zi.shape()),
                                 shape_str(zs.shape()), shape_str(zt.shape())));
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const std::size_t p = zi.dim(0);

  Node queries = matmul(z_spatial, w.query_proj);
  Node keys = matmul(z_img, w.key_proj);
  Node values = matmul(z_img, w.value_proj);
  Node masks = scale(matmul(queries, transpose(keys)), inv_sqrt_d);  // N x P
  Node gate = sigmoid(masks);
  Node pooled_sum = matmul(gate, values);                                   // N x D
  Node gate_mass = matmul(gate, g.constant(Tensor::full({p, 1}, 1.0)));    // N x 1
  Node pooled = row_scale(pooled_sum, reciprocal(gate_mass));
  Node class_scores = scale(matmul(pooled, transpose(z_text)), inv_sqrt_d);  // N x K
  Node attention = transpose(softmax(masks, 0));                             // P x N
  Node semantic = matmul(attention, class_scores);                          // P x K
  return {masks, class_scores, attention, semantic};
}

}  // namespace forward

// ---- frozen model

FrozenModel::FrozenModel(ModelConfig cfg, ModelWeights weights) : cfg_(std::move(cfg)), weights_(std::move(weights)) {}

FrozenModel FrozenModel::freeze(const ModelConfig& cfg, ModelWeights weights) {
  cfg.validate();
  for (Variable* v : weights.all()) {
    v->trainable = false;
    v->zero_grad();
  }
  FrozenModel m(cfg, std::move(weights));
  m.checksum_ = checksum_of(m.named_tensors());
  return m;
}

FrozenModel FrozenModel::restore(const std::vector<std::pair<std::string, Tensor>>& tensors) {
  const Tensor& meta = find_tensor(tensors, "meta.model_config");
  if (meta.numel() != 9) throw std::invalid_argument("model checkpoint: meta.model_config must hold 9 values");
  const auto field = [&](std::size_t i) {
    const double v = meta.data()[i];
    if (v < 0 || v != std::floor(v)) throw std::invalid_argument("model checkpoint: bad config value");
    return static_cast<std::size_t>(v);
  };
  ModelConfig cfg;
  cfg.image_size = field(0);
  cfg.patch_size = field(1);
  cfg.embed_dim = field(2);
  cfg.num_spatial_prompts = field(3);
  cfg.token_dim = field(4);
  cfg.fourier_bands = field(5);
  cfg.fourier_scale = meta.data()[6];
  cfg.num_classes_pretrain = field(7);
  cfg.vocab_size = field(8);
  cfg.validate();

  ModelWeights w = ModelWeights::random(cfg, 0);
  if (tensors.size() != w.all().size() + 1) {
    throw std::invalid_argument(fmt::format("model checkpoint: {} entries, expected {}", tensors.size(), w.all().size() + 1));
  }
  for (Variable* v : w.all()) {
    const Tensor& t = find_tensor(tensors, v->name);
    if (t.shape() != v->value.shape()) {
      throw std::invalid_argument(fmt::format("model checkpoint: '{}' has shape {}, expected {}", v->name,
                                              shape_str(t.shape()), shape_str(v->value.shape())));
    }
    v->value = t;
  }
  return freeze(cfg, std::move(w));
}

ModelWeights FrozenModel::thawed_weights() const {
  ModelWeights w = weights_;
  w.set_trainable(true);
  return w;
}

std::vector<std::pair<std::string, Tensor>> FrozenModel::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("meta.model_config",
                   Tensor::vector({static_cast<double>(cfg_.image_size), static_cast<double>(cfg_.patch_size),
                                   static_cast<double>(cfg_.embed_dim), static_cast<double>(cfg_.num_spatial_prompts),
                                   static_cast<double>(cfg_.token_dim), static_cast<double>(cfg_.bands()),
                                   cfg_.fourier_scale, static_cast<double>(cfg_.num_classes_pretrain),
                                   static_cast<double>(cfg_.vocab_size)}));
  for (const Variable* v : weights_.all()) out.emplace_back(v->name, v->value);
  return out;
}

std::uint64_t freeze_checksum(const FrozenModel& model) { return checksum_of(model.named_tensors()); }

bool FrozenModel::intact() const { return checksum_of(named_tensors()) == checksum_; }

Tensor FrozenModel::encode_image(const Tensor& img) const {
  ++EncoderCalls::current().image;
  Graph g;
  const WeightNodes w = bind(g);
  return forward::image(g, w, cfg_, img).value();
}

Tensor FrozenModel::encode_spatial(Point p) const {
  const Point pts[] = {p};
  return encode_spatial(pts).reshaped({cfg_.embed_dim});
}

namespace {
Tensor points_tensor(const ModelConfig& cfg, std::span<const Point> points) {
  if (points.empty()) throw std::invalid_argument("encode_spatial: no points");
  const double size = static_cast<double>(cfg.image_size);
  Tensor t({points.size(), 2});
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Point& p = points[i];
    if (!(p.h > 0.0 && p.h < size && p.w > 0.0 && p.w < size)) {
      throw std::out_of_range(fmt::format("encode_spatial: point ({}, {}) outside the open image (0, {})", p.h, p.w, size));
    }
    t.at(i, 0) = p.h;
    t.at(i, 1) = p.w;
  }
  return t;
}
}  // namespace

Tensor FrozenModel::encode_spatial(std::span<const Point> points) const {
  Tensor pts = points_tensor(cfg_, points);
  Graph g;
  const WeightNodes w = bind(g);
  return encode_spatial(g, w, g.constant(std::move(pts))).value();
}

Node FrozenModel::encode_spatial(Graph& g, const WeightNodes& w, Node points) const {
  ++EncoderCalls::current().spatial;
  const Tensor& pv = points.value();
  const double size = static_cast<double>(cfg_.image_size);
  for (double v : pv.data()) {
    if (!(v > 0.0 && v < size)) throw std::out_of_range(fmt::format("encode_spatial: coordinate {} outside (0, {})", v, size));
  }
  return forward::spatial(g, w, cfg_, points);
}

Tensor FrozenModel::encode_text(std::span<const int> tokens, const Tensor* context) const {
  ++EncoderCalls::current().text;
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size) {
      throw std::out_of_range(fmt::format("encode_text: unknown token id {}", t));
    }
  }
  Graph g;
  const WeightNodes w = bind(g);
  std::optional<Node> ctx;
  if (context) ctx = g.constant_ref(*context);
  return forward::text(g, w, tokens, ctx).value().reshaped({cfg_.embed_dim});
}

Tensor FrozenModel::encode_classes(const std::vector<std::vector<int>>& class_tokens) const {
  Graph g;
  const WeightNodes w = bind(g);
  return encode_classes(g, w, class_tokens, std::nullopt).value();
}

Node FrozenModel::encode_classes(Graph& g, const WeightNodes& w, const std::vector<std::vector<int>>& class_tokens,
                                 std::optional<Node> context) const {
  ++EncoderCalls::current().text;
  for (const auto& seq : class_tokens)
    for (int t : seq) {
      if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size) {
        throw std::out_of_range(fmt::format("encode_text: unknown token id {}", t));
      }
    }
  return forward::classes(g, w, class_tokens, context);
}

Prediction FrozenModel::decode(const Tensor& z_img, const Tensor& z_spatial, const Tensor& z_text) const {
  Graph g;
  const WeightNodes w = bind(g);
  DecodeNodes out = decode(g, w, g.constant_ref(z_img), g.constant_ref(z_spatial), g.constant_ref(z_text));
  return {out.mask_logits.value(), out.class_scores.value(), out.semantic_logits.value()};
}

DecodeNodes FrozenModel::decode(Graph& g, const WeightNodes& w, Node z_img, Node z_spatial, Node z_text) const {
  if (z_img.value().rank() != 2 || z_img.value().dim(0) != cfg_.num_patches() ||
      z_img.value().dim(1) != cfg_.embed_dim) {
    throw ShapeError(fmt::format("decode: image embedding {} does not match [{}x{}]", shape_str(z_img.shape()),
                                 cfg_.num_patches(), cfg_.embed_dim));
  }
  return forward::decode(g, w, z_img, z_spatial, z_text);
}

// ---- labels

std::vector<int> patch_labels(const LabelMap& labels, std::size_t patch_size, std::size_t num_classes) {
  if (patch_size == 0 || labels.height % patch_size != 0 || labels.width % patch_size != 0) {
    throw std::invalid_argument("patch_labels: label map not divisible by patch size");
  }
  const std::size_t ph = labels.height / patch_size, pw = labels.width / patch_size;
  std::vector<int> out(ph * pw);
  std::vector<std::size_t> votes(num_classes);
  for (std::size_t py = 0; py < ph; ++py)
    for (std::size_t px = 0; px < pw; ++px) {
      std::fill(votes.begin(), votes.end(), 0);
      for (std::size_t y = 0; y < patch_size; ++y)
        for (std::size_t x = 0; x < patch_size; ++x) {
          const auto c = labels.at(py * patch_size + y, px * patch_size + x);
          if (c >= num_classes) throw std::out_of_range(fmt::format("patch_labels: label {} >= {}", c, num_classes));
          ++votes[c];
        }
      // max_element returns the first maximum: ties go to the lowest id.
      out[py * pw + px] = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  return out;
}

// ---- pretraining

FrozenModel pretrain(const ModelConfig& cfg, ModelWeights weights, const Dataset& corpus,
                     const std::vector<bool>& rare_classes, const PretrainConfig& pcfg, PretrainReport* report) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
  const std::size_t num_classes = corpus.class_names.size();
  if (num_classes > cfg.num_classes_pretrain) {
    throw std::invalid_argument(fmt::format("pretrain: corpus has {} classes, model supports {}", num_classes,
                                            cfg.num_classes_pretrain));
  }
  if (rare_classes.size() != num_classes) throw std::invalid_argument("pretrain: rare-class mask length mismatch");
  if (!(pcfg.imbalance_ratio >= 1.0)) throw std::invalid_argument("pretrain: imbalance_ratio must be >= 1");
  if (pcfg.batch_size == 0) throw std::invalid_argument("pretrain: batch_size must be positive");
  const auto class_tokens = tokenize_classes(corpus.class_names);
  weights.set_trainable(true);

  // Patch targets for each sample and its mirror image.
  std::vector<std::vector<int>> targets[2];
  std::vector<Sample> mirrored;
  for (const auto& s : corpus.samples) {
    targets[0].push_back(patch_labels(s.labels, cfg.patch_size, num_classes));
    mirrored.push_back(flip_horizontal(s));
    targets[1].push_back(patch_labels(mirrored.back().labels, cfg.patch_size, num_classes));
  }

  const auto grid = default_grid_points(cfg);
  Tensor grid_tensor({grid.size(), 2});
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid_tensor.at(i, 0) = grid[i].h;
    grid_tensor.at(i, 1) = grid[i].w;
  }

  OptimizerState opt{pcfg.base_lr, pcfg.weight_decay, pcfg.power, pcfg.steps, 0};
  Rng rng(mix_seed(pcfg.seed, 0x9E7));
  const double drop_p = 1.0 - 1.0 / pcfg.imbalance_ratio;
  std::vector<Variable*> params = weights.all();
  if (report) report->text_supervised_steps.assign(num_classes, 0);

  for (std::size_t step = 0; step < pcfg.steps; ++step) {
    Graph g;
    const WeightNodes tracked = bind_weights(g, weights, true);
    const WeightNodes fixed = bind_weights(g, std::as_const(weights));

    std::vector<Node> text_rows;
    for (std::size_t c = 0; c < num_classes; ++c) {
      const bool drop = rare_classes[c] && drop_p > 0.0 && rng.bernoulli(drop_p);
      text_rows.push_back(forward::text(g, drop ? fixed : tracked, class_tokens[c], std::nullopt));
      if (report && !drop) ++report->text_supervised_steps[c];
    }
    Node z_text = concat(text_rows, 0);
    Node z_spatial = forward::spatial(g, tracked, cfg, g.constant_ref(grid_tensor));

    std::vector<Node> logits;
    std::vector<int> batch_targets;
    for (std::size_t b = 0; b < pcfg.batch_size; ++b) {
      const std::size_t idx = rng.below(corpus.size());
      const int flip = rng.bernoulli(0.5) ? 1 : 0;
      const Sample& s = flip ? mirrored[idx] : corpus.samples[idx];
      Node z_img = forward::image(g, tracked, cfg, s.image);
      logits.push_back(forward::decode(g, tracked, z_img, z_spatial, z_text).semantic_logits);
      const auto& t = targets[flip][idx];
      batch_targets.insert(batch_targets.end(), t.begin(), t.end());
    }
    Node loss = cross_entropy(concat(logits, 0), batch_targets);
    const double loss_value = loss.value().item();
    if (report) report->loss_trace.push_back(loss_value);
    g.backward(loss);
    sgd_step(params, opt);
  }
  return FrozenModel::freeze(cfg, std::move(weights));
}

}  // namespace ssp
