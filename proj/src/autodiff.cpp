#include "ssp/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ssp/kernels.hpp"

namespace ssp {

Variable::Variable(std::string name_, Tensor value_, bool trainable_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), trainable(trainable_) {}

void Variable::zero_grad() { grad.fill(0.0); }

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::affine: return "affine";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::relu: return "relu";
    case OpKind::sin: return "sin";
    case OpKind::cos: return "cos";
    case OpKind::reciprocal: return "reciprocal";
    case OpKind::softmax: return "softmax";
    case OpKind::mean: return "mean";
    case OpKind::concat: return "concat";
    case OpKind::row_scale: return "row_scale";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::cross_entropy: return "cross_entropy";
  }
  return "?";
}

Graph& Node::graph() const {
  if (!graph_) throw std::logic_error("Node: unbound handle");
  return *graph_;
}
const Tensor& Node::value() const { return graph().value(id_); }
bool Node::requires_grad() const { return graph().requires_grad(id_); }

// ---- Graph

Node Graph::constant(Tensor value) {
  Record r;
  r.kind = OpKind::constant;
  r.owned = std::move(value);
  nodes_.push_back(std::move(r));
  return Node(this, static_cast<int>(nodes_.size() - 1));
}

Node Graph::constant_ref(const Tensor& value) {
  Record r;
  r.kind = OpKind::constant;
  r.borrowed = &value;
  nodes_.push_back(std::move(r));
  return Node(this, static_cast<int>(nodes_.size() - 1));
}

Node Graph::param(Variable& var) {
  Record r;
  r.kind = OpKind::parameter;
  r.borrowed = &var.value;
  if (var.trainable) {
    r.variable = &var;
    r.requires_grad = true;
  }
  nodes_.push_back(std::move(r));
  return Node(this, static_cast<int>(nodes_.size() - 1));
}

Node Graph::frozen(const Variable& var) {
  Record r;
  r.kind = OpKind::parameter;
  r.borrowed = &var.value;
  nodes_.push_back(std::move(r));
  return Node(this, static_cast<int>(nodes_.size() - 1));
}

Node Graph::record(OpKind kind, Tensor value, std::vector<int> inputs, Backprop backprop) {
  value.check_finite(op_name(kind));
  Record r;
  r.kind = kind;
  r.owned = std::move(value);
  for (int in : inputs) {
    if (in < 0 || static_cast<std::size_t>(in) >= nodes_.size()) {
      throw std::logic_error(fmt::format("Graph::record: {} input {} is not on this tape", op_name(kind), in));
    }
    r.requires_grad = r.requires_grad || nodes_[static_cast<std::size_t>(in)].requires_grad;
  }
  r.inputs = std::move(inputs);
  if (r.requires_grad) r.backprop = std::move(backprop);
  nodes_.push_back(std::move(r));
  return Node(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Graph::value(int id) const {
  const Record& r = nodes_.at(static_cast<std::size_t>(id));
  return r.owned ? *r.owned : *r.borrowed;
}

Tensor& Graph::grad(int id) {
  Record& r = nodes_.at(static_cast<std::size_t>(id));
  if (!r.grad) r.grad.emplace(value(id).shape());
  return *r.grad;
}

void Graph::backward(Node root) {
  if (&root.graph() != this) throw std::invalid_argument("backward: root belongs to another graph");
  if (nodes_.empty()) throw std::invalid_argument("backward: empty graph");
  if (root.value().numel() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape()));
  }
  const int root_id = root.id();
  if (nodes_[static_cast<std::size_t>(root_id)].requires_grad) {
    grad(root_id)[0] = 1.0;
    for (int id = root_id; id >= 0; --id) {
      Record& r = nodes_[static_cast<std::size_t>(id)];
      if (!r.requires_grad || !r.grad) continue;
      if (r.variable) {
        Tensor& g = r.variable->grad;
        const Tensor& src = *r.grad;
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += src[i];
      } else if (r.backprop) {
        r.backprop(*this, id);
      }
    }
  }
  clear();
}

void Graph::clear() { nodes_.clear(); }

// ---- helpers

namespace {

Graph& same_graph(Node a, Node b, const char* op) {
  if (&a.graph() != &b.graph()) throw std::invalid_argument(fmt::format("{}: operands on different graphs", op));
  return a.graph();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a.shape()), shape_str(b.shape())));
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename F>
Node unary(Node a, OpKind kind, F forward, std::function<double(double x, double y)> local_grad) {
  Graph& g = a.graph();
  Tensor out = map(a.value(), forward);
  const int ia = a.id();
  return g.record(kind, std::move(out), {ia}, [ia, local_grad](Graph& gr, int self) {
    if (!gr.requires_grad(ia)) return;
    const Tensor& x = gr.value(ia);
    const Tensor& y = gr.value(self);
    const Tensor& dy = gr.grad(self);
    Tensor& dx = gr.grad(ia);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i] * local_grad(x[i], y[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_axis(const Tensor& a, int axis, const char* op) {
  if (a.rank() > 2 || axis < 0 || static_cast<std::size_t>(axis) >= a.rank()) {
    throw ShapeError(fmt::format("{}: axis {} invalid for shape {}", op, axis, shape_str(a.shape())));
  }
}

// View any rank-1/2 tensor as (outer, len, stride) lanes along `axis`.
struct Lanes {
  std::size_t count, len, stride;
  std::size_t base(std::size_t lane) const { return stride == 1 ? lane * len : lane; }
};
Lanes lanes_of(const Tensor& a, int axis) {
  if (a.rank() == 1) return {1, a.numel(), 1};
  const std::size_t r = a.dim(0), c = a.dim(1);
  return axis == 1 ? Lanes{r, c, 1} : Lanes{c, r, c};
}

}  // namespace

// ---- forward ops

Node matmul(Node a, Node b) {
  Graph& g = same_graph(a, b, "matmul");
  Tensor out = kernels::matmul(a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  return g.record(OpKind::matmul, std::move(out), {ia, ib}, [ia, ib](Graph& gr, int self) {
    const Tensor& dy = gr.grad(self);
    if (gr.requires_grad(ia)) accumulate(gr.grad(ia), kernels::matmul_nt(dy, gr.value(ib)));
    if (gr.requires_grad(ib)) accumulate(gr.grad(ib), kernels::matmul_tn(gr.value(ia), dy));
  });
}

Node transpose(Node a) {
  Graph& g = a.graph();
  Tensor out = kernels::transpose(a.value());
  const int ia = a.id();
  return g.record(OpKind::transpose, std::move(out), {ia}, [ia](Graph& gr, int self) {
    if (gr.requires_grad(ia)) accumulate(gr.grad(ia), kernels::transpose(gr.grad(self)));
  });
}

Node add(Node a, Node b) {
  Graph& g = same_graph(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  const int ia = a.id(), ib = b.id();
  return g.record(OpKind::add, std::move(out), {ia, ib}, [ia, ib](Graph& gr, int self) {
    const Tensor& dy = gr.grad(self);
    if (gr.requires_grad(ia)) accumulate(gr.grad(ia), dy);
    if (gr.requires_grad(ib)) accumulate(gr.grad(ib), dy);
  });
}

Node sub(Node a, Node b) {
  Graph& g = same_graph(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  const int ia = a.id(), ib = b.id();
  return g.record(OpKind::sub, std::move(out), {ia, ib}, [ia, ib](Graph& gr, int self) {
    const Tensor& dy = gr.grad(self);
    if (gr.requires_grad(ia)) accumulate(gr.grad(ia), dy);
    if (gr.requires_grad(ib)) {
      Tensor& db = gr.grad(ib);
      for (std::size_t i = 0; i < db.numel(); ++i) db[i] -= dy[i];
    }
  });
}

Node mul(Node a, Node b) {
  Graph& g = same_graph(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  const int ia = a.id(), ib = b.id();
  return g.record(OpKind::mul, std::move(out), {ia, ib}, [ia, ib](Graph& gr, int self) {
    const Tensor& dy = gr.grad(self);
    if (gr.requires_grad(ia)) {
      Tensor& da = gr.grad(ia);
      const Tensor& bv = gr.value(ib);
      for (std::size_t i = 0; i < da.numel(); ++i) da[i] += dy[i] * bv[i];
    }
    if (gr.requires_grad(ib)) {
      Tensor& db = gr.grad(ib);
      const Tensor& av = gr.value(ia);
      for (std::size_t i = 0; i < db.numel(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

Node scale(Node a, double s) { return affine(a, s, 0.0); }

Node affine(Node a, double s, double b) {
  Graph& g = a.graph();
  Tensor out = map(a.value(), [s, b](double x) { return s * x + b; });
  const int ia = a.id();
  const OpKind kind = b == 0.0 ? OpKind::scale : OpKind::affine;
  return g.record(kind, std::move(out), {ia}, [ia, s](Graph& gr, int self) {
    if (!gr.requires_grad(ia)) return;
    const Tensor& dy = gr.grad(self);
    Tensor& da = gr.grad(ia);
    for (std::size_t i = 0; i < da.numel(); ++i) da[i] += s * dy[i];
  });
}

Node sigmoid(Node a) {
  return unary(a, OpKind::sigmoid, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Node relu(Node a) {
  return unary(a, OpKind::relu, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Node sin(Node a) {
  return unary(a, OpKind::sin, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Node cos(Node a) {
  return unary(a, OpKind::cos, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Node reciprocal(Node a) {
  for (double v : a.value().data()) {
    if (v == 0.0) throw NumericError("reciprocal: division by zero");
  }
  return unary(a, OpKind::reciprocal, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Tensor sigmoid(const Tensor& a) { return map(a, stable_sigmoid); }

Tensor softmax(const Tensor& a, int axis) {
  check_axis(a, axis, "softmax");
  Tensor out(a.shape());
  const Lanes L = lanes_of(a, axis);
  for (std::size_t lane = 0; lane < L.count; ++lane) {
    const std::size_t base = L.base(lane);
    double mx = a[base];
    for (std::size_t k = 1; k < L.len; ++k) mx = std::max(mx, a[base + k * L.stride]);
    double z = 0.0;
    for (std::size_t k = 0; k < L.len; ++k) {
      const double e = std::exp(a[base + k * L.stride] - mx);
      out[base + k * L.stride] = e;
      z += e;
    }
    for (std::size_t k = 0; k < L.len; ++k) out[base + k * L.stride] /= z;
  }
  return out;
}

Node softmax(Node a, int axis) {
  Graph& g = a.graph();
  Tensor out = softmax(a.value(), axis);
  const int ia = a.id();
  return g.record(OpKind::softmax, std::move(out), {ia}, [ia, axis](Graph& gr, int self) {
    if (!gr.requires_grad(ia)) return;
    const Tensor& y = gr.value(self);
    const Tensor& dy = gr.grad(self);
    Tensor& dx = gr.grad(ia);
    const Lanes L = lanes_of(y, axis);
    for (std::size_t lane = 0; lane < L.count; ++lane) {
      const std::size_t base = L.base(lane);
      double dot = 0.0;
      for (std::size_t k = 0; k < L.len; ++k) dot += dy[base + k * L.stride] * y[base + k * L.stride];
      for (std::size_t k = 0; k < L.len; ++k) {
        const std::size_t i = base + k * L.stride;
        dx[i] += y[i] * (dy[i] - dot);
      }
    }
  });
}

Node mean(Node a) {
  Graph& g = a.graph();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const double n = static_cast<double>(a.value().numel());
  const int ia = a.id();
  return g.record(OpKind::mean, Tensor::scalar(s / n), {ia}, [ia, n](Graph& gr, int self) {
    if (!gr.requires_grad(ia)) return;
    const double d = gr.grad(self)[0] / n;
    Tensor& dx = gr.grad(ia);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += d;
  });
}

Node concat(std::span<const Node> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError(fmt::format("concat: axis {} unsupported", axis));
  Graph& g = parts[0].graph();
  const Tensor& first = parts[0].value();
  if (first.rank() != 2) throw ShapeError("concat: expected rank-2 inputs, got " + shape_str(first.shape()));
  std::size_t total = 0;
  std::vector<int> ids;
  for (const Node& p : parts) {
    same_graph(parts[0], p, "concat");
    const Tensor& v = p.value();
    const bool ok = v.rank() == 2 && (axis == 0 ? v.dim(1) == first.dim(1) : v.dim(0) == first.dim(0));
    if (!ok) {
      throw ShapeError(fmt::format("concat: shape mismatch {} vs {} on axis {}", shape_str(first.shape()),
                                   shape_str(v.shape()), axis));
    }
    total += v.dim(static_cast<std::size_t>(axis));
    ids.push_back(p.id());
  }
  const std::size_t rows = axis == 0 ? total : first.dim(0);
  const std::size_t cols = axis == 0 ? first.dim(1) : total;
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (const Node& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < v.dim(0); ++r)
      for (std::size_t c = 0; c < v.dim(1); ++c) {
        if (axis == 0) out.at(offset + r, c) = v.at(r, c);
        else out.at(r, offset + c) = v.at(r, c);
      }
    offset += v.dim(static_cast<std::size_t>(axis));
  }
  return g.record(OpKind::concat, std::move(out), ids, [ids, axis](Graph& gr, int self) {
    const Tensor& dy = gr.grad(self);
    std::size_t off = 0;
    for (int id : ids) {
      const Tensor& v = gr.value(id);
      if (gr.requires_grad(id)) {
        Tensor& dx = gr.grad(id);
        for (std::size_t r = 0; r < v.dim(0); ++r)
          for (std::size_t c = 0; c < v.dim(1); ++c) dx.at(r, c) += axis == 0 ? dy.at(off + r, c) : dy.at(r, off + c);
      }
      off += v.dim(static_cast<std::size_t>(axis));
    }
  });
}

Node row_scale(Node a, Node s) {
  Graph& g = same_graph(a, s, "row_scale");
  const Tensor& av = a.value();
  const Tensor& sv = s.value();
  if (av.rank() != 2 || sv.numel() != av.dim(0)) {
    throw ShapeError(fmt::format("row_scale: shape mismatch {} vs {}", shape_str(av.shape()), shape_str(sv.shape())));
  }
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = av.at(r, c) * sv[r];
  const int ia = a.id(), is = s.id();
  return g.record(OpKind::row_scale, std::move(out), {ia, is}, [ia, is, rows, cols](Graph& gr, int self) {
    const Tensor& dy = gr.grad(self);
    if (gr.requires_grad(ia)) {
      const Tensor& sv2 = gr.value(is);
      Tensor& da = gr.grad(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) da.at(r, c) += dy.at(r, c) * sv2[r];
    }
    if (gr.requires_grad(is)) {
      const Tensor& av2 = gr.value(ia);
      Tensor& ds = gr.grad(is);
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += dy.at(r, c) * av2.at(r, c);
        ds[r] += acc;
      }
    }
  });
}

Node gather_rows(Node table, std::span<const int> ids) {
  Graph& g = table.graph();
  const Tensor& t = table.value();
  if (t.rank() != 2) throw ShapeError("gather_rows: expected rank-2 table, got " + shape_str(t.shape()));
  if (ids.empty()) throw std::invalid_argument("gather_rows: empty id list");
  const std::size_t cols = t.dim(1);
  Tensor out({ids.size(), cols});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= t.dim(0)) {
      throw std::out_of_range(fmt::format("gather_rows: id {} outside table of {} rows", ids[r], t.dim(0)));
    }
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = t.at(static_cast<std::size_t>(ids[r]), c);
  }
  const int it = table.id();
  std::vector<int> idv(ids.begin(), ids.end());
  return g.record(OpKind::gather_rows, std::move(out), {it}, [it, idv, cols](Graph& gr, int self) {
    if (!gr.requires_grad(it)) return;
    const Tensor& dy = gr.grad(self);
    Tensor& dt = gr.grad(it);
    for (std::size_t r = 0; r < idv.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) dt.at(static_cast<std::size_t>(idv[r]), c) += dy.at(r, c);
  });
}

namespace {

struct CrossEntropyTerms {
  double loss = 0.0;
  std::size_t counted = 0;
};

CrossEntropyTerms cross_entropy_terms(const Tensor& logits, std::span<const int> targets,
                                      std::optional<int> ignore_index, Tensor* probs) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError(fmt::format("cross_entropy: shape mismatch {} vs {} targets", shape_str(logits.shape()),
                                 targets.size()));
  }
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  CrossEntropyTerms terms;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (ignore_index && t == *ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw std::out_of_range(fmt::format("cross_entropy: target {} outside [0, {}) at row {}", t, k, r));
    }
    double mx = logits.at(r, 0);
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(logits.at(r, c) - mx);
    const double lse = mx + std::log(z);
    terms.loss += lse - logits.at(r, static_cast<std::size_t>(t));
    if (probs) {
      for (std::size_t c = 0; c < k; ++c) probs->at(r, c) = std::exp(logits.at(r, c) - lse);
    }
    ++terms.counted;
  }
  if (terms.counted == 0) throw std::invalid_argument("cross_entropy: every position is ignored");
  terms.loss /= static_cast<double>(terms.counted);
  return terms;
}

}  // namespace

double cross_entropy(const Tensor& logits, std::span<const int> targets, std::optional<int> ignore_index) {
  return cross_entropy_terms(logits, targets, ignore_index, nullptr).loss;
}

Node cross_entropy(Node logits, std::span<const int> targets, std::optional<int> ignore_index) {
  Graph& g = logits.graph();
  Tensor probs(logits.shape());
  const CrossEntropyTerms terms = cross_entropy_terms(logits.value(), targets, ignore_index, &probs);
  const int il = logits.id();
  std::vector<int> tv(targets.begin(), targets.end());
  const double n = static_cast<double>(terms.counted);
  return g.record(OpKind::cross_entropy, Tensor::scalar(terms.loss), {il},
                  [il, tv, ignore_index, n, probs = std::move(probs)](Graph& gr, int self) {
                    if (!gr.requires_grad(il)) return;
                    const double d = gr.grad(self)[0] / n;
                    Tensor& dx = gr.grad(il);
                    const std::size_t k = dx.dim(1);
                    for (std::size_t r = 0; r < tv.size(); ++r) {
                      if (ignore_index && tv[r] == *ignore_index) continue;
                      for (std::size_t c = 0; c < k; ++c) {
                        const double onehot = static_cast<std::size_t>(tv[r]) == c ? 1.0 : 0.0;
                        dx.at(r, c) += d * (probs.at(r, c) - onehot);
                      }
                    }
                  });
}

}  // namespace ssp
