#include "ssp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

namespace ssp {

namespace {
thread_local std::int64_t t_live_bytes = 0;
thread_local std::int64_t t_peak_bytes = 0;
}  // namespace

std::int64_t TensorMemory::live_bytes() { return t_live_bytes; }
std::int64_t TensorMemory::peak_bytes() { return t_peak_bytes; }
void TensorMemory::reset_peak() { t_peak_bytes = t_live_bytes; }

namespace detail {

ByteTicket::ByteTicket(std::int64_t bytes) : bytes_(bytes) {
  t_live_bytes += bytes_;
  t_peak_bytes = std::max(t_peak_bytes, t_live_bytes);
}
ByteTicket::ByteTicket(const ByteTicket& other) : ByteTicket(other.bytes_) {}
ByteTicket::ByteTicket(ByteTicket&& other) noexcept : bytes_(other.bytes_) { other.bytes_ = 0; }
ByteTicket& ByteTicket::operator=(const ByteTicket& other) {
  if (this != &other) {
    release();
    bytes_ = other.bytes_;
    t_live_bytes += bytes_;
    t_peak_bytes = std::max(t_peak_bytes, t_live_bytes);
  }
  return *this;
}
ByteTicket& ByteTicket::operator=(ByteTicket&& other) noexcept {
  if (this != &other) {
    release();
    bytes_ = other.bytes_;
    other.bytes_ = 0;
  }
  return *this;
}
ByteTicket::~ByteTicket() { release(); }
// A ticket moved across threads releases into the destroying thread's
// counter; timing runs are single-threaded so the figure stays exact there.
void ByteTicket::release() noexcept {
  t_live_bytes -= bytes_;
  bytes_ = 0;
}

}  // namespace detail

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

static void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor: empty shape");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
  }
}

Tensor::Tensor() : Tensor(Shape{1}) {}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), 0.0);
  ticket_ = detail::ByteTicket(static_cast<std::int64_t>(data_.size() * sizeof(double)));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError(fmt::format("tensor: {} elements do not fill shape {}", data_.size(), shape_str(shape_)));
  }
  check_finite("tensor construction");
  ticket_ = detail::ByteTicket(static_cast<std::int64_t>(data_.size() * sizeof(double)));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  t.check_finite("Tensor::full");
  return t;
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Tensor::matrix: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError(fmt::format("dim: axis {} out of range for {}", axis, shape_str(shape_)));
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows: expected rank-2 tensor, got " + shape_str(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols: expected rank-2 tensor, got " + shape_str(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor is not a scalar " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("reshape: " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::row_slice(std::size_t begin, std::size_t end) const {
  const std::size_t c = cols();
  if (begin >= end || end > rows()) throw ShapeError("row_slice: bad range for " + shape_str(shape_));
  return Tensor({end - begin, c}, std::vector<double>(data_.begin() + begin * c, data_.begin() + end * c));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::check_finite(const std::string& context) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError(fmt::format("{}: non-finite value at flat index {} of {}", context, i, shape_str(shape_)));
    }
  }
}

bool Tensor::operator==(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace ssp
