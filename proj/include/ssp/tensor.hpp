#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssp {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible. The message names the
/// operation and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or Inf would enter a Tensor.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Live-tensor byte accounting, per thread. The high-water mark is the
/// memory figure reported by the timing harness.
struct TensorMemory {
  static std::int64_t live_bytes();
  static std::int64_t peak_bytes();
  /// Sets the peak to the current live value.
  static void reset_peak();
};

namespace detail {
// Tracks bytes held by one Tensor; copies re-register, moves transfer.
class ByteTicket {
 public:
  ByteTicket() = default;
  explicit ByteTicket(std::int64_t bytes);
  ByteTicket(const ByteTicket& other);
  ByteTicket(ByteTicket&& other) noexcept;
  ByteTicket& operator=(const ByteTicket& other);
  ByteTicket& operator=(ByteTicket&& other) noexcept;
  ~ByteTicket();

 private:
  void release() noexcept;
  std::int64_t bytes_ = 0;
};
}  // namespace detail

/// Dense row-major array of doubles. Every extent is positive and every
/// element is finite when the tensor is built from data.
class Tensor {
 public:
  /// A 1-element tensor holding 0.
  Tensor();
  /// Zero-filled tensor.
  explicit Tensor(Shape shape);
  /// Takes ownership of `data`; rejects size mismatch and non-finite values.
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;
  /// Rows/cols of a rank-2 tensor; throws ShapeError otherwise.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const double* raw() const { return data_.data(); }
  double* raw() { return data_.data(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  /// Value of a 1-element tensor.
  double item() const;

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const;
  /// Copy of rows [begin, end) of a rank-2 tensor.
  Tensor row_slice(std::size_t begin, std::size_t end) const;

  void fill(double v);
  /// Throws NumericError naming `context` if any element is NaN/Inf.
  void check_finite(const std::string& context) const;

  /// Exact (bitwise on values) equality of shape and data.
  bool operator==(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  detail::ByteTicket ticket_;
};

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace ssp
