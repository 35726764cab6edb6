#pragma once

#include "ssp/tensor.hpp"

namespace ssp::kernels {

// Dense matrix products. The serial loops are the reference; the OpenMP
// variants split output rows across threads and accumulate each element in
// the same order, so both produce bit-identical results.

/// C = A * B
Tensor matmul_serial(const Tensor& a, const Tensor& b);
Tensor matmul_parallel(const Tensor& a, const Tensor& b);
/// C = A * B^T
Tensor matmul_nt_serial(const Tensor& a, const Tensor& b);
Tensor matmul_nt_parallel(const Tensor& a, const Tensor& b);
/// C = A^T * B
Tensor matmul_tn_serial(const Tensor& a, const Tensor& b);
Tensor matmul_tn_parallel(const Tensor& a, const Tensor& b);

/// Dispatches to the parallel kernel when the product has at least
/// parallel_threshold() multiply-adds and more than one thread is allowed.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

std::size_t parallel_threshold();
void set_parallel_threshold(std::size_t flops);

/// Thread cap for data-parallel loops: SSPROMPT_THREADS if set, else the
/// OpenMP default. Always >= 1.
int max_threads();

/// Restricts the calling thread to serial kernels until destroyed.
class SerialScope {
 public:
  SerialScope();
  ~SerialScope();
  SerialScope(const SerialScope&) = delete;
  SerialScope& operator=(const SerialScope&) = delete;

 private:
  int saved_ = 1;
};

}  // namespace ssp::kernels
