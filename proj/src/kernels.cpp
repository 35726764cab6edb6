#include "ssp/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#ifdef SSP_HAVE_OPENMP
#include <omp.h>
#endif

namespace ssp::kernels {

namespace {

std::atomic<std::size_t> g_threshold{1u << 18};

void check_nn(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
}
void check_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
}
void check_tn(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: shape mismatch " + shape_str(a.shape()) + "^T x " + shape_str(b.shape()));
  }
}

// Row kernels shared by both variants so the accumulation order is identical.
inline void nn_row(const double* a, const double* b, double* c, std::size_t k, std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p];
    const double* brow = b + p * m;
    for (std::size_t j = 0; j < m; ++j) c[j] += av * brow[j];
  }
}
inline void nt_row(const double* a, const double* b, double* c, std::size_t k, std::size_t m) {
  for (std::size_t j = 0; j < m; ++j) {
    const double* brow = b + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += a[p] * brow[p];
    c[j] = s;
  }
}
// Row i of A^T B: sum over p of A[p,i] * B[p,:].
inline void tn_row(const double* a, const double* b, double* c, std::size_t i, std::size_t n_rows,
                   std::size_t a_cols, std::size_t m) {
  for (std::size_t p = 0; p < n_rows; ++p) {
    const double av = a[p * a_cols + i];
    const double* brow = b + p * m;
    for (std::size_t j = 0; j < m; ++j) c[j] += av * brow[j];
  }
}

bool use_parallel(std::size_t flops) { return flops >= g_threshold.load() && max_threads() > 1; }

}  // namespace

int max_threads() {
  int n = 1;
#ifdef SSP_HAVE_OPENMP
  n = omp_get_max_threads();
#endif
  if (const char* env = std::getenv("SSPROMPT_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1 && cap < n) n = cap;
    } catch (const std::exception&) {
      // Unparseable value: keep the OpenMP default.
    }
  }
  return n < 1 ? 1 : n;
}

SerialScope::SerialScope() {
#ifdef SSP_HAVE_OPENMP
  saved_ = omp_get_max_threads();
  omp_set_num_threads(1);
#endif
}

SerialScope::~SerialScope() {
#ifdef SSP_HAVE_OPENMP
  omp_set_num_threads(saved_);
#endif
}

std::size_t parallel_threshold() { return g_threshold.load(); }
void set_parallel_threshold(std::size_t flops) { g_threshold.store(flops); }

Tensor matmul_serial(const Tensor& a, const Tensor& b) {
  check_nn(a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor c({n, m});
  for (std::size_t i = 0; i < n; ++i) nn_row(a.raw() + i * k, b.raw(), c.raw() + i * m, k, m);
  return c;
}

Tensor matmul_parallel(const Tensor& a, const Tensor& b) {
  check_nn(a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor c({n, m});
  const double* ap = a.raw();
  const double* bp = b.raw();
  double* cp = c.raw();
  const long long rows = static_cast<long long>(n);
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (long long i = 0; i < rows; ++i) nn_row(ap + i * k, bp, cp + i * m, k, m);
  return c;
}

Tensor matmul_nt_serial(const Tensor& a, const Tensor& b) {
  check_nt(a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor c({n, m});
  for (std::size_t i = 0; i < n; ++i) nt_row(a.raw() + i * k, b.raw(), c.raw() + i * m, k, m);
  return c;
}

Tensor matmul_nt_parallel(const Tensor& a, const Tensor& b) {
  check_nt(a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor c({n, m});
  const double* ap = a.raw();
  const double* bp = b.raw();
  double* cp = c.raw();
  const long long rows = static_cast<long long>(n);
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (long long i = 0; i < rows; ++i) nt_row(ap + i * k, bp, cp + i * m, k, m);
  return c;
}

Tensor matmul_tn_serial(const Tensor& a, const Tensor& b) {
  check_tn(a, b);
  const std::size_t n = a.cols(), r = a.rows(), m = b.cols();
  Tensor c({n, m});
  for (std::size_t i = 0; i < n; ++i) tn_row(a.raw(), b.raw(), c.raw() + i * m, i, r, n, m);
  return c;
}

Tensor matmul_tn_parallel(const Tensor& a, const Tensor& b) {
  check_tn(a, b);
  const std::size_t n = a.cols(), r = a.rows(), m = b.cols();
  Tensor c({n, m});
  const double* ap = a.raw();
  const double* bp = b.raw();
  double* cp = c.raw();
  const long long cols = static_cast<long long>(n);
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (long long i = 0; i < cols; ++i) tn_row(ap, bp, cp + i * m, static_cast<std::size_t>(i), r, n, m);
  return c;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_nn(a, b);
  return use_parallel(a.rows() * a.cols() * b.cols()) ? matmul_parallel(a, b) : matmul_serial(a, b);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_nt(a, b);
  return use_parallel(a.rows() * a.cols() * b.rows()) ? matmul_nt_parallel(a, b) : matmul_nt_serial(a, b);
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  check_tn(a, b);
  return use_parallel(a.rows() * a.cols() * b.cols()) ? matmul_tn_parallel(a, b) : matmul_tn_serial(a, b);
}

Tensor transpose(const Tensor& a) {
  const std::size_t n = a.rows(), m = a.cols();
  Tensor t({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

}  // namespace ssp::kernels
