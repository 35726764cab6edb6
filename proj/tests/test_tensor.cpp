#include <cmath>
#include <limits>

#include <doctest.h>

#include "helpers.hpp"
#include "ssp/kernels.hpp"

using namespace ssp;

TEST_CASE("tensor construction and shape checks") {
  const Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  for (double v : t.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(Tensor({0, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor::vector({1.0, 2.0}).rows(), ShapeError);
  CHECK_THROWS_AS(Tensor({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
  CHECK_THROWS_AS(Tensor({1}, {std::numeric_limits<double>::infinity()}), NumericError);

  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  CHECK(m.at(2, 1) == 6.0);
  CHECK(m.reshaped({2, 3}).at(1, 0) == 4.0);
  CHECK_THROWS_AS(m.reshaped({4}), ShapeError);
  CHECK(m.row_slice(1, 3) == Tensor::matrix({{3, 4}, {5, 6}}));
  CHECK(Tensor::scalar(2.5).item() == 2.5);
  CHECK_THROWS(m.item());
}

TEST_CASE("check_finite names its context") {
  Tensor t({2});
  t[1] = std::numeric_limits<double>::infinity();
  try {
    t.check_finite("my-op");
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("my-op") != std::string::npos);
  }
}

TEST_CASE("memory accounting follows tensor lifetimes") {
  const std::int64_t before = TensorMemory::live_bytes();
  TensorMemory::reset_peak();
  {
    Tensor a({10, 10});
    CHECK(TensorMemory::live_bytes() - before == 800);
    Tensor b = a;
    CHECK(TensorMemory::live_bytes() - before == 1600);
    Tensor c = std::move(b);
    CHECK(TensorMemory::live_bytes() - before == 1600);
  }
  CHECK(TensorMemory::live_bytes() == before);
  CHECK(TensorMemory::peak_bytes() - before >= 1600);
}

TEST_CASE("serial and parallel matmul kernels agree bit for bit") {
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {7, 5, 3}, {64, 33, 65}, {128, 64, 96}}) {
    const Tensor a = test::random_tensor({std::size_t(m), std::size_t(k)}, 11 + m);
    const Tensor b = test::random_tensor({std::size_t(k), std::size_t(n)}, 12 + n);
    const Tensor bt = kernels::transpose(b);
    const Tensor at = kernels::transpose(a);
    CHECK(kernels::matmul_serial(a, b) == kernels::matmul_parallel(a, b));
    CHECK(kernels::matmul_nt_serial(a, bt) == kernels::matmul_nt_parallel(a, bt));
    CHECK(kernels::matmul_tn_serial(at, b) == kernels::matmul_tn_parallel(at, b));
    CHECK(kernels::matmul_nt_serial(a, bt) == kernels::matmul_serial(a, b));
    CHECK(kernels::matmul_tn_serial(at, b) == kernels::matmul_serial(a, b));
    CHECK(kernels::matmul(a, b) == kernels::matmul_serial(a, b));
  }
}

TEST_CASE("matmul kernel matches a direct triple loop") {
  const Tensor a = test::random_tensor({6, 4}, 1), b = test::random_tensor({4, 5}, 2);
  const Tensor c = kernels::matmul_serial(a, b);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < 4; ++p) s += a.at(i, p) * b.at(p, j);
      CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
  }
  CHECK_THROWS_AS(kernels::matmul_serial(a, a), ShapeError);
}

TEST_CASE("serial scope pins the thread cap to one") {
  const int before = kernels::max_threads();
  {
    const kernels::SerialScope scope;
    CHECK(kernels::max_threads() == 1);
  }
  CHECK(kernels::max_threads() == before);
}
