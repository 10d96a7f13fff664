#include <doctest.h>

#include <cmath>
#include <limits>

#include "nres/errors.hpp"
#include "nres/tensor.hpp"

using nres::Tensor;

TEST_SUITE("tensor") {

TEST_CASE("shape bookkeeping: numel is the product of extents") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.ndim() == 3);
  CHECK(t.dim(0) == 2);
  CHECK(t.dim(2) == 4);
  // Trailing-axis matrix view.
  CHECK(t.rows() == 6);
  CHECK(t.cols() == 4);
  CHECK(t.shape_str() == "[2, 3, 4]");
}

TEST_CASE("construction rejects bad shapes and mismatched data") {
  CHECK_THROWS_AS(Tensor(std::vector<int64_t>{}), nres::DimensionError);
  CHECK_THROWS_AS(Tensor({2, 0}), nres::DimensionError);
  CHECK_THROWS_AS(Tensor({-1}), nres::DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), nres::DimensionError);
}

TEST_CASE("zeros, full, scalar, fill") {
  Tensor z = Tensor::zeros({3, 2});
  for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.at(i) == 0.0f);

  Tensor f = Tensor::full({2, 2}, 1.5f);
  for (int64_t i = 0; i < f.numel(); ++i) CHECK(f.at(i) == 1.5f);

  Tensor s = Tensor::scalar(-2.0f);
  CHECK(s.numel() == 1);
  CHECK(s.at(0) == -2.0f);

  f.fill(0.25f);
  CHECK(f.at(1, 1) == 0.25f);
}

TEST_CASE("element access is bounds-checked") {
  Tensor t({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  CHECK(t.at(1, 0) == 3.0f);
  CHECK(t.at(3) == 4.0f);
  CHECK_THROWS_AS(t.at(4), nres::IndexError);
  CHECK_THROWS_AS(t.at(2, 0), nres::IndexError);
  CHECK_THROWS_AS(t.at(0, 2), nres::IndexError);
  t.at(0, 1) = 9.0f;
  CHECK(t.at(1) == 9.0f);
}

TEST_CASE("row-major layout: at(r, c) matches flat order") {
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  for (int64_t r = 0; r < 2; ++r) {
    for (int64_t c = 0; c < 3; ++c) {
      CHECK(t.at(r, c) == static_cast<float>(r * 3 + c));
    }
  }
}

TEST_CASE("same_shape and all_finite") {
  Tensor a({2, 2});
  Tensor b({2, 2});
  Tensor c({4});
  CHECK(a.same_shape(b));
  CHECK(!a.same_shape(c));

  CHECK(a.all_finite());
  a.at(2) = std::numeric_limits<float>::quiet_NaN();
  CHECK(!a.all_finite());
  b.at(0) = std::numeric_limits<float>::infinity();
  CHECK(!b.all_finite());
}

}  // TEST_SUITE
