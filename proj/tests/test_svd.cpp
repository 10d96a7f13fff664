#include <doctest.h>

#include <cmath>
#include <vector>

#include "nres/rng.hpp"
#include "nres/svd.hpp"
#include "nres/tensor.hpp"
#include "ref_linalg.hpp"
#include "test_util.hpp"

using nres::singular_values;
using testutil::rel_err;

TEST_SUITE("svd") {

TEST_CASE("identity and diagonal matrices") {
  std::vector<double> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::vector<double> sv = singular_values(eye, 3, 3);
  REQUIRE(sv.size() == 3);
  for (double s : sv) CHECK(rel_err(s, 1.0) < 1e-12);

  std::vector<double> diag = {4, 0, 0, 0, 2, 0, 0, 0, 0};
  sv = singular_values(diag, 3, 3);
  CHECK(rel_err(sv[0], 4.0) < 1e-12);
  CHECK(rel_err(sv[1], 2.0) < 1e-12);
  CHECK(std::fabs(sv[2]) < 1e-12);
}

TEST_CASE("values are non-negative and descending") {
  nres::Rng rng(21);
  std::vector<double> a(15 * 7);
  for (double& v : a) v = rng.normal();
  std::vector<double> sv = singular_values(a, 15, 7);
  REQUIRE(sv.size() == 7);
  for (size_t i = 0; i < sv.size(); ++i) {
    CHECK(sv[i] >= 0.0);
    if (i) CHECK(sv[i] <= sv[i - 1]);
  }
}

TEST_CASE("rank-1 outer product has one nonzero singular value") {
  // u v^T with |u| = 5, |v| = sqrt(2): top value 5*sqrt(2), rest 0.
  std::vector<double> u = {3, 4};
  std::vector<double> v = {1, 1};
  std::vector<double> a(4);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) a[static_cast<size_t>(i * 2 + j)] = u[static_cast<size_t>(i)] * v[static_cast<size_t>(j)];
  }
  std::vector<double> sv = singular_values(a, 2, 2);
  CHECK(rel_err(sv[0], 5.0 * std::sqrt(2.0)) < 1e-10);
  CHECK(std::fabs(sv[1]) < 1e-10);
}

TEST_CASE("agrees with sqrt-eigenvalues of W^T W on 100 random matrices") {
  nres::Rng rng(33);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    int64_t rows = 1 + rng.uniform_int(32);
    int64_t cols = 1 + rng.uniform_int(32);
    std::vector<double> a(static_cast<size_t>(rows * cols));
    for (double& v : a) v = rng.normal();

    std::vector<double> mine = singular_values(a, rows, cols);
    std::vector<double> oracle = reflinalg::singular_values_via_gram(a, rows, cols);
    REQUIRE(mine.size() == oracle.size());
    for (size_t i = 0; i < mine.size(); ++i) {
      // Relative to the top value so tiny trailing values compare on the
      // matrix's own scale.
      double denom = std::max(oracle[0], 1e-12);
      worst = std::max(worst, std::fabs(mine[i] - oracle[i]) / denom);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("tensor overload matches the flat overload") {
  nres::Rng rng(4);
  nres::Tensor t({6, 9});
  std::vector<double> flat(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) {
    double v = rng.normal();
    t.at(i) = static_cast<float>(v);
    flat[static_cast<size_t>(i)] = static_cast<double>(t.at(i));
  }
  std::vector<double> a = singular_values(t);
  std::vector<double> b = singular_values(flat, 6, 9);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

}  // TEST_SUITE
