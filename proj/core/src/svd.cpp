#include "nres/svd.hpp"

#include <algorithm>
#include <cmath>

#include "nres/errors.hpp"

namespace nres {

namespace {

// One sweep orthogonalizes every column pair; returns the largest rotation
// measure |c| / sqrt(a*b) encountered.
double jacobi_sweep(std::vector<double>& u, int64_t m, int64_t n) {
  double worst = 0.0;
  for (int64_t i = 0; i < n - 1; ++i) {
    for (int64_t j = i + 1; j < n; ++j) {
      double aii = 0.0, ajj = 0.0, aij = 0.0;
      for (int64_t r = 0; r < m; ++r) {
        double ui = u[static_cast<size_t>(r * n + i)];
        double uj = u[static_cast<size_t>(r * n + j)];
        aii += ui * ui;
        ajj += uj * uj;
        aij += ui * uj;
      }
      if (aii == 0.0 || ajj == 0.0 || aij == 0.0) continue;
      double ortho = std::abs(aij) / std::sqrt(aii * ajj);
      worst = std::max(worst, ortho);
      if (ortho < 1e-15) continue;
      // Rotation angle that zeroes the (i,j) inner product.
      double zeta = (ajj - aii) / (2.0 * aij);
      double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
      double c = 1.0 / std::sqrt(1.0 + t * t);
      double s = c * t;
      for (int64_t r = 0; r < m; ++r) {
        double ui = u[static_cast<size_t>(r * n + i)];
        double uj = u[static_cast<size_t>(r * n + j)];
        u[static_cast<size_t>(r * n + i)] = c * ui - s * uj;
        u[static_cast<size_t>(r * n + j)] = s * ui + c * uj;
      }
    }
  }
  return worst;
}

}  // namespace

std::vector<double> singular_values(const std::vector<double>& a, int64_t rows, int64_t cols) {
  if (rows <= 0 || cols <= 0 || static_cast<int64_t>(a.size()) != rows * cols) {
    throw DimensionError("singular_values: data size " + std::to_string(a.size()) +
                         " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  // Work on the orientation with fewer columns; singular values are shared.
  int64_t m = rows, n = cols;
  std::vector<double> u;
  if (cols <= rows) {
    u = a;
  } else {
    m = cols;
    n = rows;
    u.resize(a.size());
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t c = 0; c < cols; ++c) {
        u[static_cast<size_t>(c * n + r)] = a[static_cast<size_t>(r * cols + c)];
      }
    }
  }
  constexpr int kMaxSweeps = 60;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    if (jacobi_sweep(u, m, n) < 1e-14) break;
  }
  std::vector<double> sv(static_cast<size_t>(n));
  for (int64_t j = 0; j < n; ++j) {
    double norm2 = 0.0;
    for (int64_t r = 0; r < m; ++r) {
      double v = u[static_cast<size_t>(r * n + j)];
      norm2 += v * v;
    }
    sv[static_cast<size_t>(j)] = std::sqrt(norm2);
  }
  std::sort(sv.begin(), sv.end(), std::greater<double>());
  return sv;
}

std::vector<double> singular_values(const Tensor& a) {
  if (a.ndim() != 2) {
    throw DimensionError("singular_values: expected a rank-2 tensor, got " + a.shape_str());
  }
  std::vector<double> buf(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) buf[static_cast<size_t>(i)] = a.data()[i];
  return singular_values(buf, a.dim(0), a.dim(1));
}

}  // namespace nres
