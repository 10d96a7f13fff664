#pragma once

#include <cstdint>
#include <vector>

#include "nres/tensor.hpp"

namespace nres {

// Singular values in descending order via one-sided Jacobi (Hestenes)
// rotations, computed in f64. Self-contained; accurate at the matrix sizes
// this project produces (hundreds of rows/columns at most).
std::vector<double> singular_values(const std::vector<double>& a, int64_t rows, int64_t cols);
std::vector<double> singular_values(const Tensor& a);

}  // namespace nres
