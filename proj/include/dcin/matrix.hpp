#pragma once

#include <cstddef>
#include <vector>

namespace dcin {

// Plain dense matrix for non-differentiated numerics (counts-derived
// adjacency, raw features). Differentiable math lives in Tensor.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

}  // namespace dcin
