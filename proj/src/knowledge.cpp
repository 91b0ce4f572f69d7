#include "dcin/knowledge.hpp"

#include <algorithm>
#include <cmath>

#include "dcin/errors.hpp"

namespace dcin::knowledge {

Matrix normalize_adjacency(const Matrix& e,
                           std::vector<std::string>* warnings) {
  if (e.rows != e.cols) {
    throw DimensionError("normalize_adjacency: matrix is " +
                         std::to_string(e.rows) + "x" +
                         std::to_string(e.cols) + ", expected square");
  }
  const std::size_t n = e.rows;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (e.at(i, j) < 0.0) {
        throw ValidationError("normalize_adjacency: negative entry at (" +
                              std::to_string(i) + "," + std::to_string(j) +
                              ")");
      }
    }
  }

  Matrix sym(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      sym.at(i, j) = (e.at(i, j) + e.at(j, i)) / 2.0;
    }
  }
  // Degrees accumulate in value order so a concept permutation cannot
  // reassociate the sum; row permutation then maps degrees exactly.
  std::vector<double> degree(n, 0.0);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[j] = sym.at(i, j);
    std::sort(row.begin(), row.end());
    double acc = 0.0;
    for (double v : row) acc += v;
    degree[i] = acc;
  }
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (degree[i] == 0.0) {
      if (warnings) {
        warnings->push_back("isolated concept row " + std::to_string(i) +
                            ": zero degree, normalized row/col zeroed");
      }
    } else {
      inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);
    }
  }
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.at(i, j) = sym.at(i, j) * inv_sqrt[i] * inv_sqrt[j];
    }
  }
  return out;
}

Tensor gcn_forward(Tape& tape, const Tensor& h0, const Tensor& a_tilde,
                   const std::vector<Tensor>& layer_weights) {
  if (a_tilde.rows() != a_tilde.cols() || a_tilde.rows() != h0.rows()) {
    throw DimensionError("gcn_forward: adjacency " + shape_str(a_tilde.shape()) +
                         " does not match features " + shape_str(h0.shape()));
  }
  Tensor h = h0;
  for (const Tensor& w : layer_weights) {
    // The adjacency contraction runs over the permutable concept axis; the
    // canonical variant keeps the promised exact equivariance.
    Tensor mixed = tape.matmul(tape.matmul_canonical(a_tilde, h), w);
    h = tape.add(tape.leaky_relu(mixed), h0);
  }
  return h;
}

}  // namespace dcin::knowledge
