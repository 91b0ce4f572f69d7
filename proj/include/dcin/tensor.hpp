#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dcin/errors.hpp"

namespace dcin {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
};

// Dense 64-bit float tensor with value-handle semantics: copies share the
// underlying buffer. Identity (the node pointer) keys gradient buffers.
// Elementwise ops accept any rank; matrix ops require rank 2.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  // Rank-1 convenience.
  static Tensor vector(std::vector<double> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }

  std::size_t rows() const;
  std::size_t cols() const;

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }

  double at(std::size_t r, std::size_t c) const;
  // Scalar extraction; errors unless the tensor holds exactly one element.
  double value() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  TensorNode* node() const { return node_.get(); }
  std::shared_ptr<TensorNode> node_ptr() const { return node_; }

  // Deep copy with a fresh identity.
  Tensor clone() const;

private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;
};

enum class Activation { kTanh, kLeakyRelu };

// Records forward operations and replays them in reverse for gradients.
// Single-owner, single-threaded: one tape per forward/backward pass.
class Tape {
public:
  Tensor matmul(const Tensor& a, const Tensor& b);
  // matmul whose inner sums accumulate in value order, so the result is
  // invariant under any permutation of the contracted dimension. Used where
  // exact permutation equivariance is promised.
  Tensor matmul_canonical(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double c);
  Tensor add_scalar(const Tensor& a, double c);
  // a: m x n, v: n-element row (rank 1 or 1 x n); adds v to every row of a.
  Tensor add_rowvec(const Tensor& a, const Tensor& v);
  Tensor concat_rows(const Tensor& a, const Tensor& b);
  Tensor concat_cols(const Tensor& a, const Tensor& b);
  // out row i = a row idx[i]; duplicate indices accumulate gradient.
  Tensor select_rows(const Tensor& a, const std::vector<std::size_t>& idx);
  // out[i] = a.data[flat_idx[i]], shape {n}.
  Tensor take(const Tensor& a, const std::vector<std::size_t>& flat_idx);
  Tensor softmax_rows(const Tensor& a);
  Tensor tanh(const Tensor& a);
  Tensor leaky_relu(const Tensor& a, double slope = 0.01);
  Tensor relu(const Tensor& a);
  Tensor activation(const Tensor& a, Activation kind);
  // offsets has S+1 entries, offsets[0] = 0, offsets[S] = a.rows();
  // out row s = mean of a rows [offsets[s], offsets[s+1]).
  Tensor mean_segments(const Tensor& a, const std::vector<std::size_t>& offsets);
  // Per segment and column, sorts the values descending (ties by row index)
  // and dots them with the first L weights renormalized to sum 1, where L is
  // the segment length. weights must have at least max-segment-length entries.
  Tensor sorted_pool_segments(const Tensor& a, const Tensor& weights,
                              const std::vector<std::size_t>& offsets);
  Tensor sum_all(const Tensor& a);

  // Replays the tape in reverse exactly once, filling gradient buffers for
  // every requires_grad tensor reachable from loss. Re-running backward on
  // the same tape reproduces the buffers bit for bit.
  void backward(const Tensor& loss);

  // Gradient buffer for t; zeros of t's size if t got no contribution.
  std::vector<double> grad(const Tensor& t) const;

  void clear();
  std::size_t op_count() const { return ops_.size(); }

private:
  struct Op {
    std::string name;
    std::shared_ptr<TensorNode> output;
    std::function<void(Tape&)> pull;  // accumulates into input grads
  };

  // Gradient access during replay.
  std::vector<double>& grad_buffer(TensorNode* node);
  const std::vector<double>* find_grad(const TensorNode* node) const;

  Tensor finish(const std::string& name, Tensor out,
                std::initializer_list<Tensor> inputs,
                std::function<void(Tape&)> pull);

  std::vector<Op> ops_;
  std::unordered_set<const TensorNode*> produced_;
  std::unordered_map<const TensorNode*, std::vector<double>> grads_;
};

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued tensor function evaluated at x.
double finite_diff_check(
    const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
    double h);

void check_finite(const std::vector<double>& data, const std::string& what);

}  // namespace dcin
