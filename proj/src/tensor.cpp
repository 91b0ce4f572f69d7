#include "dcin/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dcin {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void check_finite(const std::vector<double>& data, const std::string& what) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value in " + what);
    }
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->data.assign(shape_numel(shape), 0.0);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  check_finite(data, "tensor construction");
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> data, bool requires_grad) {
  Shape shape{data.size()};
  return from_data(std::move(shape), std::move(data), requires_grad);
}

std::size_t Tensor::rows() const {
  if (node_->shape.size() != 2) {
    throw DimensionError("expected rank-2 tensor, got shape " +
                         shape_str(node_->shape));
  }
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (node_->shape.size() != 2) {
    throw DimensionError("expected rank-2 tensor, got shape " +
                         shape_str(node_->shape));
  }
  return node_->shape[1];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data[r * cols() + c];
}

double Tensor::value() const {
  if (node_->data.size() != 1) {
    throw ContractError("value() requires a single-element tensor, got shape " +
                        shape_str(node_->shape));
  }
  return node_->data[0];
}

Tensor Tensor::clone() const {
  auto node = std::make_shared<TensorNode>(*node_);
  return Tensor(std::move(node));
}

namespace {

void require_rank2(const Tensor& t, const std::string& op) {
  if (t.shape().size() != 2) {
    throw DimensionError(op + ": expected rank-2 tensor, got shape " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b,
                        const std::string& op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(op + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor Tape::finish(const std::string& name, Tensor out,
                    std::initializer_list<Tensor> inputs,
                    std::function<void(Tape&)> pull) {
  check_finite(out.data(), name + " output");
  bool needs_grad = false;
  for (const Tensor& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (needs_grad) {
    out.set_requires_grad(true);
    ops_.push_back(Op{name, out.node_ptr(), std::move(pull)});
    produced_.insert(out.node());
  }
  return out;
}

std::vector<double>& Tape::grad_buffer(TensorNode* node) {
  auto it = grads_.find(node);
  if (it == grads_.end()) {
    it = grads_.emplace(node, std::vector<double>(node->data.size(), 0.0))
             .first;
  }
  return it->second;
}

const std::vector<double>* Tape::find_grad(const TensorNode* node) const {
  auto it = grads_.find(node);
  return it == grads_.end() ? nullptr : &it->second;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        od[i * n + j] += av * bd[p * n + j];
      }
    }
  }
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out.node_ptr();
  return finish("matmul", out, {a, b}, [an, bn, on, m, k, n](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g) return;
    if (an->requires_grad) {
      auto& ga = t.grad_buffer(an.get());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = (*g)[i * n + j];
          if (gv == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p)
            ga[i * k + p] += gv * bn->data[p * n + j];
        }
    }
    if (bn->requires_grad) {
      auto& gb = t.grad_buffer(bn.get());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = an->data[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j)
            gb[p * n + j] += av * (*g)[i * n + j];
        }
    }
  });
}

Tensor Tape::matmul_canonical(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_canonical");
  require_rank2(b, "matmul_canonical");
  const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) {
    throw DimensionError("matmul_canonical: inner dimensions differ, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  std::vector<double> terms(k);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) {
        terms[p] = a.data()[i * k + p] * b.data()[p * n + j];
      }
      std::sort(terms.begin(), terms.end());
      double acc = 0.0;
      for (double t : terms) acc += t;
      out.data()[i * n + j] = acc;
    }
  }
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out.node_ptr();
  return finish("matmul_canonical", out, {a, b},
                [an, bn, on, m, k, n](Tape& t) {
                  const std::vector<double>* g = t.find_grad(on.get());
                  if (!g) return;
                  if (an->requires_grad) {
                    auto& ga = t.grad_buffer(an.get());
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) {
                        const double gv = (*g)[i * n + j];
                        if (gv == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p)
                          ga[i * k + p] += gv * bn->data[p * n + j];
                      }
                  }
                  if (bn->requires_grad) {
                    auto& gb = t.grad_buffer(bn.get());
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        const double av = an->data[i * k + p];
                        if (av == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j)
                          gb[p * n + j] += av * (*g)[i * n + j];
                      }
                  }
                });
}

Tensor Tape::transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.at(i, j);
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  return finish("transpose", out, {a}, [an, on, m, n](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g || !an->requires_grad) return;
    auto& ga = t.grad_buffer(an.get());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += (*g)[j * m + i];
  });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out.node_ptr();
  return finish("add", out, {a, b}, [an, bn, on](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g) return;
    if (an->requires_grad) {
      auto& ga = t.grad_buffer(an.get());
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
    }
    if (bn->requires_grad) {
      auto& gb = t.grad_buffer(bn.get());
      for (std::size_t i = 0; i < g->size(); ++i) gb[i] += (*g)[i];
    }
  });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] - b.data()[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out.node_ptr();
  return finish("sub", out, {a, b}, [an, bn, on](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g) return;
    if (an->requires_grad) {
      auto& ga = t.grad_buffer(an.get());
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
    }
    if (bn->requires_grad) {
      auto& gb = t.grad_buffer(bn.get());
      for (std::size_t i = 0; i < g->size(); ++i) gb[i] -= (*g)[i];
    }
  });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out.node_ptr();
  return finish("mul", out, {a, b}, [an, bn, on](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g) return;
    if (an->requires_grad) {
      auto& ga = t.grad_buffer(an.get());
      for (std::size_t i = 0; i < g->size(); ++i)
        ga[i] += (*g)[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& gb = t.grad_buffer(bn.get());
      for (std::size_t i = 0; i < g->size(); ++i)
        gb[i] += (*g)[i] * an->data[i];
    }
  });
}

Tensor Tape::scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  return finish("scale", out, {a}, [an, on, c](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g || !an->requires_grad) return;
    auto& ga = t.grad_buffer(an.get());
    for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * c;
  });
}

Tensor Tape::add_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + c;
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  return finish("add_scalar", out, {a}, [an, on](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g || !an->requires_grad) return;
    auto& ga = t.grad_buffer(an.get());
    for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
  });
}

Tensor Tape::add_rowvec(const Tensor& a, const Tensor& v) {
  require_rank2(a, "add_rowvec");
  const std::size_t m = a.rows(), n = a.cols();
  if (v.size() != n) {
    throw DimensionError("add_rowvec: row vector size " +
                         std::to_string(v.size()) + " does not match cols " +
                         std::to_string(n));
  }
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.data()[i * n + j] = a.data()[i * n + j] + v.data()[j];
  auto an = a.node_ptr();
  auto vn = v.node_ptr();
  auto on = out.node_ptr();
  return finish("add_rowvec", out, {a, v}, [an, vn, on, m, n](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g) return;
    if (an->requires_grad) {
      auto& ga = t.grad_buffer(an.get());
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
    }
    if (vn->requires_grad) {
      auto& gv = t.grad_buffer(vn.get());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[j] += (*g)[i * n + j];
    }
  });
}

Tensor Tape::concat_rows(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_rows");
  require_rank2(b, "concat_rows");
  if (a.cols() != b.cols()) {
    throw DimensionError("concat_rows: column counts differ, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t ma = a.rows(), mb = b.rows(), n = a.cols();
  Tensor out = Tensor::zeros({ma + mb, n});
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + ma * n);
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out.node_ptr();
  return finish("concat_rows", out, {a, b}, [an, bn, on, ma, n](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g) return;
    if (an->requires_grad) {
      auto& ga = t.grad_buffer(an.get());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i];
    }
    if (bn->requires_grad) {
      auto& gb = t.grad_buffer(bn.get());
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += (*g)[ma * n + i];
    }
  });
}

Tensor Tape::concat_cols(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_cols");
  require_rank2(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_cols: row counts differ, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
  Tensor out = Tensor::zeros({m, na + nb});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < na; ++j)
      out.data()[i * (na + nb) + j] = a.at(i, j);
    for (std::size_t j = 0; j < nb; ++j)
      out.data()[i * (na + nb) + na + j] = b.at(i, j);
  }
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out.node_ptr();
  return finish("concat_cols", out, {a, b}, [an, bn, on, m, na, nb](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g) return;
    if (an->requires_grad) {
      auto& ga = t.grad_buffer(an.get());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < na; ++j)
          ga[i * na + j] += (*g)[i * (na + nb) + j];
    }
    if (bn->requires_grad) {
      auto& gb = t.grad_buffer(bn.get());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < nb; ++j)
          gb[i * nb + j] += (*g)[i * (na + nb) + na + j];
    }
  });
}

Tensor Tape::select_rows(const Tensor& a,
                         const std::vector<std::size_t>& idx) {
  require_rank2(a, "select_rows");
  const std::size_t m = a.rows(), n = a.cols();
  for (std::size_t r : idx) {
    if (r >= m)
      throw DimensionError("select_rows: index " + std::to_string(r) +
                           " out of range for " + std::to_string(m) + " rows");
  }
  Tensor out = Tensor::zeros({idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(a.data().begin() + idx[i] * n,
              a.data().begin() + (idx[i] + 1) * n,
              out.data().begin() + i * n);
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  return finish("select_rows", out, {a}, [an, on, idx, n](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g || !an->requires_grad) return;
    auto& ga = t.grad_buffer(an.get());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j)
        ga[idx[i] * n + j] += (*g)[i * n + j];
  });
}

Tensor Tape::take(const Tensor& a, const std::vector<std::size_t>& flat_idx) {
  for (std::size_t p : flat_idx) {
    if (p >= a.size())
      throw DimensionError("take: flat index " + std::to_string(p) +
                           " out of range for size " +
                           std::to_string(a.size()));
  }
  std::vector<double> vals(flat_idx.size());
  for (std::size_t i = 0; i < flat_idx.size(); ++i)
    vals[i] = a.data()[flat_idx[i]];
  Tensor out = Tensor::from_data({flat_idx.size()}, std::move(vals));
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  return finish("take", out, {a}, [an, on, flat_idx](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g || !an->requires_grad) return;
    auto& ga = t.grad_buffer(an.get());
    for (std::size_t i = 0; i < flat_idx.size(); ++i)
      ga[flat_idx[i]] += (*g)[i];
  });
}

Tensor Tape::softmax_rows(const Tensor& a) {
  check_finite(a.data(), "softmax_rows input");
  std::size_t m, n;
  if (a.shape().size() == 1) {
    m = 1;
    n = a.shape()[0];
  } else {
    require_rank2(a, "softmax_rows");
    m = a.rows();
    n = a.cols();
  }
  if (n == 0) throw DimensionError("softmax_rows: empty rows");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.data().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(row[j] - mx);
      out.data()[i * n + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] /= sum;
  }
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  return finish("softmax_rows", out, {a}, [an, on, m, n](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g || !an->requires_grad) return;
    auto& ga = t.grad_buffer(an.get());
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        dot += (*g)[i * n + j] * on->data[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        ga[i * n + j] += on->data[i * n + j] * ((*g)[i * n + j] - dot);
    }
  });
}

Tensor Tape::tanh(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = std::tanh(a.data()[i]);
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  return finish("tanh", out, {a}, [an, on](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g || !an->requires_grad) return;
    auto& ga = t.grad_buffer(an.get());
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double y = on->data[i];
      ga[i] += (*g)[i] * (1.0 - y * y);
    }
  });
}

Tensor Tape::leaky_relu(const Tensor& a, double slope) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.data()[i];
    out.data()[i] = x > 0.0 ? x : slope * x;
  }
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  return finish("leaky_relu", out, {a}, [an, on, slope](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g || !an->requires_grad) return;
    auto& ga = t.grad_buffer(an.get());
    for (std::size_t i = 0; i < g->size(); ++i)
      ga[i] += (*g)[i] * (an->data[i] > 0.0 ? 1.0 : slope);
  });
}

Tensor Tape::relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor Tape::activation(const Tensor& a, Activation kind) {
  check_finite(a.data(), "activation input");
  switch (kind) {
    case Activation::kTanh:
      return tanh(a);
    case Activation::kLeakyRelu:
      return leaky_relu(a);
  }
  throw ContractError("unknown activation kind");
}

Tensor Tape::mean_segments(const Tensor& a,
                           const std::vector<std::size_t>& offsets) {
  require_rank2(a, "mean_segments");
  const std::size_t n = a.cols();
  if (offsets.size() < 2 || offsets.front() != 0 ||
      offsets.back() != a.rows()) {
    throw DimensionError("mean_segments: offsets must start at 0 and end at " +
                         std::to_string(a.rows()));
  }
  const std::size_t S = offsets.size() - 1;
  for (std::size_t s = 0; s < S; ++s) {
    if (offsets[s + 1] <= offsets[s])
      throw DimensionError("mean_segments: empty segment " +
                           std::to_string(s));
  }
  Tensor out = Tensor::zeros({S, n});
  for (std::size_t s = 0; s < S; ++s) {
    const double inv = 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]);
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
      for (std::size_t j = 0; j < n; ++j)
        out.data()[s * n + j] += a.data()[r * n + j] * inv;
  }
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  return finish("mean_segments", out, {a}, [an, on, offsets, n](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g || !an->requires_grad) return;
    auto& ga = t.grad_buffer(an.get());
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const double inv =
          1.0 / static_cast<double>(offsets[s + 1] - offsets[s]);
      for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
        for (std::size_t j = 0; j < n; ++j)
          ga[r * n + j] += (*g)[s * n + j] * inv;
    }
  });
}

Tensor Tape::sorted_pool_segments(const Tensor& a, const Tensor& weights,
                                  const std::vector<std::size_t>& offsets) {
  require_rank2(a, "sorted_pool_segments");
  const std::size_t n = a.cols();
  if (offsets.size() < 2 || offsets.front() != 0 ||
      offsets.back() != a.rows()) {
    throw DimensionError(
        "sorted_pool_segments: offsets must start at 0 and end at " +
        std::to_string(a.rows()));
  }
  const std::size_t S = offsets.size() - 1;
  std::size_t max_len = 0;
  for (std::size_t s = 0; s < S; ++s) {
    if (offsets[s + 1] <= offsets[s])
      throw DimensionError("sorted_pool_segments: empty segment " +
                           std::to_string(s));
    max_len = std::max(max_len, offsets[s + 1] - offsets[s]);
  }
  if (weights.size() < max_len) {
    throw DimensionError("sorted_pool_segments: " + std::to_string(max_len) +
                         " ranks needed but only " +
                         std::to_string(weights.size()) + " weights given");
  }

  Tensor out = Tensor::zeros({S, n});
  // Per (segment, column): the descending permutation of row indices, and per
  // segment the raw weight sum used for renormalization.
  auto perms = std::make_shared<std::vector<std::vector<std::size_t>>>(S * n);
  auto wsums = std::make_shared<std::vector<double>>(S, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    const std::size_t len = offsets[s + 1] - offsets[s];
    double wsum = 0.0;
    for (std::size_t r = 0; r < len; ++r) wsum += weights.data()[r];
    if (std::abs(wsum) < 1e-12) {
      throw NumericError(
          "sorted_pool_segments: pooling weights sum to ~0 over segment of "
          "length " +
          std::to_string(len));
    }
    (*wsums)[s] = wsum;
    for (std::size_t j = 0; j < n; ++j) {
      auto& perm = (*perms)[s * n + j];
      perm.resize(len);
      std::iota(perm.begin(), perm.end(), offsets[s]);
      std::sort(perm.begin(), perm.end(),
                [&](std::size_t x, std::size_t y) {
                  const double vx = a.data()[x * n + j];
                  const double vy = a.data()[y * n + j];
                  if (vx != vy) return vx > vy;
                  return x < y;
                });
      double acc = 0.0;
      for (std::size_t rank = 0; rank < len; ++rank)
        acc += (weights.data()[rank] / wsum) * a.data()[perm[rank] * n + j];
      out.data()[s * n + j] = acc;
    }
  }
  auto an = a.node_ptr();
  auto wn = weights.node_ptr();
  auto on = out.node_ptr();
  return finish(
      "sorted_pool_segments", out, {a, weights},
      [an, wn, on, perms, wsums, offsets, n](Tape& t) {
        const std::vector<double>* g = t.find_grad(on.get());
        if (!g) return;
        const std::size_t S = offsets.size() - 1;
        for (std::size_t s = 0; s < S; ++s) {
          const std::size_t len = offsets[s + 1] - offsets[s];
          const double wsum = (*wsums)[s];
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = (*g)[s * n + j];
            if (gv == 0.0) continue;
            const auto& perm = (*perms)[s * n + j];
            if (an->requires_grad) {
              auto& ga = t.grad_buffer(an.get());
              for (std::size_t rank = 0; rank < len; ++rank)
                ga[perm[rank] * n + j] += gv * (wn->data[rank] / wsum);
            }
            if (wn->requires_grad) {
              // out = sum_r (w_r / wsum) v_r, so
              // d out / d w_r = (v_r - out) / wsum.
              auto& gw = t.grad_buffer(wn.get());
              const double o = on->data[s * n + j];
              for (std::size_t rank = 0; rank < len; ++rank) {
                const double v = an->data[perm[rank] * n + j];
                gw[rank] += gv * (v - o) / wsum;
              }
            }
          }
        }
      });
}

Tensor Tape::sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  return finish("sum_all", out, {a}, [an, on](Tape& t) {
    const std::vector<double>* g = t.find_grad(on.get());
    if (!g || !an->requires_grad) return;
    auto& ga = t.grad_buffer(an.get());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[0];
  });
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  if (produced_.find(loss.node()) == produced_.end()) {
    throw ContractError("backward: loss is not an output recorded on this tape");
  }
  grads_.clear();
  grad_buffer(loss.node())[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    it->pull(*this);
  }
}

std::vector<double> Tape::grad(const Tensor& t) const {
  const std::vector<double>* g = find_grad(t.node());
  if (g) return *g;
  return std::vector<double>(t.size(), 0.0);
}

void Tape::clear() {
  ops_.clear();
  produced_.clear();
  grads_.clear();
}

double finite_diff_check(
    const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
    double h) {
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  Tape tape;
  Tensor y = f(tape, probe);
  if (y.size() != 1) {
    throw ContractError("finite_diff_check: f must be scalar-valued");
  }
  tape.backward(y);
  std::vector<double> analytic = tape.grad(probe);

  double max_err = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    Tensor xp = x.clone();
    xp.data()[i] += h;
    Tensor xm = x.clone();
    xm.data()[i] -= h;
    Tape tp, tm;
    const double fp = f(tp, xp).value();
    const double fm = f(tm, xm).value();
    const double fd = (fp - fm) / (2.0 * h);
    const double err =
        std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace dcin
