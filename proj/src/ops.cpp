#include "egnmt/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace egnmt {

using detail::Node;

namespace debug {
namespace {
std::atomic<GradientFault> g_fault{GradientFault::None};
}

void inject_gradient_fault(GradientFault fault) { g_fault.store(fault); }
GradientFault active_gradient_fault() { return g_fault.load(); }

GradientFault parse_gradient_fault(const std::string& name) {
  if (name.empty() || name == "none") return GradientFault::None;
  if (name == "matmul") return GradientFault::MatMul;
  if (name == "softmax") return GradientFault::Softmax;
  if (name == "layer_norm") return GradientFault::LayerNorm;
  if (name == "cross_entropy") return GradientFault::CrossEntropy;
  if (name == "log_softmax") return GradientFault::LogSoftmax;
  if (name == "weighted_sum") return GradientFault::WeightedSum;
  if (name == "kl_divergence") return GradientFault::KlDivergence;
  throw std::invalid_argument("unknown gradient fault '" + name + "'");
}

}  // namespace debug

namespace {

double fault_scale(debug::GradientFault op) {
  return debug::active_gradient_fault() == op ? 1.01 : 1.0;
}

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_mode_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->is_leaf = false;
      for (const auto& t : inputs) node->parents.push_back(t.node_ptr());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor::wrap(std::move(node));
}

Tensor make_result_many(Shape shape, std::vector<double> data, std::span<const Tensor> inputs,
                        std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_mode_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->is_leaf = false;
      for (const auto& t : inputs) node->parents.push_back(t.node_ptr());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor::wrap(std::move(node));
}

// Returns the parent's gradient buffer or nullptr when it is not tracked.
double* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Mask Mask::all(std::size_t rows, std::size_t cols) {
  Mask m;
  m.rows = rows;
  m.cols = cols;
  m.allowed.assign(rows * cols, 1);
  return m;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const double s = fault_scale(debug::GradientFault::MatMul);
    const double* dC = self.grad.data();
    const double* A = self.parents[0]->data.data();
    const double* B = self.parents[1]->data.data();
    if (double* dA = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = B + p * n;
          const double* crow = dC + i * n;
          for (std::size_t j = 0; j < n; ++j) acc += crow[j] * brow[j];
          dA[i * k + p] += s * acc;
        }
      }
    }
    if (double* dB = grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* crow = dC + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = s * A[i * k + p];
          if (av == 0.0) continue;
          double* brow = dB + p * n;
          for (std::size_t j = 0; j < n; ++j) brow[j] += av * crow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  const double* A = a.data().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
  return make_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
    if (double* dA = grad_of(self, 0)) {
      const double* g = self.grad.data();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dA[i * c + j] += g[j * r + i];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& g = self.grad;
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* d = grad_of(self, p))
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& g = self.grad;
    if (double* d = grad_of(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    if (double* d = grad_of(self, 1))
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& g = self.grad;
    const auto& A = self.parents[0]->data;
    const auto& B = self.parents[1]->data;
    if (double* d = grad_of(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * B[i];
    if (double* d = grad_of(self, 1))
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * A[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * s;
  return make_result(a.shape(), std::move(out), {a}, [s](Node& self) {
    if (double* d = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += s * self.grad[i];
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  const std::size_t c = a.cols();
  if (bias.size() != c) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(a.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + bias.at(i % c);
  return make_result(a.shape(), std::move(out), {a, bias}, [c](Node& self) {
    const auto& g = self.grad;
    if (double* d = grad_of(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    if (double* d = grad_of(self, 1))
      for (std::size_t i = 0; i < g.size(); ++i) d[i % c] += g[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    if (double* d = grad_of(self, 0)) {
      const auto& x = self.parents[0]->data;
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] > 0.0) d[i] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, {s}, {a}, [](Node& self) {
    if (double* d = grad_of(self, 0)) {
      const double g = self.grad[0];
      for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) d[i] += g;
    }
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor softmax_masked(const Tensor& x, const Mask& mask) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (mask.rows != rows || mask.cols != cols) {
    throw DimensionError("softmax_masked: mask [" + std::to_string(mask.rows) + "x" +
                         std::to_string(mask.cols) + "] does not match input " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.size(), 0.0);
  const double* X = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (mask.at(r, c)) mx = std::max(mx, X[r * cols + c]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw std::domain_error("softmax_masked: row " + std::to_string(r) +
                              " has no allowed position");
    }
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!mask.at(r, c)) continue;
      out[r * cols + c] = std::exp(X[r * cols + c] - mx);
      z += out[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    if (double* d = grad_of(self, 0)) {
      const double s = fault_scale(debug::GradientFault::Softmax);
      const auto& y = self.data;
      const auto& g = self.grad;
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * g[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c)
          d[r * cols + c] += s * y[r * cols + c] * (g[r * cols + c] - dot);
      }
    }
  });
}

Tensor softmax(const Tensor& x) { return softmax_masked(x, Mask::all(x.rows(), x.cols())); }

Tensor log_softmax(const Tensor& x) {
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> out(x.size());
  const double* X = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, X[r * cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(X[r * cols + c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = X[r * cols + c] - lse;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    if (double* d = grad_of(self, 0)) {
      const double s = fault_scale(debug::GradientFault::LogSoftmax);
      const auto& y = self.data;
      const auto& g = self.grad;
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c)
          d[r * cols + c] += s * (g[r * cols + c] - std::exp(y[r * cols + c]) * gs);
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (d < 2) throw DimensionError("layer_norm: feature dimension must be at least 2");
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match input " + shape_str(x.shape()));
  }
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  const double* X = x.data().data();
  const double* G = gain.data().data();
  const double* B = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = X + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (row[c] - mu) * inv_std[r];
      out[r * d + c] = xhat[r * d + c] * G[c] + B[c];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const double s = fault_scale(debug::GradientFault::LayerNorm);
        const auto& g = self.grad;
        const auto& G = self.parents[1]->data;
        if (double* dx = grad_of(self, 0)) {
          std::vector<double> dxhat(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              dxhat[c] = g[r * d + c] * G[c];
              m1 += dxhat[c];
              m2 += dxhat[c] * xhat[r * d + c];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c)
              dx[r * d + c] += s * inv_std[r] * (dxhat[c] - m1 - xhat[r * d + c] * m2);
          }
        }
        if (double* dg = grad_of(self, 1))
          for (std::size_t i = 0; i < g.size(); ++i) dg[i % d] += s * g[i] * xhat[i];
        if (double* db = grad_of(self, 2))
          for (std::size_t i = 0; i < g.size(); ++i) db[i % d] += s * g[i];
      });
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding: token id " + std::to_string(ids[i]) +
                              " outside vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<TokenId> kept(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table}, [d, kept = std::move(kept)](Node& self) {
    if (double* dt = grad_of(self, 0)) {
      for (std::size_t i = 0; i < kept.size(); ++i) {
        double* dst = dt + static_cast<std::size_t>(kept[i]) * d;
        const double* src = self.grad.data() + i * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    }
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_rank2(a, "slice_cols");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  if (begin + count > c) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") exceed " + shape_str(a.shape()));
  }
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(a.data().data() + i * c + begin, count, out.data() + i * count);
  return make_result({r, count}, std::move(out), {a}, [r, c, begin, count](Node& self) {
    if (double* d = grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) d[i * c + begin + j] += self.grad[i * count + j];
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.shape()[0] != r) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(parts[k].data().data() + i * widths[k], widths[k], out.data() + i * total + offset);
    offset += widths[k];
  }
  return make_result_many({r, total}, std::move(out), parts, [r, total, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (double* d = grad_of(self, k)) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) d[i * widths[k] + j] += self.grad[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets, TokenId ignore_index,
                     Reduction reduction) {
  const std::size_t n = logits.rows(), vocab = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  }
  std::vector<double> probs(logits.size());
  double total = 0.0;
  std::size_t counted = 0;
  const double* X = logits.data().data();
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] == ignore_index) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw std::out_of_range("cross_entropy: target id " + std::to_string(targets[r]) +
                              " outside vocabulary of size " + std::to_string(vocab));
    }
    const double* row = X + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      probs[r * vocab + c] = std::exp(row[c] - mx);
      z += probs[r * vocab + c];
    }
    for (std::size_t c = 0; c < vocab; ++c) probs[r * vocab + c] /= z;
    total += mx + std::log(z) - row[static_cast<std::size_t>(targets[r])];
    ++counted;
  }
  double weight = 1.0;
  if (reduction == Reduction::Mean) weight = counted ? 1.0 / static_cast<double>(counted) : 0.0;
  std::vector<TokenId> kept(targets.begin(), targets.end());
  return make_result(
      {}, {total * weight}, {logits},
      [n, vocab, weight, ignore_index, kept = std::move(kept), probs = std::move(probs)](Node& self) {
        if (double* d = grad_of(self, 0)) {
          const double g = self.grad[0] * weight * fault_scale(debug::GradientFault::CrossEntropy);
          for (std::size_t r = 0; r < n; ++r) {
            if (kept[r] == ignore_index) continue;
            for (std::size_t c = 0; c < vocab; ++c) d[r * vocab + c] += g * probs[r * vocab + c];
            d[r * vocab + static_cast<std::size_t>(kept[r])] -= g;
          }
        }
      });
}

Tensor kl_divergence_rows(const Tensor& logits, std::span<const double> target,
                          std::span<const std::uint8_t> row_selected) {
  const std::size_t n = logits.rows(), vocab = logits.cols();
  if (target.size() != logits.size() || row_selected.size() != n) {
    throw DimensionError("kl_divergence_rows: target/selection sizes do not match logits " +
                         shape_str(logits.shape()));
  }
  std::vector<double> probs(logits.size(), 0.0);
  std::vector<double> target_mass(n, 0.0);
  double total = 0.0;
  const double* X = logits.data().data();
  for (std::size_t r = 0; r < n; ++r) {
    if (!row_selected[r]) continue;
    const double* row = X + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      probs[r * vocab + c] = std::exp(row[c] - mx);
      z += probs[r * vocab + c];
    }
    const double lse = mx + std::log(z);
    double kl = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      probs[r * vocab + c] /= z;
      const double q = target[r * vocab + c];
      target_mass[r] += q;
      if (q > 0.0) kl += q * (std::log(q) - (row[c] - lse));
    }
    total += std::max(kl, 0.0);
  }
  return make_result(
      {}, {total}, {logits},
      [n, vocab, probs = std::move(probs), target_mass = std::move(target_mass),
       q = std::vector<double>(target.begin(), target.end()),
       sel = std::vector<std::uint8_t>(row_selected.begin(), row_selected.end())](Node& self) {
        if (double* d = grad_of(self, 0)) {
          const double g = self.grad[0] * fault_scale(debug::GradientFault::KlDivergence);
          for (std::size_t r = 0; r < n; ++r) {
            if (!sel[r]) continue;
            for (std::size_t c = 0; c < vocab; ++c)
              d[r * vocab + c] += g * (target_mass[r] * probs[r * vocab + c] - q[r * vocab + c]);
          }
        }
      });
}

Tensor weighted_sum(const Tensor& a, std::span<const double> weights) {
  if (weights.size() != a.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for tensor " +
                         shape_str(a.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i) * weights[i];
  std::vector<double> w(weights.begin(), weights.end());
  return make_result({}, {s}, {a}, [w = std::move(w)](Node& self) {
    if (double* d = grad_of(self, 0)) {
      const double g = self.grad[0] * fault_scale(debug::GradientFault::WeightedSum);
      for (std::size_t i = 0; i < w.size(); ++i) d[i] += g * w[i];
    }
  });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be below 1");
  const double keep = 1.0 / (1.0 - rate);
  std::vector<double> factor(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    factor[i] = rng.uniform() < rate ? 0.0 : keep;
    out[i] = x.at(i) * factor[i];
  }
  return make_result(x.shape(), std::move(out), {x}, [factor = std::move(factor)](Node& self) {
    if (double* d = grad_of(self, 0))
      for (std::size_t i = 0; i < factor.size(); ++i) d[i] += self.grad[i] * factor[i];
  });
}

std::vector<TokenId> argmax_rows(const Tensor& scores) {
  const std::size_t rows = scores.rows(), cols = scores.cols();
  std::vector<TokenId> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c)
      if (scores.at(r, c) > scores.at(r, best)) best = c;
    out[r] = static_cast<TokenId>(best);
  }
  return out;
}

}  // namespace egnmt
