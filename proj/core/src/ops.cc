#include "posttrain/ops.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "posttrain/error.h"

namespace posttrain::ops {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;
using Stride = Eigen::OuterStride<>;
template <typename T>
using StridedMap = Eigen::Map<Mat<T>, 0, Stride>;
template <typename T>
using ConstStridedMap = Eigen::Map<const Mat<T>, 0, Stride>;

template <typename T>
using Node = detail::Node<T>;

// Wraps `values` as an op result; wires parents and the backward closure only
// when some input needs a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto* in : inputs) needs = needs || in->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto* in : inputs) node->parents.push_back(in->node());
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
void require_rank2(const Tensor<T>& x, const char* op) {
  if (x.rank() != 2) {
    throw InvalidArgument(std::string(op) + " expects a matrix, got shape " +
                          shape_to_string(x.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " +
                          shape_to_string(a.shape()) + " vs " +
                          shape_to_string(b.shape()));
  }
}

std::uint64_t mix_seed(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw InvalidArgument("matmul: shape mismatch " +
                          shape_to_string(a.shape()) + " x " +
                          shape_to_string(b.shape()));
  }
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() =
      ConstMatMap<T>(a.data().data(), m, k) *
      ConstMatMap<T>(b.data().data(), k, n);
  auto* an = a.node().get();
  auto* bn = b.node().get();
  return make_result<T>({m, n}, std::move(out), {&a, &b},
                        [an, bn, m, k, n](Node<T>& self) {
                          ConstMatMap<T> g(self.grad.data(), m, n);
                          if (an->requires_grad) {
                            MatMap<T>(an->grad.data(), m, k).noalias() +=
                                g * ConstMatMap<T>(bn->data.data(), k, n)
                                        .transpose();
                          }
                          if (bn->requires_grad) {
                            MatMap<T>(bn->grad.data(), k, n).noalias() +=
                                ConstMatMap<T>(an->data.data(), m, k)
                                    .transpose() *
                                g;
                          }
                        });
}

template <typename T>
Tensor<T> matmul_transposed(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul_transposed");
  require_rank2(b, "matmul_transposed");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw InvalidArgument("matmul_transposed: shape mismatch " +
                          shape_to_string(a.shape()) + " x " +
                          shape_to_string(b.shape()) + "^T");
  }
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() =
      ConstMatMap<T>(a.data().data(), m, k) *
      ConstMatMap<T>(b.data().data(), n, k).transpose();
  auto* an = a.node().get();
  auto* bn = b.node().get();
  return make_result<T>({m, n}, std::move(out), {&a, &b},
                        [an, bn, m, k, n](Node<T>& self) {
                          ConstMatMap<T> g(self.grad.data(), m, n);
                          if (an->requires_grad) {
                            MatMap<T>(an->grad.data(), m, k).noalias() +=
                                g * ConstMatMap<T>(bn->data.data(), n, k);
                          }
                          if (bn->requires_grad) {
                            MatMap<T>(bn->grad.data(), n, k).noalias() +=
                                g.transpose() *
                                ConstMatMap<T>(an->data.data(), m, k);
                          }
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto* an = a.node().get();
  auto* bn = b.node().get();
  return make_result<T>(a.shape(), std::move(out), {&a, &b},
                        [an, bn](Node<T>& self) {
                          for (auto* p : {an, bn}) {
                            if (!p->requires_grad) continue;
                            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                              p->grad[i] += self.grad[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  auto* an = a.node().get();
  auto* bn = b.node().get();
  return make_result<T>(a.shape(), std::move(out), {&a, &b},
                        [an, bn](Node<T>& self) {
                          const std::size_t n = self.grad.size();
                          if (an->requires_grad) {
                            for (std::size_t i = 0; i < n; ++i) {
                              an->grad[i] += self.grad[i] * bn->data[i];
                            }
                          }
                          if (bn->requires_grad) {
                            for (std::size_t i = 0; i < n; ++i) {
                              bn->grad[i] += self.grad[i] * an->data[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  auto* xn = x.node().get();
  return make_result<T>(x.shape(), std::move(out), {&x},
                        [xn, factor](Node<T>& self) {
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            xn->grad[i] += factor * self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = x.cols();
  if (bias.numel() != n) {
    throw InvalidArgument("add_bias: bias " + shape_to_string(bias.shape()) +
                          " does not match " + shape_to_string(x.shape()));
  }
  const std::size_t rows = x.rows();
  std::vector<T> out(x.data().begin(), x.data().end());
  const auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bd[c];
  }
  auto* xn = x.node().get();
  auto* bn = bias.node().get();
  return make_result<T>(x.shape(), std::move(out), {&x, &bias},
                        [xn, bn, rows, n](Node<T>& self) {
                          if (xn->requires_grad) {
                            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                              xn->grad[i] += self.grad[i];
                            }
                          }
                          if (bn->requires_grad) {
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < n; ++c) {
                                bn->grad[c] += self.grad[r * n + c];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  auto* xn = x.node().get();
  return make_result<T>({1}, {total}, {&x}, [xn](Node<T>& self) {
    for (auto& g : xn->grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t n = x.cols();
  if (n == 0) throw InvalidArgument("softmax_rows: empty last axis");
  const std::size_t rows = x.rows();
  const auto xd = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * n;
    T* y = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t c = 0; c < n; ++c) {
      y[c] = std::exp(in[c] - mx);
      total += y[c];
    }
    for (std::size_t c = 0; c < n; ++c) y[c] /= total;
  }
  auto* xn = x.node().get();
  return make_result<T>(x.shape(), std::move(out), {&x},
                        [xn, rows, n](Node<T>& self) {
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* y = self.data.data() + r * n;
                            const T* g = self.grad.data() + r * n;
                            T dot = 0;
                            for (std::size_t c = 0; c < n; ++c) dot += g[c] * y[c];
                            T* dx = xn->grad.data() + r * n;
                            for (std::size_t c = 0; c < n; ++c) {
                              dx[c] += y[c] * (g[c] - dot);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  const std::size_t n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw InvalidArgument("layer_norm: gain/bias do not match last dimension of " +
                          shape_to_string(x.shape()));
  }
  const std::size_t rows = x.rows();
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  std::vector<T> out(x.numel());
  std::vector<T> normalized(x.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * n;
    T mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += in[c];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const T xh = (in[c] - mean) * is;
      normalized[r * n + c] = xh;
      out[r * n + c] = xh * gd[c] + bd[c];
    }
  }
  auto* xn = x.node().get();
  auto* gn = gain.node().get();
  auto* bn = bias.node().get();
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [xn, gn, bn, rows, n, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](Node<T>& self) {
        std::vector<T> dxh(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = self.grad.data() + r * n;
          const T* xh = normalized.data() + r * n;
          if (gn->requires_grad) {
            for (std::size_t c = 0; c < n; ++c) gn->grad[c] += g[c] * xh[c];
          }
          if (bn->requires_grad) {
            for (std::size_t c = 0; c < n; ++c) bn->grad[c] += g[c];
          }
          if (!xn->requires_grad) continue;
          T mean_dxh = 0, mean_dxh_xh = 0;
          for (std::size_t c = 0; c < n; ++c) {
            dxh[c] = g[c] * gn->data[c];
            mean_dxh += dxh[c];
            mean_dxh_xh += dxh[c] * xh[c];
          }
          mean_dxh /= static_cast<T>(n);
          mean_dxh_xh /= static_cast<T>(n);
          T* dx = xn->grad.data() + r * n;
          for (std::size_t c = 0; c < n; ++c) {
            dx[c] += inv_std[r] * (dxh[c] - mean_dxh - xh[c] * mean_dxh_xh);
          }
        }
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const auto xd = x.data();
  std::vector<T> out(x.numel());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xd[i] * T(0.5) * (T(1) + std::erf(xd[i] * inv_sqrt2));
  }
  auto* xn = x.node().get();
  return make_result<T>(
      x.shape(), std::move(out), {&x}, [xn, inv_sqrt2](Node<T>& self) {
        const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const T v = xn->data[i];
          const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
          const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
          xn->grad[i] += self.grad[i] * (cdf + v * pdf);
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate,
                  std::span<const std::uint64_t> block_seeds) {
  if (rate <= 0.0 || block_seeds.empty()) return x;
  if (rate >= 1.0) throw InvalidArgument("dropout rate must be below 1");
  const std::size_t rows = x.rows();
  const std::size_t n = x.cols();
  if (rows % block_seeds.size() != 0) {
    throw InvalidArgument("dropout: rows not divisible into seed blocks");
  }
  const std::size_t rows_per_block = rows / block_seeds.size();
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t b = 0; b < block_seeds.size(); ++b) {
    std::mt19937_64 rng(mix_seed(block_seeds[b]));
    const std::size_t begin = b * rows_per_block * n;
    for (std::size_t i = 0; i < rows_per_block * n; ++i) {
      mask[begin + i] = unit(rng) < rate ? T(0) : keep_scale;
    }
  }
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  auto* xn = x.node().get();
  return make_result<T>(x.shape(), std::move(out), {&x},
                        [xn, mask = std::move(mask)](Node<T>& self) {
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            xn->grad[i] += self.grad[i] * mask[i];
                          }
                        });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table,
                    std::span<const std::int32_t> ids) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.dim(0);
  const std::size_t n = table.dim(1);
  std::vector<T> out(ids.size() * n);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw InvalidArgument("embedding: id " + std::to_string(ids[i]) +
                            " out of range for table " +
                            shape_to_string(table.shape()));
    }
    std::copy_n(td.data() + ids[i] * n, n, out.data() + i * n);
  }
  auto* tn = table.node().get();
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  return make_result<T>({ids.size(), n}, std::move(out), {&table},
                        [tn, n, idx = std::move(idx)](Node<T>& self) {
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            T* dst = tn->grad.data() + idx[i] * n;
                            const T* src = self.grad.data() + i * n;
                            for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
                          }
                        });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  const std::size_t n = x.cols();
  const std::size_t total_rows = x.rows();
  std::vector<T> out(rows.size() * n);
  const auto xd = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= total_rows) {
      throw InvalidArgument("gather_rows: row " + std::to_string(rows[i]) +
                            " out of range for " + shape_to_string(x.shape()));
    }
    std::copy_n(xd.data() + rows[i] * n, n, out.data() + i * n);
  }
  auto* xn = x.node().get();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result<T>({rows.size(), n}, std::move(out), {&x},
                        [xn, n, idx = std::move(idx)](Node<T>& self) {
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            T* dst = xn->grad.data() + idx[i] * n;
                            const T* src = self.grad.data() + i * n;
                            for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw InvalidArgument("reshape: cannot view " + shape_to_string(x.shape()) +
                          " as " + shape_to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto* xn = x.node().get();
  return make_result<T>(std::move(shape), std::move(out), {&x},
                        [xn](Node<T>& self) {
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            xn->grad[i] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_rank2(x, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), n, m) =
      ConstMatMap<T>(x.data().data(), m, n).transpose();
  auto* xn = x.node().get();
  return make_result<T>({n, m}, std::move(out), {&x},
                        [xn, m, n](Node<T>& self) {
                          MatMap<T>(xn->grad.data(), m, n) +=
                              ConstMatMap<T>(self.grad.data(), n, m)
                                  .transpose();
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs,
                        std::span<const std::int32_t> targets,
                        std::optional<double> normalizer) {
  const std::size_t rows = probs.rows();
  const std::size_t k = probs.cols();
  if (targets.size() != rows) {
    throw InvalidArgument("cross_entropy: " + std::to_string(targets.size()) +
                          " targets for " + std::to_string(rows) + " rows");
  }
  std::size_t contributing = 0;
  for (auto t : targets) {
    if (t < 0) continue;
    if (static_cast<std::size_t>(t) >= k) {
      throw InvalidArgument("cross_entropy: target " + std::to_string(t) +
                            " out of range for " + std::to_string(k) +
                            " classes");
    }
    ++contributing;
  }
  if (contributing == 0) throw InvalidArgument("no targets");
  const T denom = static_cast<T>(normalizer ? *normalizer
                                            : static_cast<double>(contributing));
  const T clamp = static_cast<T>(kProbabilityClamp);
  const auto pd = probs.data();
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    total -= std::log(std::max(pd[r * k + targets[r]], clamp));
  }
  auto* pn = probs.node().get();
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  return make_result<T>(
      {1}, {total / denom}, {&probs},
      [pn, k, denom, clamp, tg = std::move(tg)](Node<T>& self) {
        const T g = self.grad[0] / denom;
        for (std::size_t r = 0; r < tg.size(); ++r) {
          if (tg[r] < 0) continue;
          const std::size_t i = r * k + tg[r];
          const T p = pn->data[i];
          if (p > clamp) pn->grad[i] -= g / p;
        }
      });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k,
                    const Tensor<T>& v,
                    std::span<const std::uint8_t> key_valid,
                    std::size_t batch, std::size_t num_heads) {
  require_rank2(q, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const std::size_t total = q.dim(0);
  const std::size_t hidden = q.dim(1);
  if (batch == 0 || total % batch != 0 || key_valid.size() != total) {
    throw InvalidArgument("attention: rows " + std::to_string(total) +
                          " do not split into " + std::to_string(batch) +
                          " sequences with matching key mask");
  }
  if (num_heads == 0 || hidden % num_heads != 0) {
    throw InvalidArgument("attention: hidden size not divisible by heads");
  }
  const std::size_t len = total / batch;
  const std::size_t head_dim = hidden / num_heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  const Stride stride(static_cast<Eigen::Index>(hidden));

  std::vector<T> out(total * hidden);
  std::vector<T> probs(batch * num_heads * len * len);
  Mat<T> scores(len, len);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint8_t* valid = key_valid.data() + b * len;
    for (std::size_t h = 0; h < num_heads; ++h) {
      const std::size_t off = b * len * hidden + h * head_dim;
      ConstStridedMap<T> qm(q.data().data() + off, len, head_dim, stride);
      ConstStridedMap<T> km(k.data().data() + off, len, head_dim, stride);
      ConstStridedMap<T> vm(v.data().data() + off, len, head_dim, stride);
      scores.noalias() = (qm * km.transpose()) * scale;
      MatMap<T> p(probs.data() + (b * num_heads + h) * len * len, len, len);
      for (std::size_t i = 0; i < len; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
          if (valid[j]) mx = std::max(mx, scores(i, j));
        }
        T denom = 0;
        for (std::size_t j = 0; j < len; ++j) {
          const T e = valid[j] ? std::exp(scores(i, j) - mx) : T(0);
          p(i, j) = e;
          denom += e;
        }
        if (denom > 0) p.row(i) /= denom;
      }
      StridedMap<T>(out.data() + off, len, head_dim, stride).noalias() = p * vm;
    }
  }

  auto* qn = q.node().get();
  auto* kn = k.node().get();
  auto* vn = v.node().get();
  return make_result<T>(
      {total, hidden}, std::move(out), {&q, &k, &v},
      [qn, kn, vn, batch, num_heads, len, head_dim, hidden, scale,
       probs = std::move(probs)](Node<T>& self) {
        const Stride stride(static_cast<Eigen::Index>(hidden));
        Mat<T> dp(len, len);
        Mat<T> ds(len, len);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < num_heads; ++h) {
            const std::size_t off = b * len * hidden + h * head_dim;
            ConstMatMap<T> p(probs.data() + (b * num_heads + h) * len * len,
                             len, len);
            ConstStridedMap<T> go(self.grad.data() + off, len, head_dim,
                                  stride);
            ConstStridedMap<T> qm(qn->data.data() + off, len, head_dim, stride);
            ConstStridedMap<T> km(kn->data.data() + off, len, head_dim, stride);
            ConstStridedMap<T> vm(vn->data.data() + off, len, head_dim, stride);
            if (vn->requires_grad) {
              StridedMap<T>(vn->grad.data() + off, len, head_dim, stride)
                  .noalias() += p.transpose() * go;
            }
            if (!qn->requires_grad && !kn->requires_grad) continue;
            dp.noalias() = go * vm.transpose();
            for (std::size_t i = 0; i < len; ++i) {
              const T dot = dp.row(i).dot(p.row(i));
              ds.row(i) = p.row(i).cwiseProduct(
                  (dp.row(i).array() - dot).matrix());
            }
            if (qn->requires_grad) {
              StridedMap<T>(qn->grad.data() + off, len, head_dim, stride)
                  .noalias() += (ds * km) * scale;
            }
            if (kn->requires_grad) {
              StridedMap<T>(kn->grad.data() + off, len, head_dim, stride)
                  .noalias() += (ds.transpose() * qm) * scale;
            }
          }
        }
      });
}

#define POSTTRAIN_INSTANTIATE_OPS(T)                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> matmul_transposed(const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> scale(const Tensor<T>&, T);                              \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> sum(const Tensor<T>&);                                   \
  template Tensor<T> softmax_rows(const Tensor<T>&);                          \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&,           \
                                const Tensor<T>&, T);                         \
  template Tensor<T> gelu(const Tensor<T>&);                                  \
  template Tensor<T> dropout(const Tensor<T>&, double,                        \
                             std::span<const std::uint64_t>);                 \
  template Tensor<T> embedding(const Tensor<T>&,                              \
                               std::span<const std::int32_t>);                \
  template Tensor<T> gather_rows(const Tensor<T>&,                            \
                                 std::span<const std::size_t>);               \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                        \
  template Tensor<T> transpose(const Tensor<T>&);                             \
  template Tensor<T> cross_entropy(const Tensor<T>&,                          \
                                   std::span<const std::int32_t>,             \
                                   std::optional<double>);                    \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&,            \
                               const Tensor<T>&,                              \
                               std::span<const std::uint8_t>, std::size_t,    \
                               std::size_t);

POSTTRAIN_INSTANTIATE_OPS(float)
POSTTRAIN_INSTANTIATE_OPS(double)

#undef POSTTRAIN_INSTANTIATE_OPS

}  // namespace posttrain::ops
