#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>

#include "posttrain/tensor.h"

// Differentiable operations. All matrices are row-major; "rows" means every
// dimension but the last.
namespace posttrain::ops {

// [m x k] . [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// [m x k] . [n x k]^T -> [m x n]
template <typename T>
Tensor<T> matmul_transposed(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

// x[..., n] + bias[n], broadcast over rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

// Softmax over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps);

// Exact x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// Inverted dropout. Rows are split into block_seeds.size() equal blocks and
// each block draws its mask from its own seed, so a row block gets the same
// mask regardless of which batch it sits in.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate,
                  std::span<const std::uint64_t> block_seeds);

// Rows of `table` selected by `ids`.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids);

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

// Mean of -log(max(p[target], 1e-12)) over rows whose target is >= 0.
// When `normalizer` is given the sum is divided by it instead of the number
// of contributing rows.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs,
                        std::span<const std::int32_t> targets,
                        std::optional<double> normalizer = std::nullopt);

// Scaled dot-product self-attention over `batch` sequences stacked as rows of
// q, k, v ([batch*len x hidden]); keys with key_valid == 0 get zero weight.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k,
                    const Tensor<T>& v,
                    std::span<const std::uint8_t> key_valid,
                    std::size_t batch, std::size_t num_heads);

inline constexpr double kProbabilityClamp = 1e-12;

}  // namespace posttrain::ops
