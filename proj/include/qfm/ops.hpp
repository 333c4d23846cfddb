#pragma once

#include <cstddef>
#include <span>

#include "qfm/tensor.hpp"

// Differentiable operations. Each op computes its output eagerly and, when a
// tape is active and some input requires grad, records its backward rule.
// Broadcasting is limited to identical shapes or one single-element operand.
namespace qfm::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

// x[N x D] + row[D] added to every row.
Tensor add_rowwise(const Tensor& x, const Tensor& row);
// x[N x in] * w[in x out] + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes over the last dimension.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
// [N x D] -> [1 x D]
Tensor mean_rows(const Tensor& x);

// image[C x H x W] -> [M x C*p*p], patches in row-major grid order, each
// flattened as (channel, row, col).
Tensor patchify(const Tensor& image, std::size_t patch);

// mean((pred - target)^2) over all elements of pred.
Tensor mse(const Tensor& pred, float target);

}  // namespace qfm::ops
