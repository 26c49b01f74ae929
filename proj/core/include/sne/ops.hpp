#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sne/tensor.hpp"

// Differentiable tensor operations. Every op validates shapes and throws
// std::invalid_argument with the offending dimensions on mismatch.
namespace sne::ops {

Tensor matmul(const Tensor& a, const Tensor& b);

// y = x * weight^T + bias, weight is [out x in], bias is [out] (optional).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor());

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, real factor);
Tensor square(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Sum over every axis except the leading one: [N x ...] -> [N].
Tensor sum_rows(const Tensor& x);
// Mean over the leading axis: [T x ...] -> [...].
Tensor mean_leading(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// floor((in + 2*padding - kernel) / stride) + 1; trailing rows that do not
// fill a whole window are dropped.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding);

// Cross-correlation. input [B x C x H x W], kernel [O x C x kh x kw], bias [O].
Tensor conv2d(const Tensor& input, const Tensor& kernel, Conv2dOptions opt = {},
              const Tensor& bias = Tensor());

// [N x C x H x W] pooling; gradient goes to the first maximum in scan order.
Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride);
// [T x B x C x H x W]; each timestep pooled independently.
Tensor maxpool2d_per_timestep(const Tensor& input, std::size_t window, std::size_t stride);
// [N x C x H x W] -> [N x C]
Tensor global_avgpool(const Tensor& input);

struct BatchNormStats {
  std::vector<real> running_mean;
  std::vector<real> running_var;
  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(channels, real(0)), running_var(channels, real(1)) {}
};

struct BatchNormOptions {
  bool training = true;
  real momentum = real(0.1);
  real eps = real(1e-5);
};

// Channel axis 1; statistics over every other axis. Callers flatten
// [T x B x ...] into [(T*B) x ...] so one statistic set covers all timesteps.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, BatchNormOptions opt = {});

// Column-wise concatenation of [B x d_i] parts.
Tensor concat(const std::vector<Tensor>& parts);
// out[:, j] = x[:, columns[j]]; backward scatter-adds.
Tensor select_columns(const Tensor& x, std::span<const std::size_t> columns);

// Row-wise L2 normalisation of a [B x d] tensor, x / sqrt(|x|^2 + eps^2).
Tensor normalize_rows(const Tensor& x, real eps = real(1e-8));

// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace sne::ops
