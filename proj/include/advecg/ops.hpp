#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "advecg/autodiff.hpp"

namespace advecg {

// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-7;

// Elementwise, equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var relu(const Var& x);  // relu'(0) = 0
Var sigmoid(const Var& x);
Var log(const Var& x);

// All elements to a one-element tensor; pairwise summation.
Var sum(const Var& x);
Var mean(const Var& x);
// [..., L] -> [...], mean over the last axis.
Var mean_last_axis(const Var& x);
// Softmax over the last axis.
Var softmax(const Var& x);

Var reshape(const Var& x, Shape shape);
// Concatenate along axis 0; trailing dimensions must agree.
Var concat_rows(const Var& a, const Var& b);

// [M, K] x [K, N] -> [M, N].
Var matmul(const Var& a, const Var& b);
// x [N, K], weight [M, K], bias [M] -> [N, M]. Bias may be an unbound Var.
Var linear(const Var& x, const Var& weight, const Var& bias);

struct Conv1dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

// x [N, C, L], weight [O, C, K], bias [O] (optional) -> [N, O, floor((L + 2p - K)/s) + 1].
// Zero padding on both sides.
Var conv1d(const Var& x, const Var& weight, const Var& bias, Conv1dOptions options);
Var conv1d(const Var& x, const Var& weight, Conv1dOptions options);

// Same fixed odd-length kernel applied to every channel of x [..., L], zero padded so the
// output has length L. Correlation form: y[t] = sum_j k[j] * x[t + j - (K-1)/2].
Var depthwise_conv1d_same(const Var& x, std::span<const double> kernel);

// x [N, C, L] -> [N, C, floor((L - kernel)/stride) + 1]. Ties resolve to the lowest index.
Var max_pool1d(const Var& x, std::size_t kernel, std::size_t stride);

// Nearest-neighbour repeat along the last axis.
Var upsample_nearest1d(const Var& x, std::size_t factor);

// Batch normalization over axis 1 of x [N, C] or [N, C, L].
// The train variant normalizes with batch statistics and folds them into the running
// estimates: r <- (1 - momentum) r + momentum * batch (biased variance).
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
                     double momentum = 0.1, double eps = 1e-5);
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
                    const Tensor& running_var, double eps = 1e-5);

// Inverted dropout. Each row along axis 0 draws its mask from a stream seeded by
// (seed, row_keys[row]); with empty row_keys the row index is the key.
Var dropout(const Var& x, double rate, std::uint64_t seed, std::span<const std::uint64_t> row_keys = {});

// Per-row summed binary cross-entropy of probabilities p [N, H] (or [H]) against targets of
// the same shape: -sum_h t log p + (1 - t) log(1 - p). Returns [N] (or [1]).
Var binary_cross_entropy_rows(const Var& probs, const Tensor& targets);

// Multi-hot sigmoid outputs: scalar sum of binary_cross_entropy_rows.
Var cross_entropy(const Var& probs, const Tensor& multi_hot);
// Exclusive classes: -log p[class_index] of a probability vector.
Var cross_entropy(const Var& probs, std::size_t class_index);

// Cosine similarity of each row of a and b, flattened past axis 0. Returns [N].
// Throws InvalidInput for a zero-norm row.
Var cosine_similarity_rows(const Var& a, const Var& b);

}  // namespace advecg
