#pragma once

// Fully connected tanh network with hand-written reverse pass.

#include "dmse/core.hpp"

#include <cstdint>
#include <vector>

namespace dmse {

/// layer_dims = [input, hidden..., output]. Hidden layers use tanh, the last
/// affine layer is linear. A single entry means the identity map.
struct MlpParams {
  std::vector<Index> layer_dims;
  std::vector<Matrix> weights;  // weights[k] is dims[k+1] x dims[k]
  std::vector<Vector> biases;

  Index input_dim() const { return layer_dims.front(); }
  Index output_dim() const { return layer_dims.back(); }
  std::size_t num_layers() const { return weights.size(); }
  Index num_parameters() const;

  /// Same shapes, all zeros.
  static MlpParams zeros(const std::vector<Index>& layer_dims);
  MlpParams& operator+=(const MlpParams& other);
  MlpParams& operator*=(double s);
};

inline const std::vector<Index> kDefaultHiddenDims = {256, 256, 64};

/// Per-layer intermediates for a batch (one column per example).
struct MlpTape {
  std::vector<Matrix> activations;  // activations[0] is the input
  std::vector<Matrix> pre_activations;

  Index batch_size() const { return activations.empty() ? 0 : activations.front().cols(); }
  const Matrix& output() const { return activations.back(); }
};

/// Uniform(-r, r) weights with r = sqrt(6 / (fan_in + fan_out)), zero biases.
MlpParams mlp_init(const std::vector<Index>& layer_dims, std::uint64_t seed);

/// Batched forward pass; inputs has one example per column.
Matrix mlp_forward(const MlpParams& params, const Matrix& inputs, MlpTape* tape = nullptr);

struct MlpForward {
  Vector output;
  MlpTape tape;
};

MlpForward mlp_forward(const MlpParams& params, const Vector& input);

struct MlpBackward {
  MlpParams grad_params;  // summed over the batch
  Matrix grad_input;      // one column per example
};

/// Gradient of sum_b <grad_output.col(b), DNN(x_b)> with respect to every
/// weight, bias and input.
MlpBackward mlp_backward(const MlpParams& params, const MlpTape& tape,
                         const Matrix& grad_output);

}  // namespace dmse
