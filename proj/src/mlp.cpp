#include "dmse/mlp.hpp"

#include "dmse/rng.hpp"

#include <cmath>
#include <string>

namespace dmse {

namespace {

void check_dims(const std::vector<Index>& dims) {
  if (dims.empty()) throw InvalidArgument("layer_dims must not be empty");
  for (Index d : dims) {
    if (d < 1) throw InvalidArgument("every layer dimension must be >= 1");
  }
}

}  // namespace

Index MlpParams::num_parameters() const {
  Index total = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) total += weights[k].size() + biases[k].size();
  return total;
}

MlpParams MlpParams::zeros(const std::vector<Index>& layer_dims) {
  check_dims(layer_dims);
  MlpParams p;
  p.layer_dims = layer_dims;
  for (std::size_t k = 0; k + 1 < layer_dims.size(); ++k) {
    p.weights.push_back(Matrix::Zero(layer_dims[k + 1], layer_dims[k]));
    p.biases.push_back(Vector::Zero(layer_dims[k + 1]));
  }
  return p;
}

MlpParams& MlpParams::operator+=(const MlpParams& other) {
  if (other.layer_dims != layer_dims) throw DimMismatch("MLP shapes differ");
  for (std::size_t k = 0; k < weights.size(); ++k) {
    weights[k] += other.weights[k];
    biases[k] += other.biases[k];
  }
  return *this;
}

MlpParams& MlpParams::operator*=(double s) {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    weights[k] *= s;
    biases[k] *= s;
  }
  return *this;
}

MlpParams mlp_init(const std::vector<Index>& layer_dims, std::uint64_t seed) {
  MlpParams p = MlpParams::zeros(layer_dims);
  Rng rng(seed);
  for (auto& w : p.weights) {
    const double r = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Index i = 0; i < w.rows(); ++i) {
      for (Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-r, r);
    }
  }
  return p;
}

Matrix mlp_forward(const MlpParams& params, const Matrix& inputs, MlpTape* tape) {
  if (inputs.rows() != params.input_dim()) {
    throw DimMismatch("MLP expects " + std::to_string(params.input_dim()) +
                      " inputs, got " + std::to_string(inputs.rows()));
  }
  const std::size_t layers = params.num_layers();
  if (tape) {
    tape->activations.assign(1, inputs);
    tape->pre_activations.clear();
  }
  Matrix a = inputs;
  for (std::size_t k = 0; k < layers; ++k) {
    Matrix z = (params.weights[k] * a).colwise() + params.biases[k];
    a = k + 1 < layers ? Matrix(z.array().tanh().matrix()) : z;
    if (tape) {
      tape->pre_activations.push_back(std::move(z));
      tape->activations.push_back(a);
    }
  }
  return a;
}

MlpForward mlp_forward(const MlpParams& params, const Vector& input) {
  MlpForward out;
  out.output = mlp_forward(params, Matrix(input), &out.tape);
  return out;
}

MlpBackward mlp_backward(const MlpParams& params, const MlpTape& tape,
                         const Matrix& grad_output) {
  const std::size_t layers = params.num_layers();
  if (tape.activations.size() != layers + 1) throw DimMismatch("tape does not match network");
  if (grad_output.rows() != params.output_dim() || grad_output.cols() != tape.batch_size()) {
    throw DimMismatch("grad_output shape does not match network output");
  }
  MlpBackward out{MlpParams::zeros(params.layer_dims), grad_output};
  Matrix& g = out.grad_input;
  for (std::size_t k = layers; k-- > 0;) {
    if (k + 1 < layers) {
      g.array() *= 1.0 - tape.activations[k + 1].array().square();
    }
    out.grad_params.weights[k].noalias() = g * tape.activations[k].transpose();
    out.grad_params.biases[k] = g.rowwise().sum();
    g = params.weights[k].transpose() * g;
  }
  return out;
}

}  // namespace dmse
