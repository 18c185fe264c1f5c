#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "prefrl/env.hpp"

namespace prefrl {

enum class Activation { relu };
enum class OutputTransform { identity, logistic, tanh_box };

/// Fully-connected network with ReLU hidden layers.
///
/// Parameter layout: for every layer l (input -> output order) the weight
/// matrix W_l is stored row-major (out x in), immediately followed by the
/// bias b_l (out). Total length is sum_l (in_l + 1) * out_l.
///
/// The ReLU subgradient at exactly 0 is 0.
struct MlpModel {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::relu;
  OutputTransform output = OutputTransform::identity;
  Vec box_low;   // tanh_box only, one entry per output
  Vec box_high;  // tanh_box only
  Vec params;

  [[nodiscard]] std::size_t input_size() const { return layer_sizes.front(); }
  [[nodiscard]] std::size_t output_size() const { return layer_sizes.back(); }
  [[nodiscard]] std::size_t num_layers() const { return layer_sizes.size() - 1; }

  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

std::size_t param_count(std::span<const std::size_t> layer_sizes);

/// Glorot-uniform weights, zero biases. With `zero_output_layer` the last
/// layer's weights are zero as well, so the initial output is the output
/// transform applied to 0.
MlpModel make_mlp(std::vector<std::size_t> layer_sizes, OutputTransform output,
                  std::uint64_t seed, bool zero_output_layer = false);

/// Checks the layout invariants; throws ContractViolation on failure.
void validate(const MlpModel& model);

/// Where the upstream gradient handed to backward() is attached.
enum class GradientAt {
  output,         // d/d(transformed output)
  pre_transform,  // d/d(last linear layer), skipping the output transform
};

struct GradBundle {
  Vec value;       // transformed network output
  Vec grad;        // d<upstream, output>/d params
  Vec input_grad;  // d<upstream, output>/d input
};

/// Activations of one forward pass, reusable by backward.
struct ForwardTrace {
  std::vector<Vec> pre;   // pre-activation per layer
  std::vector<Vec> post;  // post[0] = input, post[l+1] = activation of layer l
  Vec output;             // transformed output
};

Vec forward(const MlpModel& model, std::span<const double> input);

/// Raw last-layer values before the output transform.
Vec forward_logits(const MlpModel& model, std::span<const double> input);

ForwardTrace forward_trace(const MlpModel& model, std::span<const double> input);

GradBundle backward(const MlpModel& model, std::span<const double> input,
                    std::span<const double> upstream, GradientAt at = GradientAt::output);

/// Accumulating form of backward: adds d<upstream, output>/d params into
/// `grad_accumulator` (length = params) and returns the input gradient.
Vec accumulate_gradient(const MlpModel& model, const ForwardTrace& trace,
                        std::span<const double> upstream, std::span<double> grad_accumulator,
                        GradientAt at = GradientAt::output);

/// Activations for a batch of inputs, row-major (rows x width) per layer.
/// Reusing one trace across calls avoids reallocating its buffers.
struct BatchTrace {
  std::size_t rows = 0;
  std::vector<Vec> pre;
  std::vector<Vec> post;  // post[0] = inputs
  Vec output;             // rows x outputs, transformed
  std::vector<Vec> transposed;  // scratch: W_l^T per layer
  Vec delta;
  Vec input_delta;
};

/// Forward pass over `rows` inputs stored row-major in `inputs`.
void forward_batch(const MlpModel& model, std::span<const double> inputs, std::size_t rows,
                   BatchTrace& trace);

/// Adds sum_r d<upstream_r, output_r>/d params into `grad_accumulator`.
/// `upstream` is rows x outputs. Input gradients are not computed.
void accumulate_gradient_batch(const MlpModel& model, BatchTrace& trace,
                               std::span<const double> upstream, std::span<double> grad_accumulator,
                               GradientAt at = GradientAt::output);

enum class Direction { ascend, descend };

/// params +/- learning_rate * grad. Throws NonFiniteError (model untouched)
/// when grad has a NaN/Inf entry, ContractViolation on bad lr or length.
MlpModel sgd_step(const MlpModel& model, std::span<const double> grad, double learning_rate,
                  Direction direction);
void sgd_step_inplace(MlpModel& model, std::span<const double> grad, double learning_rate,
                      Direction direction);

/// Adam moments for one network. Empty until the first step.
struct AdamState {
  Vec first_moment;
  Vec second_moment;
  std::uint64_t steps = 0;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

void adam_step_inplace(MlpModel& model, AdamState& state, std::span<const double> grad,
                       double learning_rate, Direction direction, double beta1 = 0.9,
                       double beta2 = 0.999, double epsilon = 1e-8);

enum class OptimizerKind { sgd, adam };

/// Optimizer choice plus its state, owned alongside each trained network.
struct Optimizer {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 3e-4;
  AdamState adam;

  void apply(MlpModel& model, std::span<const double> grad, Direction direction);
};

double l2_distance(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> values);

// Checkpoint container (text, bit-exact):
//
//   prefrl-mlp 1
//   layers <n> <size_0> ... <size_{n-1}>
//   activation relu
//   output identity|logistic|tanh_box
//   box <m> <low_0> .. <low_{m-1}> <high_0> .. <high_{m-1}>
//   params <count>
//   <one hex-float per line>
//
// Reals are C99 hexadecimal floats, so a save/load round trip is exact.
void write_mlp(std::ostream& out, const MlpModel& model);
MlpModel read_mlp(std::istream& in);
void save_mlp(const std::filesystem::path& path, const MlpModel& model);
MlpModel load_mlp(const std::filesystem::path& path);

std::string format_hex(double value);
double parse_hex(const std::string& token);

}  // namespace prefrl
