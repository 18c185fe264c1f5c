#include "prefrl/mlp.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "prefrl/error.hpp"
#include "prefrl/rng.hpp"

namespace prefrl {

namespace {

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void apply_output(const MlpModel& model, const Vec& logits, Vec& out) {
  out.resize(logits.size());
  switch (model.output) {
    case OutputTransform::identity:
      out = logits;
      break;
    case OutputTransform::logistic:
      for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logistic(logits[i]);
      break;
    case OutputTransform::tanh_box:
      for (std::size_t i = 0; i < logits.size(); ++i) {
        const double half = 0.5 * (model.box_high[i] - model.box_low[i]);
        out[i] = model.box_low[i] + half * (std::tanh(logits[i]) + 1.0);
      }
      break;
  }
}

const char* transform_name(OutputTransform t) {
  switch (t) {
    case OutputTransform::identity: return "identity";
    case OutputTransform::logistic: return "logistic";
    case OutputTransform::tanh_box: return "tanh_box";
  }
  return "identity";
}

OutputTransform parse_transform(const std::string& name) {
  if (name == "identity") return OutputTransform::identity;
  if (name == "logistic") return OutputTransform::logistic;
  if (name == "tanh_box") return OutputTransform::tanh_box;
  throw Error("unknown output transform '" + name + "'");
}

}  // namespace

std::size_t param_count(std::span<const std::size_t> layer_sizes) {
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
    total += (layer_sizes[l] + 1) * layer_sizes[l + 1];
  return total;
}

void validate(const MlpModel& model) {
  require(model.layer_sizes.size() >= 2, "an MLP needs at least an input and an output layer");
  for (std::size_t size : model.layer_sizes) require(size > 0, "layer sizes must be positive");
  require(model.params.size() == param_count(model.layer_sizes),
          "params length " + std::to_string(model.params.size()) + " does not match layout (" +
              std::to_string(param_count(model.layer_sizes)) + ")");
  if (model.output == OutputTransform::tanh_box) {
    require(model.box_low.size() == model.output_size() &&
                model.box_high.size() == model.output_size(),
            "tanh_box bounds must have one entry per output");
    for (std::size_t i = 0; i < model.box_low.size(); ++i)
      require(model.box_low[i] < model.box_high[i], "tanh_box needs low < high");
  }
}

MlpModel make_mlp(std::vector<std::size_t> layer_sizes, OutputTransform output,
                  std::uint64_t seed, bool zero_output_layer) {
  MlpModel model;
  model.layer_sizes = std::move(layer_sizes);
  model.output = output;
  model.params.assign(param_count(model.layer_sizes), 0.0);
  if (output == OutputTransform::tanh_box) {
    model.box_low.assign(model.output_size(), -1.0);
    model.box_high.assign(model.output_size(), 1.0);
  }
  Rng rng(mix64(seed));
  std::size_t offset = 0;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const std::size_t in = model.layer_sizes[l];
    const std::size_t out = model.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    const bool zero = zero_output_layer && l + 1 == model.num_layers();
    for (std::size_t i = 0; i < in * out; ++i) model.params[offset + i] = zero ? 0.0 : u(rng);
    offset += (in + 1) * out;  // biases stay zero
  }
  validate(model);
  return model;
}

ForwardTrace forward_trace(const MlpModel& model, std::span<const double> input) {
  require(input.size() == model.input_size(),
          "input has " + std::to_string(input.size()) + " entries, network expects " +
              std::to_string(model.input_size()));
  const std::size_t layers = model.num_layers();
  ForwardTrace trace;
  trace.pre.resize(layers);
  trace.post.resize(layers + 1);
  trace.post[0].assign(input.begin(), input.end());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = model.layer_sizes[l];
    const std::size_t out = model.layer_sizes[l + 1];
    const double* w = model.params.data() + offset;
    const double* b = w + in * out;
    const Vec& x = trace.post[l];
    Vec& z = trace.pre[l];
    z.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
      z[o] = acc;
    }
    Vec& a = trace.post[l + 1];
    if (l + 1 < layers) {
      a.resize(out);
      for (std::size_t o = 0; o < out; ++o) a[o] = z[o] > 0.0 ? z[o] : 0.0;
    } else {
      a = z;
    }
    offset += (in + 1) * out;
  }
  apply_output(model, trace.pre.back(), trace.output);
  return trace;
}

Vec forward(const MlpModel& model, std::span<const double> input) {
  return forward_trace(model, input).output;
}

Vec forward_logits(const MlpModel& model, std::span<const double> input) {
  return forward_trace(model, input).pre.back();
}

Vec accumulate_gradient(const MlpModel& model, const ForwardTrace& trace,
                        std::span<const double> upstream, std::span<double> grad_accumulator,
                        GradientAt at) {
  require(upstream.size() == model.output_size(),
          "upstream has " + std::to_string(upstream.size()) + " entries, network outputs " +
              std::to_string(model.output_size()));
  require(grad_accumulator.size() == model.params.size(),
          "gradient accumulator length does not match params");
  const std::size_t layers = model.num_layers();

  // delta = d/d(pre-activation of the current layer)
  Vec delta(upstream.begin(), upstream.end());
  if (at == GradientAt::output) {
    const Vec& z = trace.pre.back();
    switch (model.output) {
      case OutputTransform::identity:
        break;
      case OutputTransform::logistic:
        for (std::size_t i = 0; i < delta.size(); ++i) {
          const double y = trace.output[i];
          delta[i] *= y * (1.0 - y);
        }
        break;
      case OutputTransform::tanh_box:
        for (std::size_t i = 0; i < delta.size(); ++i) {
          const double t = std::tanh(z[i]);
          delta[i] *= 0.5 * (model.box_high[i] - model.box_low[i]) * (1.0 - t * t);
        }
        break;
    }
  }

  // Walk layers backwards; offsets of each layer's block.
  std::vector<std::size_t> offsets(layers);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = offset;
    offset += (model.layer_sizes[l] + 1) * model.layer_sizes[l + 1];
  }

  Vec input_delta;
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = model.layer_sizes[l];
    const std::size_t out = model.layer_sizes[l + 1];
    const double* w = model.params.data() + offsets[l];
    double* gw = grad_accumulator.data() + offsets[l];
    double* gb = gw + in * out;
    const Vec& x = trace.post[l];
    input_delta.assign(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      double* grow = gw + o * in;
      const double* wrow = w + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        grow[i] += d * x[i];
        input_delta[i] += d * wrow[i];
      }
    }
    if (l > 0) {
      const Vec& z_prev = trace.pre[l - 1];
      for (std::size_t i = 0; i < in; ++i)
        if (!(z_prev[i] > 0.0)) input_delta[i] = 0.0;  // ReLU'(0) = 0
    }
    delta.swap(input_delta);
  }
  return delta;
}

void forward_batch(const MlpModel& model, std::span<const double> inputs, std::size_t rows,
                   BatchTrace& trace) {
  require(inputs.size() == rows * model.input_size(),
          "batch input has " + std::to_string(inputs.size()) + " entries, expected " +
              std::to_string(rows * model.input_size()));
  const std::size_t layers = model.num_layers();
  trace.rows = rows;
  trace.pre.resize(layers);
  trace.post.resize(layers + 1);
  trace.transposed.resize(layers);
  trace.post[0].assign(inputs.begin(), inputs.end());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = model.layer_sizes[l];
    const std::size_t out = model.layer_sizes[l + 1];
    const double* w = model.params.data() + offset;
    const double* b = w + in * out;
    Vec& wt = trace.transposed[l];
    wt.resize(in * out);
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t i = 0; i < in; ++i) wt[i * out + o] = w[o * in + i];
    const Vec& x = trace.post[l];
    Vec& z = trace.pre[l];
    z.resize(rows * out);
    // z_r = b + sum_i x_ri * W^T_i, written as row updates so the inner loop vectorizes.
    for (std::size_t r = 0; r < rows; ++r) {
      double* zr = z.data() + r * out;
      std::copy(b, b + out, zr);
      const double* xr = x.data() + r * in;
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = xr[i];
        if (xi == 0.0) continue;
        const double* wti = wt.data() + i * out;
        for (std::size_t o = 0; o < out; ++o) zr[o] += xi * wti[o];
      }
    }
    Vec& a = trace.post[l + 1];
    if (l + 1 < layers) {
      a.resize(rows * out);
      for (std::size_t k = 0; k < a.size(); ++k) a[k] = z[k] > 0.0 ? z[k] : 0.0;
    } else {
      a = z;
    }
    offset += (in + 1) * out;
  }
  const std::size_t outputs = model.output_size();
  trace.output.resize(rows * outputs);
  const Vec& logits = trace.pre.back();
  for (std::size_t k = 0; k < trace.output.size(); ++k) {
    const double v = logits[k];
    const std::size_t j = k % outputs;
    switch (model.output) {
      case OutputTransform::identity: trace.output[k] = v; break;
      case OutputTransform::logistic: trace.output[k] = logistic(v); break;
      case OutputTransform::tanh_box: {
        const double half = 0.5 * (model.box_high[j] - model.box_low[j]);
        trace.output[k] = model.box_low[j] + half * (std::tanh(v) + 1.0);
        break;
      }
    }
  }
}

void accumulate_gradient_batch(const MlpModel& model, BatchTrace& trace,
                               std::span<const double> upstream, std::span<double> grad_accumulator,
                               GradientAt at) {
  const std::size_t rows = trace.rows;
  const std::size_t outputs = model.output_size();
  require(upstream.size() == rows * outputs, "batch upstream does not match rows x outputs");
  require(grad_accumulator.size() == model.params.size(),
          "gradient accumulator length does not match params");
  const std::size_t layers = model.num_layers();

  Vec& delta = trace.delta;
  delta.assign(upstream.begin(), upstream.end());
  if (at == GradientAt::output && model.output != OutputTransform::identity) {
    const Vec& z = trace.pre.back();
    for (std::size_t k = 0; k < delta.size(); ++k) {
      const std::size_t j = k % outputs;
      if (model.output == OutputTransform::logistic) {
        const double y = trace.output[k];
        delta[k] *= y * (1.0 - y);
      } else {
        const double t = std::tanh(z[k]);
        delta[k] *= 0.5 * (model.box_high[j] - model.box_low[j]) * (1.0 - t * t);
      }
    }
  }

  std::size_t offset = model.params.size();
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = model.layer_sizes[l];
    const std::size_t out = model.layer_sizes[l + 1];
    offset -= (in + 1) * out;
    const double* w = model.params.data() + offset;
    double* gw = grad_accumulator.data() + offset;
    double* gb = gw + in * out;
    const Vec& x = trace.post[l];
    const bool propagate = l > 0;
    Vec& input_delta = trace.input_delta;
    if (propagate) input_delta.assign(rows * in, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.data() + r * in;
      double* idr = propagate ? input_delta.data() + r * in : nullptr;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta[r * out + o];
        if (d == 0.0) continue;
        gb[o] += d;
        double* grow = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) grow[i] += d * xr[i];
        if (propagate) {
          const double* wrow = w + o * in;
          for (std::size_t i = 0; i < in; ++i) idr[i] += d * wrow[i];
        }
      }
    }
    if (propagate) {
      const Vec& z_prev = trace.pre[l - 1];
      for (std::size_t k = 0; k < input_delta.size(); ++k)
        if (!(z_prev[k] > 0.0)) input_delta[k] = 0.0;  // ReLU'(0) = 0
      delta.swap(input_delta);
    }
  }
}

GradBundle backward(const MlpModel& model, std::span<const double> input,
                    std::span<const double> upstream, GradientAt at) {
  const ForwardTrace trace = forward_trace(model, input);
  GradBundle bundle;
  bundle.grad.assign(model.params.size(), 0.0);
  bundle.input_grad = accumulate_gradient(model, trace, upstream, bundle.grad, at);
  bundle.value = trace.output;
  return bundle;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "l2_distance needs equal lengths");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(total);
}

void sgd_step_inplace(MlpModel& model, std::span<const double> grad, double learning_rate,
                      Direction direction) {
  require(learning_rate >= 0.0, "learning rate must be non-negative");
  require(grad.size() == model.params.size(), "gradient length does not match params");
  if (!all_finite(grad)) throw NonFiniteError("non-finite gradient; step rejected");
  const double sign = direction == Direction::ascend ? 1.0 : -1.0;
  for (std::size_t i = 0; i < grad.size(); ++i) model.params[i] += sign * learning_rate * grad[i];
}

MlpModel sgd_step(const MlpModel& model, std::span<const double> grad, double learning_rate,
                  Direction direction) {
  MlpModel updated = model;
  sgd_step_inplace(updated, grad, learning_rate, direction);
  return updated;
}

void adam_step_inplace(MlpModel& model, AdamState& state, std::span<const double> grad,
                       double learning_rate, Direction direction, double beta1, double beta2,
                       double epsilon) {
  require(learning_rate >= 0.0, "learning rate must be non-negative");
  require(grad.size() == model.params.size(), "gradient length does not match params");
  if (!all_finite(grad)) throw NonFiniteError("non-finite gradient; step rejected");
  if (state.first_moment.size() != grad.size()) {
    state.first_moment.assign(grad.size(), 0.0);
    state.second_moment.assign(grad.size(), 0.0);
    state.steps = 0;
  }
  ++state.steps;
  const double sign = direction == Direction::ascend ? 1.0 : -1.0;
  const double correction1 = 1.0 - std::pow(beta1, static_cast<double>(state.steps));
  const double correction2 = 1.0 - std::pow(beta2, static_cast<double>(state.steps));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    state.first_moment[i] = beta1 * state.first_moment[i] + (1.0 - beta1) * grad[i];
    state.second_moment[i] = beta2 * state.second_moment[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double m = state.first_moment[i] / correction1;
    const double v = state.second_moment[i] / correction2;
    model.params[i] += sign * learning_rate * m / (std::sqrt(v) + epsilon);
  }
}

void Optimizer::apply(MlpModel& model, std::span<const double> grad, Direction direction) {
  switch (kind) {
    case OptimizerKind::sgd:
      sgd_step_inplace(model, grad, learning_rate, direction);
      break;
    case OptimizerKind::adam:
      adam_step_inplace(model, adam, grad, learning_rate, direction);
      break;
  }
}

std::string format_hex(double value) {
  char buffer[64];
  auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value, std::chars_format::hex);
  if (ec != std::errc()) throw Error("cannot format value");
  return std::string(buffer, end);
}

double parse_hex(const std::string& token) {
  double value = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  bool negative = false;
  if (first != last && *first == '-') {
    negative = true;
    ++first;
  }
  auto [end, ec] = std::from_chars(first, last, value, std::chars_format::hex);
  if (ec != std::errc() || end != last) throw Error("malformed hex float '" + token + "'");
  return negative ? -value : value;
}

void write_mlp(std::ostream& out, const MlpModel& model) {
  validate(model);
  out << "prefrl-mlp 1\n";
  out << "layers " << model.layer_sizes.size();
  for (std::size_t s : model.layer_sizes) out << ' ' << s;
  out << "\nactivation relu\n";
  out << "output " << transform_name(model.output) << '\n';
  out << "box " << model.box_low.size();
  for (double v : model.box_low) out << ' ' << format_hex(v);
  for (double v : model.box_high) out << ' ' << format_hex(v);
  out << "\nparams " << model.params.size() << '\n';
  for (double p : model.params) out << format_hex(p) << '\n';
}

MlpModel read_mlp(std::istream& in) {
  auto expect = [&](const std::string& keyword) {
    std::string word;
    if (!(in >> word) || word != keyword)
      throw Error("malformed MLP checkpoint: expected '" + keyword + "', got '" + word + "'");
  };
  expect("prefrl-mlp");
  int version = 0;
  in >> version;
  if (version != 1) throw Error("unsupported MLP checkpoint version " + std::to_string(version));
  MlpModel model;
  expect("layers");
  std::size_t n = 0;
  in >> n;
  model.layer_sizes.resize(n);
  for (auto& s : model.layer_sizes) in >> s;
  expect("activation");
  std::string activation;
  in >> activation;
  if (activation != "relu") throw Error("unknown activation '" + activation + "'");
  expect("output");
  std::string transform;
  in >> transform;
  model.output = parse_transform(transform);
  expect("box");
  std::size_t m = 0;
  in >> m;
  std::string token;
  model.box_low.resize(m);
  model.box_high.resize(m);
  for (auto& v : model.box_low) {
    in >> token;
    v = parse_hex(token);
  }
  for (auto& v : model.box_high) {
    in >> token;
    v = parse_hex(token);
  }
  expect("params");
  std::size_t count = 0;
  in >> count;
  model.params.resize(count);
  for (auto& p : model.params) {
    if (!(in >> token)) throw Error("truncated MLP checkpoint");
    p = parse_hex(token);
  }
  validate(model);
  return model;
}

void save_mlp(const std::filesystem::path& path, const MlpModel& model) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  write_mlp(out, model);
}

MlpModel load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  return read_mlp(in);
}

}  // namespace prefrl
