#include "eli/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace eli {
namespace {

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(element_count(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

std::size_t last_dim(Var v) {
  const Shape& s = v.shape();
  return s.empty() ? 1 : s.back();
}

// Lifts a vector to a one-row matrix so every layer can be written batched.
Var as_rows(Var x) { return x.shape().size() == 1 ? reshape(x, {1, x.shape()[0]}) : x; }

Var concat_last(std::initializer_list<Var> parts) {
  const std::size_t axis = parts.begin()->shape().size() - 1;
  return concat(parts, axis);
}

void check_image(const EncoderConfig& cfg, Var image) {
  const Shape& s = image.shape();
  const std::size_t n = cfg.image_size;
  const bool single = s == Shape{3, n, n};
  const bool batch = s.size() == 4 && s[1] == 3 && s[2] == n && s[3] == n;
  if (!single && !batch) {
    throw std::invalid_argument("encoder: expected image [3x" + std::to_string(n) + "x" +
                                std::to_string(n) + "] (optionally batched), got " +
                                shape_string(s));
  }
}

Var flatten(Var x) {
  const Shape& s = x.shape();
  if (s.size() == 3) return reshape(x, {s[0] * s[1] * s[2]});
  return reshape(x, {s[0], s[1] * s[2] * s[3]});
}

}  // namespace

void ParameterStore::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("parameter '" + name + "' already exists");
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

bool ParameterStore::contains(std::string_view name) const {
  for (const auto& n : names_) {
    if (n == name) return true;
  }
  return false;
}

std::size_t ParameterStore::index(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

void ParameterStore::set(std::size_t i, Tensor value) {
  require_same_shape(values_.at(i), value, ("parameter " + names_[i]).c_str());
  values_[i] = std::move(value);
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

BoundParameters::BoundParameters(Graph& graph, const ParameterStore& store, bool trainable)
    : store_(&store) {
  vars_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    vars_.push_back(trainable ? graph.leaf(store.value(i)) : graph.constant(store.value(i)));
  }
}

Var BoundParameters::operator[](std::string_view name) const {
  return vars_[store_->index(name)];
}

void init_dense(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  store.add(prefix + ".weight", uniform({out, in}, bound, rng));
  store.add(prefix + ".bias", uniform({out}, bound, rng));
}

void init_conv(ParameterStore& store, const std::string& prefix, std::size_t in_channels,
               std::size_t out_channels, std::size_t kernel, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  store.add(prefix + ".weight", uniform({out_channels, in_channels, kernel, kernel}, bound, rng));
  store.add(prefix + ".bias", uniform({out_channels}, bound, rng));
}

void init_lstm_cell(ParameterStore& store, const std::string& prefix, std::size_t in,
                    std::size_t units, Rng& rng, double forget_bias) {
  store.add(prefix + ".input_weights",
            uniform({4 * units, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  store.add(prefix + ".recurrent_weights",
            uniform({4 * units, units}, 1.0 / std::sqrt(static_cast<double>(units)), rng));
  std::vector<double> b = uniform({4 * units}, 1.0 / std::sqrt(static_cast<double>(units)), rng)
                              .to_vector();
  for (std::size_t i = units; i < 2 * units; ++i) b[i] = forget_bias;
  store.add(prefix + ".biases", Tensor(Shape{4 * units}, std::move(b)));
}

DenseParams bind_dense(const BoundParameters& p, const std::string& prefix) {
  return {p[prefix + ".weight"], p[prefix + ".bias"]};
}

ConvParams bind_conv(const BoundParameters& p, const std::string& prefix, std::size_t stride,
                     std::size_t padding) {
  return {p[prefix + ".weight"], p[prefix + ".bias"], stride, padding};
}

LstmCellParams bind_lstm_cell(const BoundParameters& p, const std::string& prefix) {
  return {p[prefix + ".input_weights"], p[prefix + ".recurrent_weights"], p[prefix + ".biases"]};
}

Var dense(const DenseParams& params, Var x) {
  const Shape& w = params.weight.shape();
  if (w.size() != 2 || params.bias.shape() != Shape{w[0]}) {
    throw std::invalid_argument("dense: inconsistent parameters " + shape_string(w) + " and " +
                                shape_string(params.bias.shape()));
  }
  if (x.shape().empty() || x.shape().size() > 2 || last_dim(x) != w[1]) {
    throw std::invalid_argument("dense: input " + shape_string(x.shape()) +
                                " does not match weight " + shape_string(w));
  }
  Var y = add_bias(matmul(as_rows(x), params.weight, false, true), params.bias);
  return x.shape().size() == 1 ? reshape(y, {w[0]}) : y;
}

Var lstm_pointwise(Var gates, Var c) {
  const Tensor& a = gates.value();
  const Tensor& cv = c.value();
  const std::size_t units = last_dim(c);
  if (a.rank() != cv.rank() || a.rank() == 0 || last_dim(gates) != 4 * units ||
      a.size() != 4 * cv.size()) {
    throw std::invalid_argument("lstm_pointwise: gates " + shape_string(a.shape()) +
                                " do not match cell " + shape_string(cv.shape()));
  }
  const std::size_t rows = cv.size() / units;
  // act holds i, f, g, o after their nonlinearities; tc holds tanh(c').
  std::vector<double> act(a.size()), tc(cv.size()), out(2 * cv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* pre = a.data() + r * 4 * units;
    double* s = act.data() + r * 4 * units;
    for (std::size_t j = 0; j < units; ++j) {
      s[j] = sigmoid_value(pre[j]);
      s[units + j] = sigmoid_value(pre[units + j]);
      s[2 * units + j] = std::tanh(pre[2 * units + j]);
      s[3 * units + j] = sigmoid_value(pre[3 * units + j]);
      const double c_new = s[units + j] * cv[r * units + j] + s[j] * s[2 * units + j];
      const double t = std::tanh(c_new);
      tc[r * units + j] = t;
      out[r * 2 * units + j] = s[3 * units + j] * t;
      out[r * 2 * units + units + j] = c_new;
    }
  }
  Shape out_shape = cv.shape();
  out_shape.back() = 2 * units;
  return gates.graph->record(
      Tensor::adopt(std::move(out_shape), std::move(out)), {gates, c},
      [act = std::move(act), tc = std::move(tc), cv, rows, units](const Tensor& g,
                                                                  GradSpans grads) {
        auto ga = grads[0];
        auto gc = grads[1];
        for (std::size_t r = 0; r < rows; ++r) {
          const double* s = act.data() + r * 4 * units;
          for (std::size_t j = 0; j < units; ++j) {
            const double i = s[j], f = s[units + j], gg = s[2 * units + j], o = s[3 * units + j];
            const double t = tc[r * units + j];
            const double dh = g[r * 2 * units + j];
            const double dc = g[r * 2 * units + units + j] + dh * o * (1.0 - t * t);
            if (!ga.empty()) {
              double* d = ga.data() + r * 4 * units;
              d[j] += dc * gg * i * (1.0 - i);
              d[units + j] += dc * cv[r * units + j] * f * (1.0 - f);
              d[2 * units + j] += dc * i * (1.0 - gg * gg);
              d[3 * units + j] += dh * t * o * (1.0 - o);
            }
            if (!gc.empty()) gc[r * units + j] += dc * f;
          }
        }
      });
}

LstmOutput lstm_cell_step(const LstmCellParams& params, Var x, Var h, Var c) {
  const Shape& wx = params.input_weights.shape();
  const Shape& wh = params.recurrent_weights.shape();
  if (wx.size() != 2 || wh.size() != 2 || wx[0] % 4 != 0 || wh[0] != wx[0] ||
      wh[1] * 4 != wh[0] || params.biases.shape() != Shape{wx[0]}) {
    throw std::invalid_argument("lstm: inconsistent parameters " + shape_string(wx) + ", " +
                                shape_string(wh) + ", " + shape_string(params.biases.shape()));
  }
  const std::size_t units = wh[1];
  if (last_dim(x) != wx[1] || last_dim(h) != units || h.shape() != c.shape() ||
      x.shape().size() != h.shape().size() || x.shape().size() > 2 ||
      (x.shape().size() == 2 && x.shape()[0] != h.shape()[0])) {
    throw std::invalid_argument("lstm: input " + shape_string(x.shape()) + " with state " +
                                shape_string(h.shape()) + "/" + shape_string(c.shape()) +
                                " does not match weights " + shape_string(wx));
  }
  const bool single = x.shape().size() == 1;
  Var pre = add(matmul(as_rows(x), params.input_weights, false, true),
                matmul(as_rows(h), params.recurrent_weights, false, true));
  pre = add_bias(pre, params.biases);
  Var hc = lstm_pointwise(pre, as_rows(c));
  Var h_new = slice(hc, 1, 0, units);
  Var c_new = slice(hc, 1, units, units);
  if (single) {
    h_new = reshape(h_new, {units});
    c_new = reshape(c_new, {units});
  }
  return {h_new, c_new};
}

std::vector<std::size_t> lstm_input_dims(const StackConfig& cfg) {
  std::vector<std::size_t> dims;
  for (std::size_t n = 0; n < cfg.layers; ++n) {
    if (n == 0) {
      dims.push_back(cfg.joint_dim + cfg.feature_dim);
    } else {
      dims.push_back(cfg.units + (cfg.each_layer_input ? cfg.feature_dim : 0));
    }
  }
  return dims;
}

std::size_t head_input_dim(const StackConfig& cfg) {
  return cfg.units + (cfg.each_layer_input ? cfg.feature_dim : 0);
}

LstmState zero_state(const StackConfig& cfg, std::size_t batch) {
  LstmState s;
  const Shape shape = batch == 0 ? Shape{cfg.units} : Shape{batch, cfg.units};
  for (std::size_t n = 0; n < cfg.layers; ++n) {
    s.h.push_back(Tensor::zeros(shape));
    s.c.push_back(Tensor::zeros(shape));
  }
  return s;
}

LstmVarState constant_state(Graph& graph, const LstmState& state) {
  LstmVarState s;
  for (const auto& t : state.h) s.h.push_back(graph.constant(t));
  for (const auto& t : state.c) s.c.push_back(graph.constant(t));
  return s;
}

LstmState state_values(const LstmVarState& state) {
  LstmState s;
  for (Var v : state.h) s.h.push_back(v.value());
  for (Var v : state.c) s.c.push_back(v.value());
  return s;
}

StackOutput lstm_stack_step(const StackConfig& cfg, const std::vector<LstmCellParams>& cells,
                            Var joint_in, Var z, const LstmVarState& state) {
  if (last_dim(joint_in) != cfg.joint_dim) {
    throw std::invalid_argument("lstm stack: joint input has length " +
                                std::to_string(last_dim(joint_in)) + ", expected " +
                                std::to_string(cfg.joint_dim));
  }
  if (last_dim(z) != cfg.feature_dim) {
    throw std::invalid_argument("lstm stack: image features have length " +
                                std::to_string(last_dim(z)) + ", expected " +
                                std::to_string(cfg.feature_dim));
  }
  if (cells.size() != cfg.layers || state.h.size() != cfg.layers ||
      state.c.size() != cfg.layers) {
    throw std::invalid_argument("lstm stack: expected " + std::to_string(cfg.layers) +
                                " layers of parameters and state");
  }
  StackOutput out;
  Var below = concat_last({joint_in, z});
  for (std::size_t n = 0; n < cfg.layers; ++n) {
    if (n > 0) below = cfg.each_layer_input ? concat_last({out.state.h.back(), z}) : out.state.h.back();
    const LstmOutput step = lstm_cell_step(cells[n], below, state.h[n], state.c[n]);
    out.state.h.push_back(step.h);
    out.state.c.push_back(step.c);
  }
  Var top = out.state.h.back();
  out.features = cfg.each_layer_input ? concat_last({top, z}) : top;
  return out;
}

std::string encoder_kind_name(EncoderConfig::Kind kind) {
  return kind == EncoderConfig::Kind::kCnnMlp ? "cnn_mlp" : "cnn_spatial_softmax";
}

EncoderConfig::Kind parse_encoder_kind(std::string_view name) {
  if (name == "cnn_mlp") return EncoderConfig::Kind::kCnnMlp;
  if (name == "cnn_spatial_softmax") return EncoderConfig::Kind::kCnnSpatialSoftmax;
  throw std::invalid_argument("unknown encoder '" + std::string(name) +
                              "' (cnn_mlp or cnn_spatial_softmax)");
}

namespace {

void check_encoder(const EncoderConfig& cfg) {
  if (cfg.conv_channels.empty()) throw std::invalid_argument("encoder: no conv layers");
  if (cfg.kind == EncoderConfig::Kind::kCnnMlp) {
    std::size_t s = cfg.image_size;
    for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
      if (s % 2 != 0) throw std::invalid_argument("encoder: image size not halvable");
      s /= 2;
    }
    if (cfg.hidden == 0) throw std::invalid_argument("encoder: hidden width is zero");
  } else if (cfg.conv_channels.back() * 2 != cfg.feature_dim) {
    throw std::invalid_argument("encoder: spatial softmax needs " +
                                std::to_string(cfg.feature_dim / 2) + " final channels, got " +
                                std::to_string(cfg.conv_channels.back()));
  }
}

std::size_t flat_width(const EncoderConfig& cfg) {
  const std::size_t s = cfg.image_size >> cfg.conv_channels.size();
  return cfg.conv_channels.back() * s * s;
}

}  // namespace

void init_encoder(ParameterStore& store, const EncoderConfig& cfg, Rng& rng) {
  check_encoder(cfg);
  const bool mlp = cfg.kind == EncoderConfig::Kind::kCnnMlp;
  std::size_t in = 3;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    init_conv(store, "enc.conv" + std::to_string(i), in, cfg.conv_channels[i], mlp ? 4 : 3, rng);
    in = cfg.conv_channels[i];
  }
  if (mlp) {
    init_dense(store, "enc.fc0", flat_width(cfg), cfg.hidden, rng);
    init_dense(store, "enc.fc1", cfg.hidden, cfg.feature_dim, rng);
  }
}

std::vector<std::string> encoder_parameter_names(const EncoderConfig& cfg) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    names.push_back("enc.conv" + std::to_string(i) + ".weight");
    names.push_back("enc.conv" + std::to_string(i) + ".bias");
  }
  if (cfg.kind == EncoderConfig::Kind::kCnnMlp) {
    for (const char* fc : {"enc.fc0", "enc.fc1"}) {
      names.push_back(std::string(fc) + ".weight");
      names.push_back(std::string(fc) + ".bias");
    }
  }
  return names;
}

Var cnn_mlp_encode(const EncoderConfig& cfg, const BoundParameters& p, Var image) {
  check_image(cfg, image);
  Var x = image;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const ConvParams conv = bind_conv(p, "enc.conv" + std::to_string(i), 2, 1);
    x = relu(conv2d(x, conv.weight, conv.bias, conv.stride, conv.padding));
  }
  x = relu(dense(bind_dense(p, "enc.fc0"), flatten(x)));
  return dense(bind_dense(p, "enc.fc1"), x);
}

Var cnn_ss_feature_maps(const EncoderConfig& cfg, const BoundParameters& p, Var image) {
  check_image(cfg, image);
  Var x = image;
  const std::size_t count = cfg.conv_channels.size();
  for (std::size_t i = 0; i < count; ++i) {
    const ConvParams conv = bind_conv(p, "enc.conv" + std::to_string(i), 1, 1);
    x = conv2d(x, conv.weight, conv.bias, conv.stride, conv.padding);
    if (i + 1 < count) x = relu(x);
  }
  return x;
}

Var cnn_ss_encode(const EncoderConfig& cfg, const BoundParameters& p, Var image) {
  return spatial_softmax(cnn_ss_feature_maps(cfg, p, image));
}

Var encode(const EncoderConfig& cfg, const BoundParameters& p, Var image) {
  return cfg.kind == EncoderConfig::Kind::kCnnMlp ? cnn_mlp_encode(cfg, p, image)
                                                  : cnn_ss_encode(cfg, p, image);
}

}  // namespace eli
