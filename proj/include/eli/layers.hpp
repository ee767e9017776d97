#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "eli/autodiff.hpp"
#include "eli/ops.hpp"

namespace eli {

/// Named parameter tensors in insertion order. Names are unique.
class ParameterStore {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  std::size_t index(std::string_view name) const;
  const Tensor& get(std::string_view name) const { return values_[index(name)]; }
  void set(std::size_t i, Tensor value);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  /// Total scalar count.
  std::size_t parameter_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// A store placed into a graph, as leaves (trainable) or constants.
class BoundParameters {
 public:
  BoundParameters(Graph& graph, const ParameterStore& store, bool trainable);
  Var operator[](std::string_view name) const;
  Var at(std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }

 private:
  const ParameterStore* store_;
  std::vector<Var> vars_;
};

using Rng = std::mt19937_64;

struct DenseParams {
  Var weight;  // [out x in]
  Var bias;    // [out]
};

struct ConvParams {
  Var weight;  // [F x C x k x k]
  Var bias;    // [F]
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Gate rows ordered input, forget, cell, output.
struct LstmCellParams {
  Var input_weights;      // [4u x in]
  Var recurrent_weights;  // [4u x u]
  Var biases;             // [4u]
};

/// Uniform in +-1/sqrt(fan_in) for weight and bias.
void init_dense(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                Rng& rng);
void init_conv(ParameterStore& store, const std::string& prefix, std::size_t in_channels,
               std::size_t out_channels, std::size_t kernel, Rng& rng);
/// Weights uniform in +-1/sqrt(columns); gate biases +-1/sqrt(units) except
/// the forget gate, which starts at `forget_bias`.
void init_lstm_cell(ParameterStore& store, const std::string& prefix, std::size_t in,
                    std::size_t units, Rng& rng, double forget_bias = 1.0);

DenseParams bind_dense(const BoundParameters& p, const std::string& prefix);
ConvParams bind_conv(const BoundParameters& p, const std::string& prefix, std::size_t stride,
                     std::size_t padding);
LstmCellParams bind_lstm_cell(const BoundParameters& p, const std::string& prefix);

/// weight . x + bias for x [in] or a batch [B x in].
Var dense(const DenseParams& params, Var x);

/// Fused gate nonlinearity and memory update. gates [.. x 4u] are the
/// pre-activations, c [.. x u]. Returns [.. x 2u] holding (h', c').
Var lstm_pointwise(Var gates, Var c);

struct LstmOutput {
  Var h;
  Var c;
};

/// One cell step; x [in] with h, c [u], or batched with a leading B axis.
LstmOutput lstm_cell_step(const LstmCellParams& params, Var x, Var h, Var c);

struct StackConfig {
  std::size_t layers = 6;
  std::size_t units = 400;
  std::size_t joint_dim = 24;
  std::size_t feature_dim = 32;
  bool each_layer_input = true;
};

/// Input width of every layer, bottom first.
std::vector<std::size_t> lstm_input_dims(const StackConfig& cfg);
/// Width of the feature vector the stack hands to the output head.
std::size_t head_input_dim(const StackConfig& cfg);

/// Recurrent state as plain values, one (h, c) pair per layer.
struct LstmState {
  std::vector<Tensor> h;
  std::vector<Tensor> c;
};

/// Recurrent state inside a graph.
struct LstmVarState {
  std::vector<Var> h;
  std::vector<Var> c;
};

LstmState zero_state(const StackConfig& cfg, std::size_t batch = 0);
LstmVarState constant_state(Graph& graph, const LstmState& state);
LstmState state_values(const LstmVarState& state);

struct StackOutput {
  Var features;
  LstmVarState state;
};

/// Layer 1 sees concat(joint_in, z). Upper layers see concat(h_{n-1}, z) in
/// each-layer-input mode, else h_{n-1}. The head feature is concat(h_L, z)
/// or h_L likewise.
StackOutput lstm_stack_step(const StackConfig& cfg, const std::vector<LstmCellParams>& cells,
                            Var joint_in, Var z, const LstmVarState& state);

struct EncoderConfig {
  enum class Kind { kCnnMlp, kCnnSpatialSoftmax };
  Kind kind = Kind::kCnnMlp;
  /// kCnnMlp: three 4x4 stride-2 convs. kCnnSpatialSoftmax: 3x3 stride-1
  /// convs, last one must have feature_dim / 2 channels.
  std::vector<std::size_t> conv_channels = {16, 32, 64};
  /// Hidden dense width for kCnnMlp.
  std::size_t hidden = 1024;
  std::size_t feature_dim = 32;
  std::size_t image_size = 64;
};

std::string encoder_kind_name(EncoderConfig::Kind kind);
EncoderConfig::Kind parse_encoder_kind(std::string_view name);

void init_encoder(ParameterStore& store, const EncoderConfig& cfg, Rng& rng);

/// image [3 x S x S] -> [feature_dim], or [N x 3 x S x S] -> [N x feature_dim].
Var encode(const EncoderConfig& cfg, const BoundParameters& p, Var image);
Var cnn_mlp_encode(const EncoderConfig& cfg, const BoundParameters& p, Var image);
Var cnn_ss_encode(const EncoderConfig& cfg, const BoundParameters& p, Var image);
/// The conv stack of cnn_ss_encode without the final spatial softmax.
Var cnn_ss_feature_maps(const EncoderConfig& cfg, const BoundParameters& p, Var image);

/// Parameter names used by the encoder, in store order.
std::vector<std::string> encoder_parameter_names(const EncoderConfig& cfg);

}  // namespace eli
