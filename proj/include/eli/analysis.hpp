#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "eli/autodiff.hpp"
#include "eli/policy.hpp"

namespace eli::analysis {

enum class Activation { kTanh, kSigmoid, kRelu, kIdentity };

struct ChainLayer {
  Tensor weight;  ///< [out x in]
  Tensor bias;    ///< [out]
  Activation act = Activation::kTanh;
};

/// Plain feed-forward chain y = f_L(... f_1(x)).
struct ChainNet {
  std::vector<ChainLayer> layers;
};

/// Layer widths dims[0] -> dims[1] -> ...; weights U(+-scale/sqrt(in)).
ChainNet random_chain(const std::vector<std::size_t>& dims, Activation act, std::mt19937_64& rng,
                      double scale = 1.0);
Var chain_forward(const ChainNet& net, Var x);
/// Jacobian of one layer at its input: diag(act'(W x + b)) W.
Tensor layer_jacobian(const ChainLayer& layer, const Tensor& x);
/// d y / d x as the explicit product J_L ... J_1 of per-layer Jacobians.
/// Throws when consecutive widths do not chain.
Tensor chain_product_jacobian(const ChainNet& net, const Tensor& x);
/// Largest singular value by power iteration on M^T M.
double spectral_norm(const Tensor& m, std::size_t iterations = 200);

/// A net whose feature z = g(x) feeds layers 1..L:
///   h_n = layer(n, h_{n-1}, z),  y = head(h_L, z),  h_0 = initial(x).
/// The decomposition requires h_0 not to depend on x.
struct InjectionModel {
  std::size_t layers = 0;
  std::function<Var(Graph&, Var x)> encoder;
  std::function<Var(Graph&, Var x)> initial;
  std::function<Var(Graph&, std::size_t n, Var h_prev, Var z)> layer;
  std::function<Var(Graph&, Var h_last, Var z)> head;
};

/// Jacobian d f / d x as [out x in]; zeros when f does not depend on x.
Tensor jacobian_or_zero(const std::function<Var(Graph&, Var)>& f, const Tensor& x);

struct DecompositionReport {
  Tensor direct;                 ///< d y / d x by autodiff
  std::vector<Tensor> terms;     ///< (dy/dh_L) (prod_{i>j} A_i) B_j, j = 1..L
  Tensor head_term;              ///< (dy/dz)(dz/dx); zero when the head ignores z
  std::vector<Tensor> a;         ///< A_n = d h_n / d h_{n-1}
  std::vector<Tensor> b;         ///< B_n = (d h_n / d z)(d z / d x)
  Tensor dz_dx;
  /// The same paths before the encoder: (dy/dh_L)(prod A_i)(d h_j / d z),
  /// plus dy/dz through the head. Their sum is dy/dz.
  std::vector<Tensor> z_terms;
  Tensor z_head;
  double residual = 0.0;         ///< Frobenius norm of direct - sum(terms) - head_term

  Tensor sum() const;
  /// [outputs x (L + 1)]: Euclidean norm of each output row of every term,
  /// head term last.
  std::vector<double> row_norms() const;
  /// term index, Frobenius norm, residual.
  std::string csv() const;
};

/// Builds every A_n and B_n from per-layer Jacobians and compares the sum of
/// path terms to the direct Jacobian. Throws if d h_0 / d x is nonzero.
DecompositionReport each_layer_decomposition(const InjectionModel& model, const Tensor& x);

/// Random tanh injection net: z = tanh(E x + e) (one or more encoder
/// layers), h_n = tanh(W_n h_{n-1} + U_n z + b_n), y = V h_L + c. With
/// inject = false only layer 1 sees z. With h0_weight set the initial state
/// is tanh(H x + h0), which breaks the decomposition premise.
struct InjectionNet {
  std::vector<Tensor> encoder_weights;  ///< encoder layers, each [out x in]
  std::vector<Tensor> encoder_biases;
  Tensor h0;
  std::optional<Tensor> h0_weight;
  std::vector<Tensor> w, u, bias;
  Tensor v, c;
  bool inject = true;
};

InjectionNet random_injection_net(std::size_t in, std::size_t zdim, std::size_t width,
                                  std::size_t layers, std::mt19937_64& rng, bool inject = true,
                                  std::size_t encoder_layers = 1);
InjectionModel injection_model(const InjectionNet& net);
/// The encoder with layer k's weight supplied as a graph value.
Var injection_encoder(const InjectionNet& net, Graph& g, Var x, std::size_t k, Var weight_k);
Var injection_forward(const InjectionNet& net, Graph& g, Var x, std::size_t k, Var weight_k);

struct WeightGradReport {
  Tensor direct;      ///< dE/dW_k by backprop, flattened
  Tensor decomposed;  ///< dE/dy [sum of path terms + head term] dz/dW_k
  double rel_error = 0.0;
};

/// E(y) = 0.5 |y - target|^2; W_k is encoder layer k of `net`.
WeightGradReport weight_grad_decomposition(const InjectionNet& net, const Tensor& x,
                                           const Tensor& target, std::size_t k);

/// One control step of a policy at (image, joints, state) as an
/// InjectionModel over the image [3 x S x S]. h_0 is the joint input; the
/// recurrent state entering each layer is held fixed.
InjectionModel policy_step_model(const Policy& policy, const Tensor& joints_normalized,
                                 const LstmState& state);

struct DepthProfileRow {
  std::size_t layers = 0;
  double baseline = 0.0;   ///< mean encoder gradient norm, baseline stack
  double injection = 0.0;  ///< same for each-layer input
};

struct DepthProfileConfig {
  std::vector<std::size_t> depths = {2, 4, 6, 8};
  std::size_t seeds = 20;
  PolicyConfig policy;  ///< widths; lstm_layers and each_layer_input are overridden
};

/// Encoder gradient norm at initialization for one step from the zero
/// state, loss 0.5 |y - target|^2 on random image, joints and target.
double encoder_grad_norm(const PolicyConfig& cfg, std::uint64_t seed);
std::vector<DepthProfileRow> depth_profile(const DepthProfileConfig& cfg);
std::string depth_profile_csv(const std::vector<DepthProfileRow>& rows);

/// Columns: theta, theta_dot, tau (joint_count each), z, then h_1..h_L and
/// c_1..c_L (units each). Rows: the joint_dim outputs.
struct AttributionMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  ///< row-major, all >= 0
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::size_t joint_count = 0;
  std::size_t feature_dim = 0;
  std::size_t layers = 0;
  std::size_t units = 0;
  std::size_t trials = 0;
  std::size_t steps = 0;
  bool normalized_inputs = true;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// (x_t - x_{t-1}) * rate for t >= 1.
std::vector<std::vector<double>> backward_difference(const std::vector<std::vector<double>>& x,
                                                     double rate);

/// Average over steps t >= 1 of |J_t * xdot_t| where J_t is the Jacobian of
/// the outputs w.r.t. the step inputs (normalized joints, z, entering state)
/// and xdot_t = (x_t - x_{t-1}) * rate. The policy is replayed over the
/// recorded frames and follower records to recover z and the state.
/// Trajectories at another rate (demonstrations) are downsampled to the
/// control rate first. `initial_state` replaces the policy's initial state.
AttributionMatrix attribution_matrix(const Policy& policy, const Trajectory& trajectory,
                                     const LstmState* initial_state = nullptr);
/// The forward pass of attribution_matrix alone: the input vector (columns
/// as in AttributionMatrix) at every step and the state after the last.
struct Replay {
  std::vector<std::vector<double>> inputs;
  LstmState final_state;
};
Replay replay_inputs(const Policy& policy, const Trajectory& trajectory,
                     const LstmState* initial_state = nullptr);

/// Mean over trials of per-trial matrices.
AttributionMatrix average_attribution(const std::vector<AttributionMatrix>& per_trial);

/// Layer-reduced, row-normalized attribution.
struct AttributionReport {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<bool> zero_rows;  ///< rows with no mass, left at zero
  std::size_t z_begin = 0;
  std::size_t z_end = 0;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  /// Mean over rows of the summed z columns.
  double z_mass() const;
  /// Long format: row, column, value.
  std::string csv() const;
  /// Binary PPM, one cell per entry, perceptually uniform ramp.
  std::vector<std::uint8_t> heatmap(std::size_t cell = 8) const;
};

/// h and c blocks reduced to one column per layer by max, then each row
/// divided by its max.
AttributionReport attribution_report(const AttributionMatrix& m);
/// Divides each row by its max; zero rows stay zero.
void normalize_rows(std::vector<double>& values, std::size_t cols, std::vector<bool>* zero_rows = nullptr);

/// Binary PPM of a row-major [rows x cols] grid with values in [0, 1],
/// cell x cell pixels per entry, viridis ramp.
std::vector<std::uint8_t> heatmap_ppm(const std::vector<double>& values, std::size_t rows,
                                      std::size_t cols, std::size_t cell = 8);

struct AttributionComparison {
  double z_mass_with = 0.0;
  double z_mass_without = 0.0;
  double ratio = 0.0;
  AttributionReport with;
  AttributionReport without;
};

AttributionComparison attribution_compare(const AttributionMatrix& with,
                                          const AttributionMatrix& without);

/// Closed-loop rollouts of `policy` in the simulator on every slot, trials
/// per slot (envs seeded as in sim::evaluate), then the averaged matrix.
/// Failed trials are included.
AttributionMatrix evaluate_attribution(const Policy& policy, const std::vector<double>& slots,
                                       std::size_t trials, std::uint64_t seed,
                                       std::size_t threads = 1);

}  // namespace eli::analysis
