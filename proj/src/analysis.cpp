#include "eli/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "eli/sim.hpp"
#include "eli/training.hpp"

namespace eli::analysis {

namespace {

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-bound, bound);
  std::vector<double> v(element_count(shape));
  for (double& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v));
}

Var activate(Activation act, Var v) {
  switch (act) {
    case Activation::kTanh: return tanh(v);
    case Activation::kSigmoid: return sigmoid(v);
    case Activation::kRelu: return relu(v);
    case Activation::kIdentity: return v;
  }
  return v;
}

double activation_slope(Activation act, double pre) {
  switch (act) {
    case Activation::kTanh: {
      const double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case Activation::kSigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-pre));
      return s * (1.0 - s);
    }
    case Activation::kRelu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::kIdentity: return 1.0;
  }
  return 1.0;
}

Tensor product(const std::vector<Tensor>& factors, std::size_t n) {
  Tensor out = Tensor::eye(n);
  for (const Tensor& f : factors) out = matmul_values(f, out);
  return out;
}

// rows of a are scaled by s
Tensor scale_rows(const Tensor& a, const std::vector<double>& s) {
  std::vector<double> v = a.to_vector();
  const std::size_t cols = a.dim(1);
  for (std::size_t r = 0; r < a.dim(0); ++r) {
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] *= s[r];
  }
  return Tensor::adopt(a.shape(), std::move(v));
}

Var dense_nobias(Graph& g, const Tensor& w, Var x) {
  return dense(DenseParams{g.constant(w), g.constant(Tensor::zeros({w.dim(0)}))}, x);
}

}  // namespace

Tensor jacobian_or_zero(const std::function<Var(Graph&, Var)>& f, const Tensor& x) {
  Graph g;
  const Var in = g.leaf(x);
  const Var out = f(g, in);
  const std::size_t m = out.size(), n = x.size();
  std::vector<double> j(m * n, 0.0);
  if (out.requires_grad()) {
    std::vector<double> seed(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      seed[i] = 1.0;
      const Tensor d = g.backward(out, Tensor(out.shape(), seed)).of(in);
      seed[i] = 0.0;
      std::copy(d.values().begin(), d.values().end(), j.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
  }
  return Tensor::adopt({m, n}, std::move(j));
}

ChainNet random_chain(const std::vector<std::size_t>& dims, Activation act, std::mt19937_64& rng,
                      double scale) {
  if (dims.size() < 2) throw std::invalid_argument("random_chain: need at least two widths");
  ChainNet net;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double bound = scale / std::sqrt(static_cast<double>(dims[l]));
    net.layers.push_back({uniform({dims[l + 1], dims[l]}, bound, rng),
                          uniform({dims[l + 1]}, bound, rng), act});
  }
  return net;
}

Var chain_forward(const ChainNet& net, Var x) {
  Graph& g = *x.graph;
  for (const ChainLayer& l : net.layers) {
    x = activate(l.act, dense(DenseParams{g.constant(l.weight), g.constant(l.bias)}, x));
  }
  return x;
}

Tensor layer_jacobian(const ChainLayer& layer, const Tensor& x) {
  if (layer.weight.rank() != 2 || layer.weight.dim(1) != x.size() ||
      layer.bias.size() != layer.weight.dim(0)) {
    throw std::invalid_argument("layer_jacobian: layer expects " +
                                shape_string(layer.weight.shape()) + " but input has " +
                                std::to_string(x.size()) + " entries");
  }
  const std::size_t out = layer.weight.dim(0), in = x.size();
  std::vector<double> slope(out);
  for (std::size_t r = 0; r < out; ++r) {
    double pre = layer.bias[r];
    for (std::size_t c = 0; c < in; ++c) pre += layer.weight.at(r, c) * x[c];
    slope[r] = activation_slope(layer.act, pre);
  }
  return scale_rows(layer.weight, slope);
}

Tensor chain_product_jacobian(const ChainNet& net, const Tensor& x) {
  if (net.layers.empty()) throw std::invalid_argument("chain_product_jacobian: empty chain");
  std::vector<Tensor> factors;
  Tensor h = x.reshaped({x.size()});
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const ChainLayer& layer = net.layers[l];
    if (layer.weight.rank() != 2 || layer.weight.dim(1) != h.size()) {
      throw std::invalid_argument("chain_product_jacobian: layer " + std::to_string(l + 1) +
                                  " takes " + std::to_string(layer.weight.dim(1)) +
                                  " inputs but receives " + std::to_string(h.size()));
    }
    factors.push_back(layer_jacobian(layer, h));
    Graph g;
    ChainNet one{{layer}};
    h = chain_forward(one, g.constant(h)).value();
  }
  return product(factors, x.size());
}

double spectral_norm(const Tensor& m, std::size_t iterations) {
  if (m.rank() != 2) throw std::invalid_argument("spectral_norm: expected a matrix");
  const std::size_t n = m.dim(1);
  if (n == 0 || m.dim(0) == 0) return 0.0;
  const Tensor mt = transpose_values(m);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i);
  double sigma = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    const Tensor w = matmul_values(mt, matmul_values(m, Tensor::adopt({n, 1}, v)));
    double norm = 0.0;
    for (double x : w.values()) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / norm;
    sigma = std::sqrt(norm);
  }
  return sigma;
}

Tensor DecompositionReport::sum() const {
  Tensor s = head_term;
  for (const Tensor& t : terms) s = s + t;
  return s;
}

std::string DecompositionReport::csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "term,frobenius_norm,residual\n";
  for (std::size_t j = 0; j < terms.size(); ++j) {
    out << "layer" << j + 1 << ',' << frobenius_norm(terms[j]) << ',' << residual << '\n';
  }
  out << "head," << frobenius_norm(head_term) << ',' << residual << '\n';
  out << "direct," << frobenius_norm(direct) << ',' << residual << '\n';
  return out.str();
}

std::vector<double> DecompositionReport::row_norms() const {
  const std::size_t m = direct.dim(0), n = direct.dim(1), k = terms.size() + 1;
  std::vector<double> out(m * k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const Tensor& t = j < terms.size() ? terms[j] : head_term;
    for (std::size_t r = 0; r < m; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += t.at(r, c) * t.at(r, c);
      out[r * k + j] = std::sqrt(s);
    }
  }
  return out;
}

DecompositionReport each_layer_decomposition(const InjectionModel& model, const Tensor& x) {
  if (model.layers == 0) throw std::invalid_argument("decomposition: model has no layers");
  const std::size_t L = model.layers;

  const Tensor d0 = jacobian_or_zero(model.initial, x);
  if (max_abs(d0) > 0.0) {
    throw std::invalid_argument(
        "decomposition: the initial state depends on the input (max |dh0/dx| = " +
        std::to_string(max_abs(d0)) + ")");
  }

  // forward values
  std::vector<Tensor> h;
  Tensor z;
  {
    Graph g;
    const Var in = g.constant(x);
    z = model.encoder(g, in).value();
    Var hv = model.initial(g, in);
    h.push_back(hv.value());
    const Var zc = g.constant(z);
    for (std::size_t n = 1; n <= L; ++n) {
      hv = model.layer(g, n, hv, zc);
      h.push_back(hv.value());
    }
  }

  DecompositionReport r;
  r.dz_dx = jacobian_or_zero(model.encoder, x);
  std::vector<Tensor> c;
  for (std::size_t n = 1; n <= L; ++n) {
    r.a.push_back(jacobian_or_zero(
        [&](Graph& g, Var hp) { return model.layer(g, n, hp, g.constant(z)); }, h[n - 1]));
    c.push_back(jacobian_or_zero(
        [&](Graph& g, Var zv) { return model.layer(g, n, g.constant(h[n - 1]), zv); }, z));
    r.b.push_back(matmul_values(c.back(), r.dz_dx));
  }
  const Tensor yh =
      jacobian_or_zero([&](Graph& g, Var hl) { return model.head(g, hl, g.constant(z)); }, h[L]);
  r.z_head =
      jacobian_or_zero([&](Graph& g, Var zv) { return model.head(g, g.constant(h[L]), zv); }, z);
  r.head_term = matmul_values(r.z_head, r.dz_dx);

  // suffix products A_L ... A_{j+1}
  Tensor suffix = yh;
  r.z_terms.assign(L, Tensor());
  r.terms.assign(L, Tensor());
  for (std::size_t j = L; j-- > 0;) {
    r.z_terms[j] = matmul_values(suffix, c[j]);
    r.terms[j] = matmul_values(suffix, r.b[j]);
    suffix = matmul_values(suffix, r.a[j]);
  }

  r.direct = jacobian_or_zero(
      [&](Graph& g, Var in) {
        const Var zv = model.encoder(g, in);
        Var hv = model.initial(g, in);
        for (std::size_t n = 1; n <= L; ++n) hv = model.layer(g, n, hv, zv);
        return model.head(g, hv, zv);
      },
      x);
  r.residual = frobenius_norm(r.direct - r.sum());
  return r;
}

InjectionNet random_injection_net(std::size_t in, std::size_t zdim, std::size_t width,
                                  std::size_t layers, std::mt19937_64& rng, bool inject,
                                  std::size_t encoder_layers) {
  if (layers == 0 || encoder_layers == 0) {
    throw std::invalid_argument("random_injection_net: need at least one layer");
  }
  InjectionNet net;
  net.inject = inject;
  std::size_t prev = in;
  for (std::size_t k = 0; k < encoder_layers; ++k) {
    const double b = 1.5 / std::sqrt(static_cast<double>(prev));
    net.encoder_weights.push_back(uniform({zdim, prev}, b, rng));
    net.encoder_biases.push_back(uniform({zdim}, 0.1, rng));
    prev = zdim;
  }
  net.h0 = uniform({width}, 0.5, rng);
  for (std::size_t n = 0; n < layers; ++n) {
    net.w.push_back(uniform({width, width}, 1.5 / std::sqrt(static_cast<double>(width)), rng));
    net.u.push_back(uniform({width, zdim}, 1.5 / std::sqrt(static_cast<double>(zdim)), rng));
    net.bias.push_back(uniform({width}, 0.1, rng));
  }
  net.v = uniform({width / 2 + 1, width}, 1.0 / std::sqrt(static_cast<double>(width)), rng);
  net.c = uniform({width / 2 + 1}, 0.1, rng);
  return net;
}

Var injection_encoder(const InjectionNet& net, Graph& g, Var x, std::size_t k, Var weight_k) {
  Var z = x;
  for (std::size_t l = 0; l < net.encoder_weights.size(); ++l) {
    const Var w = l == k ? weight_k : g.constant(net.encoder_weights[l]);
    z = tanh(dense(DenseParams{w, g.constant(net.encoder_biases[l])}, z));
  }
  return z;
}

InjectionModel injection_model(const InjectionNet& net) {
  InjectionModel m;
  m.layers = net.w.size();
  m.encoder = [&net](Graph& g, Var x) {
    return injection_encoder(net, g, x, 0, g.constant(net.encoder_weights[0]));
  };
  m.initial = [&net](Graph& g, Var x) {
    if (!net.h0_weight) return g.constant(net.h0);
    return tanh(dense(DenseParams{g.constant(*net.h0_weight), g.constant(net.h0)}, x));
  };
  m.layer = [&net](Graph& g, std::size_t n, Var h, Var z) {
    Var pre = dense(DenseParams{g.constant(net.w[n - 1]), g.constant(net.bias[n - 1])}, h);
    if (net.inject || n == 1) pre = add(pre, dense_nobias(g, net.u[n - 1], z));
    return tanh(pre);
  };
  m.head = [&net](Graph& g, Var h, Var) {
    return dense(DenseParams{g.constant(net.v), g.constant(net.c)}, h);
  };
  return m;
}

Var injection_forward(const InjectionNet& net, Graph& g, Var x, std::size_t k, Var weight_k) {
  const InjectionModel m = injection_model(net);
  const Var z = injection_encoder(net, g, x, k, weight_k);
  Var h = m.initial(g, x);
  for (std::size_t n = 1; n <= m.layers; ++n) h = m.layer(g, n, h, z);
  return m.head(g, h, z);
}

WeightGradReport weight_grad_decomposition(const InjectionNet& net, const Tensor& x,
                                           const Tensor& target, std::size_t k) {
  if (k >= net.encoder_weights.size()) {
    throw std::invalid_argument("weight_grad_decomposition: encoder has " +
                                std::to_string(net.encoder_weights.size()) + " layers, asked for " +
                                std::to_string(k));
  }
  const Tensor& wk = net.encoder_weights[k];
  WeightGradReport r;
  Tensor y;
  {
    Graph g;
    const Var w = g.leaf(wk);
    const Var out = injection_forward(net, g, g.constant(x), k, w);
    if (out.size() != target.size()) {
      throw std::invalid_argument("weight_grad_decomposition: target has " +
                                  std::to_string(target.size()) + " entries, output " +
                                  std::to_string(out.size()));
    }
    y = out.value();
    const Var e = scale(sum(square(sub(out, g.constant(target.reshaped(out.shape()))))), 0.5);
    r.direct = g.backward(e).of(w).reshaped({wk.size()});
  }

  const DecompositionReport d = each_layer_decomposition(injection_model(net), x);
  Tensor m = d.z_head;
  for (const Tensor& t : d.z_terms) m = m + t;
  const Tensor dz_dw = jacobian_or_zero(
      [&](Graph& g, Var w) {
        return injection_encoder(net, g, g.constant(x), k, reshape(w, wk.shape()));
      },
      wk.reshaped({wk.size()}));
  const Tensor ge = (y - target.reshaped(y.shape())).reshaped({1, y.size()});
  r.decomposed = matmul_values(matmul_values(ge, m), dz_dw).reshaped({wk.size()});
  const double n = frobenius_norm(r.direct);
  r.rel_error = frobenius_norm(r.direct - r.decomposed) / (n > 0.0 ? n : 1.0);
  return r;
}

InjectionModel policy_step_model(const Policy& policy, const Tensor& joints_normalized,
                                 const LstmState& state) {
  const PolicyConfig cfg = policy.config;
  if (joints_normalized.size() != cfg.joint_dim()) {
    throw std::invalid_argument("policy_step_model: joints have " +
                                std::to_string(joints_normalized.size()) + " entries, expected " +
                                std::to_string(cfg.joint_dim()));
  }
  if (state.h.size() != cfg.lstm_layers || state.c.size() != cfg.lstm_layers) {
    throw std::invalid_argument("policy_step_model: state has the wrong number of layers");
  }
  const ParameterStore* params = &policy.params;
  InjectionModel m;
  m.layers = cfg.lstm_layers;
  m.encoder = [cfg, params](Graph& g, Var image) {
    BoundParameters p(g, *params, false);
    return encode(cfg.encoder, p, image);
  };
  m.initial = [joints_normalized](Graph& g, Var) { return g.constant(joints_normalized); };
  m.layer = [cfg, params, state](Graph& g, std::size_t n, Var h, Var z) {
    BoundParameters p(g, *params, false);
    const PolicyVars vars = bind_policy(cfg, p);
    const Var in = (n == 1 || cfg.each_layer_input) ? concat({h, z}, 0) : h;
    return lstm_cell_step(vars.cells[n - 1], in, g.constant(state.h[n - 1]),
                          g.constant(state.c[n - 1]))
        .h;
  };
  m.head = [cfg, params](Graph& g, Var h, Var z) {
    BoundParameters p(g, *params, false);
    const PolicyVars vars = bind_policy(cfg, p);
    return dense(vars.head, cfg.each_layer_input ? concat({h, z}, 0) : h);
  };
  return m;
}

double encoder_grad_norm(const PolicyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const ParameterStore params = init_policy_params(cfg, seed);
  std::mt19937_64 rng(sim::mix_seed(seed, 0x9a7e));
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t s = cfg.encoder.image_size;
  std::vector<double> image(3 * s * s), joints(cfg.joint_dim()), target(cfg.output_dim());
  for (double& v : image) v = pixel(rng);
  for (double& v : joints) v = normal(rng);
  for (double& v : target) v = normal(rng);

  Graph g;
  BoundParameters p(g, params, true);
  const NetworkStep step =
      network_step(cfg, p, g.constant(Tensor({3, s, s}, image)),
                   g.constant(Tensor({joints.size()}, joints)), constant_state(g, init_state(cfg)));
  const Var loss =
      scale(sum(square(sub(step.output, g.constant(Tensor({target.size()}, target))))), 0.5);
  const Gradients grads = g.backward(loss);
  double sq = 0.0;
  for (const std::string& name : encoder_parameter_names(cfg.encoder)) {
    const Tensor d = grads.of(p[name]);
    for (double v : d.values()) sq += v * v;
  }
  return std::sqrt(sq);
}

std::vector<DepthProfileRow> depth_profile(const DepthProfileConfig& cfg) {
  if (cfg.seeds == 0 || cfg.depths.empty()) {
    throw std::invalid_argument("depth_profile: need depths and at least one seed");
  }
  std::vector<DepthProfileRow> rows;
  for (std::size_t depth : cfg.depths) {
    DepthProfileRow row;
    row.layers = depth;
    for (int each = 0; each < 2; ++each) {
      PolicyConfig pc = cfg.policy;
      pc.lstm_layers = depth;
      pc.each_layer_input = each == 1;
      double total = 0.0;
      for (std::size_t s = 0; s < cfg.seeds; ++s) total += encoder_grad_norm(pc, s + 1);
      (each ? row.injection : row.baseline) = total / static_cast<double>(cfg.seeds);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string depth_profile_csv(const std::vector<DepthProfileRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "layers,baseline,each_layer_input,ratio\n";
  for (const auto& r : rows) {
    out << r.layers << ',' << r.baseline << ',' << r.injection << ','
        << (r.baseline > 0.0 ? r.injection / r.baseline : 0.0) << '\n';
  }
  return out.str();
}

namespace {

AttributionMatrix empty_matrix(const PolicyConfig& cfg) {
  AttributionMatrix m;
  m.joint_count = cfg.joint_count;
  m.feature_dim = cfg.feature_dim;
  m.layers = cfg.lstm_layers;
  m.units = cfg.lstm_units;
  m.rows = cfg.output_dim();
  m.cols = cfg.joint_dim() + cfg.feature_dim + 2 * cfg.lstm_layers * cfg.lstm_units;
  m.values.assign(m.rows * m.cols, 0.0);
  static const char* kinds[] = {"theta", "theta_dot", "tau"};
  for (const char* k : kinds) {
    for (std::size_t j = 0; j < cfg.joint_count; ++j) {
      m.row_labels.push_back(std::string(k) + "_" + std::to_string(j));
    }
  }
  m.col_labels = m.row_labels;
  for (std::size_t i = 0; i < cfg.feature_dim; ++i) m.col_labels.push_back("z_" + std::to_string(i));
  for (const char* k : {"h", "c"}) {
    for (std::size_t n = 0; n < cfg.lstm_layers; ++n) {
      for (std::size_t u = 0; u < cfg.lstm_units; ++u) {
        m.col_labels.push_back(std::string(k) + std::to_string(n + 1) + "_" + std::to_string(u));
      }
    }
  }
  return m;
}

// z for every frame, batched through the encoder
std::vector<Tensor> encode_frames(const Policy& policy, const std::vector<Frame>& frames) {
  const EncoderConfig& enc = policy.config.encoder;
  const std::size_t s = enc.image_size, px = 3 * s * s;
  constexpr std::size_t kChunk = 32;
  std::vector<Tensor> out;
  for (std::size_t b = 0; b < frames.size(); b += kChunk) {
    const std::size_t n = std::min(kChunk, frames.size() - b);
    std::vector<double> v;
    v.reserve(n * px);
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor t = frame_to_tensor(frames[b + i]);
      if (t.size() != px) throw std::invalid_argument("attribution: frame size does not match encoder");
      v.insert(v.end(), t.values().begin(), t.values().end());
    }
    Graph g;
    BoundParameters p(g, policy.params, false);
    const Tensor z = encode(enc, p, g.constant(Tensor({n, 3, s, s}, std::move(v)))).value();
    const std::size_t f = z.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(Tensor::adopt({f}, std::vector<double>(z.data() + i * f, z.data() + (i + 1) * f)));
    }
  }
  return out;
}

}  // namespace

std::vector<std::vector<double>> backward_difference(const std::vector<std::vector<double>>& x,
                                                     double rate) {
  if (x.size() < 2) throw std::invalid_argument("backward_difference: need at least 2 samples");
  std::vector<std::vector<double>> out;
  for (std::size_t t = 1; t < x.size(); ++t) {
    if (x[t].size() != x[t - 1].size()) {
      throw std::invalid_argument("backward_difference: sample sizes differ");
    }
    std::vector<double> d(x[t].size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = (x[t][i] - x[t - 1][i]) * rate;
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

// Shared by attribution and replay so both see bitwise the same inputs.
// Without `m` only the forward pass runs.
LstmState attribution_pass(const Policy& policy, const Trajectory& recorded, const LstmState* initial_state,
                           AttributionMatrix* out, std::vector<std::vector<double>>* inputs) {
  const PolicyConfig& cfg = policy.config;
  if (!policy.input_norm || !policy.output_norm) {
    throw std::invalid_argument("attribution: policy has no normalization statistics");
  }
  // demonstrations come at the joint rate; bring them to the control rate
  const Trajectory trajectory = recorded.joint_rate_hz == cfg.control_rate &&
                                        recorded.frame_rate_hz == cfg.control_rate
                                    ? recorded
                                    : train::downsample(recorded, cfg.control_rate);
  const std::size_t T = std::min(trajectory.follower.size(), trajectory.frames.size());
  if (T < 2) {
    throw std::invalid_argument("attribution: trajectory has " + std::to_string(T) +
                                " steps, need at least 2");
  }
  AttributionMatrix scratch = empty_matrix(cfg);
  AttributionMatrix& m = out ? *out : scratch;
  m = empty_matrix(cfg);
  m.trials = 1;
  m.steps = T - 1;
  const std::size_t jd = cfg.joint_dim(), fd = cfg.feature_dim, L = cfg.lstm_layers,
                    U = cfg.lstm_units, cols = m.cols, rows = m.rows;
  const std::vector<Tensor> zs =
      encode_frames(policy, std::vector<Frame>(trajectory.frames.begin(),
                                               trajectory.frames.begin() + static_cast<std::ptrdiff_t>(T)));

  LstmState state = initial_state ? *initial_state : init_state(cfg);
  std::vector<double> prev;
  std::vector<double> seed(rows, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> x = policy.input_norm->normalize(trajectory.follower[t].packed());
    x.insert(x.end(), zs[t].values().begin(), zs[t].values().end());
    for (const Tensor& h : state.h) x.insert(x.end(), h.values().begin(), h.values().end());
    for (const Tensor& c : state.c) x.insert(x.end(), c.values().begin(), c.values().end());

    Graph g;
    BoundParameters p(g, policy.params, false);
    const PolicyVars vars = bind_policy(cfg, p);
    const Var in = g.leaf(Tensor({cols}, x));
    LstmVarState s;
    for (std::size_t n = 0; n < L; ++n) {
      s.h.push_back(slice(in, 0, jd + fd + n * U, U));
      s.c.push_back(slice(in, 0, jd + fd + (L + n) * U, U));
    }
    const NetworkStep step =
        network_step_from_features(cfg, vars, slice(in, 0, 0, jd), slice(in, 0, jd, fd), s);
    if (out && t > 0) {
      const std::vector<double> xdot =
          backward_difference({prev, x}, trajectory.joint_rate_hz).front();
      for (std::size_t r = 0; r < rows; ++r) {
        seed[r] = 1.0;
        const Tensor d = g.backward(step.output, Tensor({rows}, seed)).of(in);
        seed[r] = 0.0;
        double* row = m.values.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += std::abs(d[c] * xdot[c]);
      }
    }
    state = state_values(step.state);
    if (inputs) inputs->push_back(x);
    prev = std::move(x);
  }
  for (double& v : m.values) v /= static_cast<double>(T - 1);
  return state;
}

}  // namespace

AttributionMatrix attribution_matrix(const Policy& policy, const Trajectory& trajectory,
                                     const LstmState* initial_state) {
  AttributionMatrix m;
  attribution_pass(policy, trajectory, initial_state, &m, nullptr);
  return m;
}

Replay replay_inputs(const Policy& policy, const Trajectory& trajectory, const LstmState* initial_state) {
  Replay r;
  r.final_state = attribution_pass(policy, trajectory, initial_state, nullptr, &r.inputs);
  return r;
}

AttributionMatrix average_attribution(const std::vector<AttributionMatrix>& per_trial) {
  if (per_trial.empty()) throw std::invalid_argument("average_attribution: no trials");
  AttributionMatrix out = per_trial.front();
  out.trials = 0;
  out.steps = 0;
  std::fill(out.values.begin(), out.values.end(), 0.0);
  for (const AttributionMatrix& m : per_trial) {
    if (m.rows != out.rows || m.cols != out.cols) {
      throw std::invalid_argument("average_attribution: matrices differ in shape");
    }
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += m.values[i];
    out.trials += m.trials;
    out.steps += m.steps;
  }
  for (double& v : out.values) v /= static_cast<double>(per_trial.size());
  return out;
}

void normalize_rows(std::vector<double>& values, std::size_t cols, std::vector<bool>* zero_rows) {
  if (cols == 0) return;
  const std::size_t rows = values.size() / cols;
  if (zero_rows) zero_rows->assign(rows, false);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = values.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    if (mx <= 0.0) {
      if (zero_rows) (*zero_rows)[r] = true;
      continue;
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= mx;
  }
}

AttributionReport attribution_report(const AttributionMatrix& m) {
  AttributionReport r;
  const std::size_t head = 3 * m.joint_count + m.feature_dim;
  r.rows = m.rows;
  r.cols = head + 2 * m.layers;
  r.z_begin = 3 * m.joint_count;
  r.z_end = head;
  r.row_labels = m.row_labels;
  r.col_labels.assign(m.col_labels.begin(), m.col_labels.begin() + static_cast<std::ptrdiff_t>(head));
  for (const char* k : {"h", "c"}) {
    for (std::size_t n = 0; n < m.layers; ++n) r.col_labels.push_back(k + std::to_string(n + 1));
  }
  r.values.assign(r.rows * r.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t c = 0; c < head; ++c) r.values[i * r.cols + c] = m.at(i, c);
    for (std::size_t b = 0; b < 2 * m.layers; ++b) {
      double mx = 0.0;
      for (std::size_t u = 0; u < m.units; ++u) mx = std::max(mx, m.at(i, head + b * m.units + u));
      r.values[i * r.cols + head + b] = mx;
    }
  }
  normalize_rows(r.values, r.cols, &r.zero_rows);
  return r;
}

double AttributionReport::z_mass() const {
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!zero_rows.empty() && zero_rows[i]) continue;
    for (std::size_t c = z_begin; c < z_end; ++c) total += at(i, c);
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

std::string AttributionReport::csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "row,column,value\n";
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < cols; ++c) {
      out << row_labels[i] << ',' << col_labels[c] << ',' << at(i, c) << '\n';
    }
  }
  return out.str();
}

std::vector<std::uint8_t> heatmap_ppm(const std::vector<double>& values, std::size_t rows,
                                      std::size_t cols, std::size_t cell) {
  if (cell == 0) throw std::invalid_argument("heatmap: cell size must be positive");
  if (values.size() != rows * cols) throw std::invalid_argument("heatmap: size mismatch");
  // viridis anchors
  static const double ramp[5][3] = {
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  const std::size_t w = cols * cell, h = rows * cell;
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + w * h * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = std::clamp(values[(y / cell) * cols + x / cell], 0.0, 1.0) * 4.0;
      const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(v), 3);
      const double f = v - static_cast<double>(k);
      for (int ch = 0; ch < 3; ++ch) {
        out.push_back(static_cast<std::uint8_t>(
            std::lround(ramp[k][ch] + f * (ramp[k + 1][ch] - ramp[k][ch]))));
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> AttributionReport::heatmap(std::size_t cell) const {
  return heatmap_ppm(values, rows, cols, cell);
}

AttributionComparison attribution_compare(const AttributionMatrix& with,
                                          const AttributionMatrix& without) {
  if (with.joint_count != without.joint_count || with.feature_dim != without.feature_dim ||
      with.rows != without.rows) {
    throw std::invalid_argument("attribution_compare: models differ in joint count or feature size (" +
                                std::to_string(with.joint_count) + "/" +
                                std::to_string(with.feature_dim) + " vs " +
                                std::to_string(without.joint_count) + "/" +
                                std::to_string(without.feature_dim) + ")");
  }
  AttributionComparison c;
  c.with = attribution_report(with);
  c.without = attribution_report(without);
  c.z_mass_with = c.with.z_mass();
  c.z_mass_without = c.without.z_mass();
  if (c.z_mass_without > 0.0) {
    c.ratio = c.z_mass_with / c.z_mass_without;
  } else {
    c.ratio = c.z_mass_with > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  }
  return c;
}

AttributionMatrix evaluate_attribution(const Policy& policy, const std::vector<double>& slots,
                                       std::size_t trials, std::uint64_t seed, std::size_t threads) {
  if (trials == 0 || slots.empty()) {
    throw std::invalid_argument("evaluate_attribution: need slots and at least one trial");
  }
  std::vector<AttributionMatrix> per_trial(slots.size() * trials);
  sim::parallel_for(per_trial.size(), threads, [&](std::size_t job) {
    const std::size_t i = job / trials, k = job % trials;
    sim::SimEnv env(slots[i], sim::mix_seed(seed, i, k));
    PolicyController controller(policy);
    const Trajectory t =
        rollout(controller, env, static_cast<std::size_t>(-1), policy.config.control_rate);
    per_trial[job] = attribution_matrix(policy, t);
  });
  return average_attribution(per_trial);
}

}  // namespace eli::analysis
