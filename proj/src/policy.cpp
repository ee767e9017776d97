#include "eli/policy.hpp"

#include <cmath>
#include <stdexcept>

namespace eli {

StackConfig PolicyConfig::stack() const {
  StackConfig s;
  s.layers = lstm_layers;
  s.units = lstm_units;
  s.joint_dim = joint_dim();
  s.feature_dim = feature_dim;
  s.each_layer_input = each_layer_input;
  return s;
}

void PolicyConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("policy config: " + what); };
  if (lstm_layers == 0) fail("lstm_layers must be positive");
  if (lstm_units == 0) fail("lstm_units must be positive");
  if (joint_count == 0) fail("joint_count must be positive");
  if (feature_dim == 0 || feature_dim % 2 != 0) fail("feature_dim must be positive and even");
  if (!(control_rate > 0.0)) fail("control_rate must be positive");
  if (encoder.feature_dim != feature_dim) fail("encoder feature_dim differs from feature_dim");
  if (fixed_joints.size() != fixed_values.size()) {
    fail("fixed_joints and fixed_values differ in length");
  }
  for (std::size_t j : fixed_joints) {
    if (j >= joint_count) fail("fixed joint index " + std::to_string(j) + " out of range");
  }
}

JointRecord JointRecord::zeros(std::size_t joints, JointRole role) {
  JointRecord r;
  r.angle.assign(joints, 0.0);
  r.velocity.assign(joints, 0.0);
  r.torque.assign(joints, 0.0);
  r.role = role;
  return r;
}

std::vector<double> JointRecord::packed() const {
  std::vector<double> v;
  v.reserve(3 * angle.size());
  v.insert(v.end(), angle.begin(), angle.end());
  v.insert(v.end(), velocity.begin(), velocity.end());
  v.insert(v.end(), torque.begin(), torque.end());
  return v;
}

JointRecord JointRecord::unpack(const std::vector<double>& packed, JointRole role) {
  if (packed.size() % 3 != 0) {
    throw std::invalid_argument("joint record: packed length " + std::to_string(packed.size()) +
                                " is not a multiple of 3");
  }
  const std::size_t n = packed.size() / 3;
  JointRecord r;
  r.angle.assign(packed.begin(), packed.begin() + n);
  r.velocity.assign(packed.begin() + n, packed.begin() + 2 * n);
  r.torque.assign(packed.begin() + 2 * n, packed.end());
  r.role = role;
  return r;
}

NormStats NormStats::fit(const std::vector<std::vector<double>>& rows,
                         const std::vector<bool>& excluded) {
  if (rows.empty()) throw std::invalid_argument("norm stats: no rows");
  const std::size_t d = rows.front().size();
  NormStats s;
  s.mean.assign(d, 0.0);
  s.std.assign(d, 0.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw std::invalid_argument("norm stats: ragged rows");
    for (std::size_t i = 0; i < d; ++i) s.mean[i] += r[i];
  }
  const double n = static_cast<double>(rows.size());
  for (double& m : s.mean) m /= n;
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < d; ++i) s.std[i] += (r[i] - s.mean[i]) * (r[i] - s.mean[i]);
  }
  for (std::size_t i = 0; i < d; ++i) {
    s.std[i] = std::sqrt(s.std[i] / n);
    // constant channels and excluded ones are flagged inactive
    if (s.std[i] <= 1e-12 * std::max(1.0, std::abs(s.mean[i])) ||
        (i < excluded.size() && excluded[i])) {
      s.std[i] = 0.0;
    }
  }
  return s;
}

std::vector<double> NormStats::normalize(const std::vector<double>& v) const {
  if (v.size() != size()) {
    throw std::invalid_argument("normalize: length " + std::to_string(v.size()) + ", stats have " +
                                std::to_string(size()));
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = active(i) ? (v[i] - mean[i]) / std[i] : v[i] - mean[i];
  }
  return out;
}

std::vector<double> NormStats::denormalize(const std::vector<double>& v) const {
  if (v.size() != size()) {
    throw std::invalid_argument("denormalize: length " + std::to_string(v.size()) +
                                ", stats have " + std::to_string(size()));
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = active(i) ? v[i] * std[i] + mean[i] : v[i] + mean[i];
  }
  return out;
}

std::vector<bool> free_channel_mask(const PolicyConfig& cfg) {
  std::vector<bool> mask(cfg.joint_dim(), true);
  for (std::size_t j : cfg.fixed_joints) {
    for (std::size_t k = 0; k < 3; ++k) mask[k * cfg.joint_count + j] = false;
  }
  return mask;
}

ParameterStore init_policy_params(const PolicyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParameterStore store;
  init_encoder(store, cfg.encoder, rng);
  const StackConfig stack = cfg.stack();
  const auto dims = lstm_input_dims(stack);
  for (std::size_t n = 0; n < stack.layers; ++n) {
    init_lstm_cell(store, "lstm" + std::to_string(n), dims[n], stack.units, rng);
  }
  init_dense(store, "head", head_input_dim(stack), cfg.output_dim(), rng);
  return store;
}

LstmState init_state(const PolicyConfig& cfg, std::size_t batch) {
  return zero_state(cfg.stack(), batch);
}

PolicyVars bind_policy(const PolicyConfig& cfg, const BoundParameters& p) {
  PolicyVars v;
  for (std::size_t n = 0; n < cfg.lstm_layers; ++n) {
    v.cells.push_back(bind_lstm_cell(p, "lstm" + std::to_string(n)));
  }
  v.head = bind_dense(p, "head");
  return v;
}

NetworkStep network_step_from_features(const PolicyConfig& cfg, const PolicyVars& vars,
                                       Var joints, Var z, const LstmVarState& state) {
  StackOutput s = lstm_stack_step(cfg.stack(), vars.cells, joints, z, state);
  return {dense(vars.head, s.features), z, std::move(s.state)};
}

NetworkStep network_step(const PolicyConfig& cfg, const BoundParameters& p, Var image, Var joints,
                         const LstmVarState& state) {
  const Var z = encode(cfg.encoder, p, image);
  return network_step_from_features(cfg, bind_policy(cfg, p), joints, z, state);
}

PolicyStepResult policy_step(const Policy& policy, const Tensor& image,
                             const JointRecord& follower, const LstmState& state) {
  const PolicyConfig& cfg = policy.config;
  if (!policy.input_norm || !policy.output_norm) {
    throw std::invalid_argument("policy_step: missing normalization statistics");
  }
  if (follower.joint_count() != cfg.joint_count || follower.velocity.size() != cfg.joint_count ||
      follower.torque.size() != cfg.joint_count) {
    throw std::invalid_argument("policy_step: follower record has " +
                                std::to_string(follower.joint_count()) + " joints, expected " +
                                std::to_string(cfg.joint_count));
  }
  Graph g;
  BoundParameters p(g, policy.params, false);
  const std::vector<double> joints = policy.input_norm->normalize(follower.packed());
  const NetworkStep step =
      network_step(cfg, p, g.constant(image), g.constant(Tensor(Shape{joints.size()}, joints)),
                   constant_state(g, state));
  PolicyStepResult out;
  out.command = JointRecord::unpack(policy.output_norm->denormalize(step.output.value().to_vector()),
                                    JointRole::kLeader);
  for (std::size_t k = 0; k < cfg.fixed_joints.size(); ++k) {
    const std::size_t j = cfg.fixed_joints[k];
    out.command.angle[j] = cfg.fixed_values[k];
    out.command.velocity[j] = 0.0;
    out.command.torque[j] = 0.0;
  }
  out.state = state_values(step.state);
  return out;
}

Tensor frame_to_tensor(const Frame& frame) {
  const std::size_t s = frame.size;
  if (frame.rgb.size() != s * s * 3) {
    throw std::invalid_argument("frame: expected " + std::to_string(s * s * 3) + " bytes, got " +
                                std::to_string(frame.rgb.size()));
  }
  std::vector<double> v(3 * s * s);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        v[(c * s + y) * s + x] = frame.rgb[(y * s + x) * 3 + c] / 255.0;
      }
    }
  }
  return Tensor(Shape{3, s, s}, std::move(v));
}

PolicyController::PolicyController(const Policy& policy)
    : policy_(&policy), state_(init_state(policy.config)) {}

void PolicyController::reset() { state_ = init_state(policy_->config); }

JointRecord PolicyController::act(const Frame& frame, const JointRecord& follower) {
  PolicyStepResult r = policy_step(*policy_, frame_to_tensor(frame), follower, state_);
  state_ = std::move(r.state);
  return r.command;
}

Trajectory rollout(Controller& controller, Environment& env, std::size_t max_steps,
                   double control_rate) {
  Trajectory t;
  t.joint_rate_hz = control_rate;
  t.frame_rate_hz = control_rate;
  controller.reset();
  for (std::size_t step = 0; step < max_steps && !env.terminal(); ++step) {
    try {
      Frame frame = env.render();
      JointRecord follower = env.follower();
      JointRecord command = controller.act(frame, follower);
      command.role = JointRole::kLeader;
      env.apply(command);
      t.frames.push_back(std::move(frame));
      t.follower.push_back(std::move(follower));
      t.leader.push_back(std::move(command));
    } catch (const std::exception& e) {
      throw std::runtime_error("rollout step " + std::to_string(step) + ": " + e.what());
    }
  }
  t.success = env.success();
  return t;
}

}  // namespace eli
