#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eli/layers.hpp"

namespace eli {

struct PolicyConfig {
  EncoderConfig encoder;
  bool each_layer_input = true;
  std::size_t lstm_layers = 6;
  std::size_t lstm_units = 400;
  std::size_t joint_count = 8;
  std::size_t feature_dim = 32;
  double control_rate = 50.0;
  /// Joints held by position control: overridden at the output, excluded
  /// from the loss and from normalization.
  std::vector<std::size_t> fixed_joints;
  std::vector<double> fixed_values;

  std::size_t joint_dim() const { return 3 * joint_count; }
  std::size_t input_dim() const { return joint_dim() + feature_dim; }
  std::size_t output_dim() const { return joint_dim(); }
  StackConfig stack() const;
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

enum class JointRole { kLeader, kFollower };

/// Per-joint angle [rad], angular velocity [rad/s] and torque [N m].
struct JointRecord {
  std::vector<double> angle;
  std::vector<double> velocity;
  std::vector<double> torque;
  JointRole role = JointRole::kFollower;

  static JointRecord zeros(std::size_t joints, JointRole role = JointRole::kFollower);
  /// Packed [angle..., velocity..., torque...].
  std::vector<double> packed() const;
  static JointRecord unpack(const std::vector<double>& packed, JointRole role);
  std::size_t joint_count() const { return angle.size(); }
};

/// Per-dimension statistics; dimensions with zero spread are inactive and
/// pass through as v - mean.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  static NormStats fit(const std::vector<std::vector<double>>& rows,
                       const std::vector<bool>& excluded = {});
  bool active(std::size_t i) const { return std[i] > 0.0; }
  std::size_t size() const { return mean.size(); }
  std::vector<double> normalize(const std::vector<double>& v) const;
  std::vector<double> denormalize(const std::vector<double>& v) const;
};

/// Mask over the packed joint vector: false for every channel of a fixed
/// joint.
std::vector<bool> free_channel_mask(const PolicyConfig& cfg);

struct Policy {
  PolicyConfig config;
  ParameterStore params;
  std::optional<NormStats> input_norm;
  std::optional<NormStats> output_norm;
};

/// Fresh parameters for cfg; deterministic in seed.
ParameterStore init_policy_params(const PolicyConfig& cfg, std::uint64_t seed);

LstmState init_state(const PolicyConfig& cfg, std::size_t batch = 0);

/// The differentiable network body, all in normalized units.
struct NetworkStep {
  Var output;  // [.. x joint_dim]
  Var z;       // [.. x feature_dim]
  LstmVarState state;
};

struct PolicyVars {
  std::vector<LstmCellParams> cells;
  DenseParams head;
};

PolicyVars bind_policy(const PolicyConfig& cfg, const BoundParameters& p);

NetworkStep network_step_from_features(const PolicyConfig& cfg, const PolicyVars& vars,
                                       Var joints, Var z, const LstmVarState& state);
NetworkStep network_step(const PolicyConfig& cfg, const BoundParameters& p, Var image, Var joints,
                         const LstmVarState& state);

struct PolicyStepResult {
  JointRecord command;
  LstmState state;
};

/// One closed-loop step: normalize, run the network, denormalize, apply the
/// fixed-joint override. image is [3 x S x S] in [0, 1].
PolicyStepResult policy_step(const Policy& policy, const Tensor& image,
                             const JointRecord& follower, const LstmState& state);

/// 8-bit RGB frame, row-major height x width x 3.
struct Frame {
  std::size_t size = 64;
  std::vector<std::uint8_t> rgb;
};

/// [3 x S x S] tensor with values rgb / 255.
Tensor frame_to_tensor(const Frame& frame);

/// Time-indexed joint streams plus frames. The leader stream holds the
/// commands (policy targets), the follower stream the responses.
struct Trajectory {
  double joint_rate_hz = 500.0;
  double frame_rate_hz = 50.0;
  double slot = 0.0;
  std::uint64_t seed = 0;
  std::vector<JointRecord> leader;
  std::vector<JointRecord> follower;
  std::vector<Frame> frames;
  /// Set by environments that score the episode.
  bool success = false;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual Frame render() const = 0;
  virtual JointRecord follower() const = 0;
  /// Tracks the command for one control period.
  virtual void apply(const JointRecord& command) = 0;
  virtual bool terminal() const = 0;
  virtual bool success() const = 0;
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset() = 0;
  virtual JointRecord act(const Frame& frame, const JointRecord& follower) = 0;
};

class PolicyController : public Controller {
 public:
  explicit PolicyController(const Policy& policy);
  void reset() override;
  JointRecord act(const Frame& frame, const JointRecord& follower) override;
  const LstmState& state() const { return state_; }

 private:
  const Policy* policy_;
  LstmState state_;
};

/// Runs controller against env at the control rate. Records frame, follower
/// and command for every step taken; stops at max_steps or a terminal env.
Trajectory rollout(Controller& controller, Environment& env, std::size_t max_steps,
                   double control_rate);

}  // namespace eli
