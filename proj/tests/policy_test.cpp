#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "eli/policy.hpp"
#include "test_support.hpp"

namespace eli {
namespace {

using testing::random_tensor;

PolicyConfig small_config(bool inject = true) {
  PolicyConfig cfg;
  cfg.encoder.conv_channels = {4, 8, 8};
  cfg.encoder.hidden = 32;
  cfg.lstm_layers = 2;
  cfg.lstm_units = 16;
  cfg.each_layer_input = inject;
  cfg.fixed_joints = {1};
  cfg.fixed_values = {0.25};
  return cfg;
}

NormStats unit_stats(std::size_t d) {
  NormStats s;
  s.mean.assign(d, 0.0);
  s.std.assign(d, 1.0);
  return s;
}

Policy make_policy(const PolicyConfig& cfg, std::uint64_t seed) {
  Policy p;
  p.config = cfg;
  p.params = init_policy_params(cfg, seed);
  p.input_norm = unit_stats(cfg.joint_dim());
  p.output_norm = unit_stats(cfg.joint_dim());
  return p;
}

JointRecord random_joints(std::size_t n, std::mt19937_64& rng) {
  return JointRecord::unpack(random_tensor({3 * n}, rng).to_vector(), JointRole::kFollower);
}

TEST(PolicyConfigTest, DefaultDimensions) {
  const PolicyConfig cfg;
  EXPECT_EQ(cfg.input_dim(), 56u);
  EXPECT_EQ(cfg.output_dim(), 24u);
  PolicyConfig bad = cfg;
  bad.fixed_joints = {8};
  bad.fixed_values = {0.0};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad.fixed_joints = {1};
  bad.fixed_values = {};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(InitState, ZeroPairsAtPaperSize) {
  const PolicyConfig cfg;
  const LstmState s = init_state(cfg);
  ASSERT_EQ(s.h.size(), 6u);
  ASSERT_EQ(s.c.size(), 6u);
  for (std::size_t n = 0; n < 6; ++n) {
    EXPECT_EQ(s.h[n].shape(), (Shape{400}));
    EXPECT_EQ(max_abs(s.h[n]), 0.0);
    EXPECT_EQ(max_abs(s.c[n]), 0.0);
  }
  const LstmState again = init_state(cfg);
  EXPECT_EQ(max_abs_diff(again.h[5], s.h[5]), 0.0);
}

TEST(PolicyStep, ShapeTraceAtDefaults) {
  PolicyConfig cfg;
  const Policy policy = make_policy(cfg, 1);
  std::mt19937_64 rng(2);
  const auto r = policy_step(policy, random_tensor({3, 64, 64}, rng, 0.0, 1.0),
                             random_joints(8, rng), init_state(cfg));
  EXPECT_EQ(r.command.packed().size(), 24u);
  EXPECT_EQ(r.command.role, JointRole::kLeader);
  EXPECT_EQ(r.state.h.size(), 6u);
  EXPECT_EQ(policy.params.get("lstm0.input_weights").shape(), (Shape{1600, 56}));
  EXPECT_EQ(policy.params.get("lstm1.input_weights").shape(), (Shape{1600, 432}));
  EXPECT_EQ(policy.params.get("head.weight").shape(), (Shape{24, 432}));
}

TEST(PolicyStep, PureFunctionOfInputsAndState) {
  const PolicyConfig cfg = small_config();
  const Policy policy = make_policy(cfg, 3);
  std::mt19937_64 rng(4);
  const Tensor image = random_tensor({3, 64, 64}, rng, 0.0, 1.0);
  const JointRecord joints = random_joints(8, rng);
  LstmState state = init_state(cfg);
  const auto a = policy_step(policy, image, joints, state);
  const auto b = policy_step(policy, image, joints, state);
  EXPECT_EQ(a.command.packed(), b.command.packed());
  // advancing the state changes the next output
  const auto c = policy_step(policy, image, joints, a.state);
  EXPECT_NE(a.command.packed(), c.command.packed());
}

TEST(PolicyStep, FixedJointIsOverridden) {
  const PolicyConfig cfg = small_config();
  const Policy policy = make_policy(cfg, 5);
  std::mt19937_64 rng(6);
  const auto r = policy_step(policy, random_tensor({3, 64, 64}, rng, 0.0, 1.0),
                             random_joints(8, rng), init_state(cfg));
  EXPECT_EQ(r.command.angle[1], 0.25);
  EXPECT_EQ(r.command.velocity[1], 0.0);
  EXPECT_EQ(r.command.torque[1], 0.0);
  const auto mask = free_channel_mask(cfg);
  EXPECT_FALSE(mask[1]);
  EXPECT_FALSE(mask[9]);
  EXPECT_FALSE(mask[17]);
  EXPECT_EQ(std::count(mask.begin(), mask.end(), false), 3);
}

TEST(PolicyStep, ZeroParametersCommandTheOutputMean) {
  const PolicyConfig cfg = small_config();
  Policy policy = make_policy(cfg, 7);
  for (std::size_t i = 0; i < policy.params.size(); ++i) {
    policy.params.set(i, zeros_like(policy.params.value(i)));
  }
  std::mt19937_64 rng(8);
  NormStats out;
  for (std::size_t i = 0; i < 24; ++i) {
    out.mean.push_back(0.1 * static_cast<double>(i));
    out.std.push_back(2.0);
  }
  policy.output_norm = out;
  const auto r = policy_step(policy, random_tensor({3, 64, 64}, rng, 0.0, 1.0),
                             random_joints(8, rng), init_state(cfg));
  const auto packed = r.command.packed();
  for (std::size_t i = 0; i < 24; ++i) {
    if (i % 8 == 1) continue;
    EXPECT_DOUBLE_EQ(packed[i], out.mean[i]);
  }
}

TEST(PolicyStep, Errors) {
  const PolicyConfig cfg = small_config();
  Policy policy = make_policy(cfg, 9);
  std::mt19937_64 rng(10);
  const Tensor image = random_tensor({3, 64, 64}, rng, 0.0, 1.0);
  EXPECT_THROW(policy_step(policy, image, random_joints(7, rng), init_state(cfg)),
               std::invalid_argument);
  EXPECT_THROW(policy_step(policy, random_tensor({3, 32, 32}, rng), random_joints(8, rng),
                           init_state(cfg)),
               std::invalid_argument);
  policy.input_norm.reset();
  EXPECT_THROW(policy_step(policy, image, random_joints(8, rng), init_state(cfg)),
               std::invalid_argument);
}

TEST(NormStatsTest, RoundTripAndInactiveChannels) {
  std::mt19937_64 rng(11);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 50; ++i) {
    auto r = random_tensor({4}, rng, -3.0, 5.0).to_vector();
    r[2] = 1.5;  // constant channel
    rows.push_back(r);
  }
  const NormStats s = NormStats::fit(rows, {false, false, false, true});
  EXPECT_TRUE(s.active(0));
  EXPECT_FALSE(s.active(2));
  EXPECT_FALSE(s.active(3));
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = random_tensor({4}, rng, -1e3, 1e3).to_vector();
    const auto back = s.denormalize(s.normalize(v));
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(back[i], v[i], 1e-12 * std::max(1.0, std::abs(v[i])));
    }
  }
  // normalized training rows have zero mean and unit spread
  double m = 0.0, sq = 0.0;
  for (const auto& r : rows) {
    const double x = s.normalize(r)[0];
    m += x;
    sq += x * x;
  }
  EXPECT_NEAR(m / 50.0, 0.0, 1e-12);
  EXPECT_NEAR(sq / 50.0, 1.0, 1e-12);
  EXPECT_THROW(NormStats::fit({}), std::invalid_argument);
  EXPECT_THROW(s.normalize({1.0}), std::invalid_argument);
}

TEST(FrameTest, ConvertsToPlanarUnitRange) {
  Frame f;
  f.size = 2;
  f.rgb = {255, 0, 0, 0, 255, 0, 0, 0, 255, 51, 51, 51};
  const Tensor t = frame_to_tensor(f);
  EXPECT_EQ(t.shape(), (Shape{3, 2, 2}));
  EXPECT_DOUBLE_EQ(t[0], 1.0);        // red of pixel (0,0)
  EXPECT_DOUBLE_EQ(t[4 + 1], 1.0);    // green of pixel (0,1)
  EXPECT_DOUBLE_EQ(t[8 + 2], 1.0);    // blue of pixel (1,0)
  EXPECT_DOUBLE_EQ(t[3], 0.2);
  f.rgb.pop_back();
  EXPECT_THROW(frame_to_tensor(f), std::invalid_argument);
}

class CountingEnv : public Environment {
 public:
  explicit CountingEnv(std::size_t end, std::size_t fault_at = 1000) : end_(end), fault_at_(fault_at) {}
  Frame render() const override {
    Frame f;
    f.rgb.assign(64 * 64 * 3, static_cast<std::uint8_t>(steps_));
    return f;
  }
  JointRecord follower() const override { return last_; }
  void apply(const JointRecord& command) override {
    if (steps_ == fault_at_) throw std::runtime_error("joint 3 fault");
    last_ = command;
    last_.role = JointRole::kFollower;
    ++steps_;
  }
  bool terminal() const override { return steps_ >= end_; }
  bool success() const override { return steps_ == end_; }

 private:
  std::size_t end_, fault_at_;
  std::size_t steps_ = 0;
  JointRecord last_ = JointRecord::zeros(8);
};

class EchoController : public Controller {
 public:
  void reset() override { resets++; }
  JointRecord act(const Frame& frame, const JointRecord& follower) override {
    JointRecord r = follower;
    r.angle[0] = frame.rgb[0] + 1.0;
    return r;
  }
  int resets = 0;
};

TEST(Rollout, RespectsMaxStepsAndTerminalFlag) {
  EchoController c;
  CountingEnv long_env(100);
  const Trajectory a = rollout(c, long_env, 10, 50.0);
  EXPECT_EQ(a.leader.size(), 10u);
  EXPECT_EQ(a.frames.size(), 10u);
  EXPECT_FALSE(a.success);
  CountingEnv short_env(4);
  const Trajectory b = rollout(c, short_env, 10, 50.0);
  EXPECT_EQ(b.follower.size(), 4u);
  EXPECT_TRUE(b.success);
  EXPECT_EQ(b.leader[3].angle[0], 4.0);
  EXPECT_EQ(b.follower[3].angle[0], 3.0);
  EXPECT_EQ(c.resets, 2);
}

TEST(Rollout, FaultNamesTheStep) {
  EchoController c;
  CountingEnv env(100, 7);
  try {
    rollout(c, env, 20, 50.0);
    FAIL() << "expected fault";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("step 7"), std::string::npos) << e.what();
  }
}

TEST(Rollout, ZeroPolicyHoldsConstantCommands) {
  const PolicyConfig cfg = small_config();
  Policy policy = make_policy(cfg, 12);
  for (std::size_t i = 0; i < policy.params.size(); ++i) {
    policy.params.set(i, zeros_like(policy.params.value(i)));
  }
  PolicyController controller(policy);
  CountingEnv env(100);
  const Trajectory t = rollout(controller, env, 6, 50.0);
  for (const auto& cmd : t.leader) EXPECT_EQ(cmd.packed(), t.leader.front().packed());
}

// End-to-end body: normalized outputs against image pixels, joints and z.
TEST(NetworkStep, GradientsMatchFiniteDifferences) {
  for (bool inject : {true, false}) {
    const PolicyConfig cfg = small_config(inject);
    const ParameterStore params = init_policy_params(cfg, 13);
    std::mt19937_64 rng(14);
    const Tensor image = random_tensor({3, 64, 64}, rng, 0.0, 1.0);
    const Tensor joints = random_tensor({24}, rng);
    const auto wrt_joints = testing::check_jacobian(
        [&](Graph& g, Var v) {
          BoundParameters p(g, params, false);
          return network_step(cfg, p, g.constant(image), v, constant_state(g, init_state(cfg))).output;
        },
        joints);
    EXPECT_LT(wrt_joints.max_abs, 1e-5);
    const Tensor z = random_tensor({32}, rng);
    const auto wrt_z = testing::check_jacobian(
        [&](Graph& g, Var v) {
          BoundParameters p(g, params, false);
          auto s = constant_state(g, init_state(cfg));
          s = network_step_from_features(cfg, bind_policy(cfg, p), g.constant(joints), v, s).state;
          return network_step_from_features(cfg, bind_policy(cfg, p), g.constant(joints), v, s).output;
        },
        z);
    EXPECT_LT(wrt_z.max_abs, 1e-5);
  }
}

}  // namespace
}  // namespace eli
