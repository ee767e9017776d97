#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "eli/training.hpp"

namespace eli::train {
namespace {

JointRecord record(std::size_t joints, double value, JointRole role) {
  JointRecord r = JointRecord::zeros(joints, role);
  for (std::size_t j = 0; j < joints; ++j) {
    r.angle[j] = value + j;
    r.velocity[j] = -value;
    r.torque[j] = 0.5 * value;
  }
  return r;
}

// Joint stream where record i carries the value i, frames at frame_rate.
Trajectory counting(std::size_t steps, double joint_rate, double frame_rate, std::size_t size = 4) {
  Trajectory t;
  t.joint_rate_hz = joint_rate;
  t.frame_rate_hz = frame_rate;
  for (std::size_t i = 0; i < steps; ++i) {
    t.leader.push_back(record(2, static_cast<double>(i), JointRole::kLeader));
    t.follower.push_back(record(2, static_cast<double>(i) - 0.5, JointRole::kFollower));
  }
  const std::size_t frames = steps * static_cast<std::size_t>(frame_rate) /
                             static_cast<std::size_t>(joint_rate);
  for (std::size_t k = 0; k < frames; ++k) {
    Frame f;
    f.size = size;
    f.rgb.assign(size * size * 3, static_cast<std::uint8_t>(k % 256));
    t.frames.push_back(f);
  }
  return t;
}

TEST(Downsample, KeepsEveryTenthRecord) {
  const Trajectory t = counting(3000, 500, 50);
  const Trajectory d = downsample(t, 50);
  ASSERT_EQ(d.leader.size(), 300u);
  ASSERT_EQ(d.follower.size(), 300u);
  EXPECT_EQ(d.frames.size(), 300u);
  for (std::size_t k = 0; k < d.leader.size(); ++k) {
    EXPECT_EQ(d.leader[k].angle[0], 10.0 * k);
    EXPECT_EQ(d.follower[k].angle[0], 10.0 * k - 0.5);
  }
  EXPECT_EQ(d.joint_rate_hz, 50.0);
}

TEST(Downsample, PhaseOffsetsCoverEveryRecordOnce) {
  const Trajectory t = counting(3000, 500, 50);
  const std::vector<Trajectory> phases = downsample_phases(t, 50);
  ASSERT_EQ(phases.size(), 10u);
  std::vector<int> seen(3000, 0);
  for (std::size_t p = 0; p < phases.size(); ++p) {
    for (std::size_t k = 0; k < phases[p].leader.size(); ++k) {
      const double v = phases[p].leader[k].angle[0];
      EXPECT_EQ(v, 10.0 * k + p);
      ++seen[static_cast<std::size_t>(v)];
    }
    EXPECT_EQ(phases[p].frames.size(), 300u);
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Downsample, ConstantStreamStaysConstant) {
  Trajectory t = counting(100, 500, 50);
  for (auto& r : t.leader) r = record(2, 3.25, JointRole::kLeader);
  const Trajectory d = downsample(t, 50, 7);
  for (const auto& r : d.leader) EXPECT_EQ(r.packed(), t.leader[0].packed());
}

TEST(Downsample, RejectsIncompatibleRates) {
  const Trajectory t = counting(100, 500, 50);
  EXPECT_THROW(downsample(t, 30), std::invalid_argument);
  EXPECT_THROW(downsample(t, 1000), std::invalid_argument);
  EXPECT_THROW(downsample(t, 50, 10), std::invalid_argument);
  EXPECT_THROW(rate_factor(500, 0), std::invalid_argument);
  EXPECT_EQ(rate_factor(500, 50), 10u);
}

TEST(Padding, LengthIsMeanPlusTwoPopulationStd) {
  // population std of {90, 100, 110} is sqrt(200 / 3) = 8.165
  EXPECT_EQ(pad_length({90, 100, 110}), 117u);
  EXPECT_EQ(pad_length({42}), 42u);
  EXPECT_EQ(pad_length({10, 10, 10, 10}), 10u);
  EXPECT_THROW(pad_length({}), std::invalid_argument);
}

TEST(Padding, RepeatsLastRecordAndTruncates) {
  std::vector<Trajectory> seqs = {counting(90, 50, 50), counting(100, 50, 50),
                                  counting(110, 50, 50)};
  const std::vector<Trajectory> padded = pad_sequences(seqs);
  for (std::size_t i = 0; i < padded.size(); ++i) {
    ASSERT_EQ(padded[i].leader.size(), 117u);
    ASSERT_EQ(padded[i].follower.size(), 117u);
    ASSERT_EQ(padded[i].frames.size(), 117u);
    const std::size_t n = seqs[i].leader.size();
    for (std::size_t k = n; k < 117; ++k) {
      EXPECT_EQ(padded[i].leader[k].packed(), seqs[i].leader[n - 1].packed());
      EXPECT_EQ(padded[i].frames[k].rgb, seqs[i].frames[n - 1].rgb);
    }
  }
  const Trajectory cut = pad_to(counting(130, 50, 50), 117);
  EXPECT_EQ(cut.leader.size(), 117u);
  EXPECT_EQ(cut.leader.back().angle[0], 116.0);
  EXPECT_THROW(pad_sequences({}), std::invalid_argument);
}

TEST(Augment, ZeroVarianceIsIdentity) {
  std::mt19937_64 rng(1);
  std::vector<double> v = {1.0, -2.0, 3.5};
  const std::vector<double> before = v;
  augment(v, 0.0, rng);
  EXPECT_EQ(v, before);
  EXPECT_THROW(augment(v, -1.0, rng), std::invalid_argument);
}

TEST(Augment, EmpiricalVarianceMatches) {
  std::mt19937_64 rng(2024);
  const std::size_t n = 1000000;
  std::vector<double> clean(n), noisy;
  for (std::size_t i = 0; i < n; ++i) clean[i] = std::sin(0.001 * i);
  noisy = clean;
  augment(noisy, 0.01, rng);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += noisy[i] - clean[i];
  mean /= n;
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (noisy[i] - clean[i] - mean) * (noisy[i] - clean[i] - mean);
  var /= n;
  EXPECT_GE(var, 0.0097);
  EXPECT_LE(var, 0.0103);
}

TEST(Augment, MaskedChannelsUntouched) {
  std::mt19937_64 rng(3);
  std::vector<double> v(12, 1.0);
  augment(v, 0.01, rng, {true, false, true});
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i % 3 == 1) {
      EXPECT_EQ(v[i], 1.0);
    } else {
      EXPECT_NE(v[i], 1.0);
    }
  }
}

ParameterStore single(Tensor value) {
  ParameterStore s;
  s.add("w", std::move(value));
  return s;
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParameterStore s = single(Tensor::vector({1.0, -2.0}));
  AdamState st;
  for (int i = 0; i < 5; ++i) adam_step(s, {Tensor::zeros({2})}, st);
  EXPECT_EQ(s.value(0).to_vector(), (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore s = single(Tensor::vector({0.0, 0.0, 0.0}));
  AdamState st;
  adam_step(s, {Tensor::vector({0.5, -3.0, 1e-3})}, st);
  // m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps)
  EXPECT_NEAR(s.value(0)[0], -1e-3, 1e-10);
  EXPECT_NEAR(s.value(0)[1], 1e-3, 1e-10);
  EXPECT_NEAR(s.value(0)[2], -1e-3, 1e-8);
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, ConvergesOnQuadraticBowl) {
  const std::vector<double> opt = {0.7, -1.2, 0.25};
  const std::vector<double> curv = {1.0, 4.0, 0.5};
  ParameterStore s = single(Tensor::vector({0.0, 0.0, 0.0}));
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 1e-2;
  for (int step = 0; step < 5000; ++step) {
    std::vector<double> g(3);
    for (std::size_t i = 0; i < 3; ++i) g[i] = 2.0 * curv[i] * (s.value(0)[i] - opt[i]);
    adam_step(s, {Tensor::vector(g)}, st, cfg);
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s.value(0)[i], opt[i], 1e-6);
}

TEST(Adam, RejectsMismatchedGradients) {
  ParameterStore s = single(Tensor::vector({0.0, 0.0}));
  AdamState st;
  EXPECT_THROW(adam_step(s, {Tensor::zeros({3})}, st), std::invalid_argument);
  EXPECT_THROW(adam_step(s, {}, st), std::invalid_argument);
}

// Tiny task: 2 joints, 8x8 frames whose brightness encodes a goal the leader
// moves toward.
Trajectory toy_episode(double goal, std::size_t steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.02, 0.02);
  Trajectory t;
  t.joint_rate_hz = 50;
  t.frame_rate_hz = 50;
  double a = 0.0;
  for (std::size_t i = 0; i < steps; ++i) {
    JointRecord f = JointRecord::zeros(2, JointRole::kFollower);
    f.angle = {a, 0.3};
    f.velocity = {0.1 * (goal - a), 0.0};
    f.torque = {0.05 * (goal - a) + jitter(rng), 0.0};
    a += 0.2 * (goal - a);
    JointRecord l = f;
    l.role = JointRole::kLeader;
    l.angle[0] = a;
    t.follower.push_back(f);
    t.leader.push_back(l);
    Frame fr;
    fr.size = 8;
    fr.rgb.assign(8 * 8 * 3, static_cast<std::uint8_t>(100 + 100 * goal));
    t.frames.push_back(fr);
  }
  return t;
}

PolicyConfig toy_policy(bool each) {
  PolicyConfig c;
  c.encoder.conv_channels = {2, 2, 2};
  c.encoder.hidden = 8;
  c.encoder.feature_dim = 4;
  c.encoder.image_size = 8;
  c.feature_dim = 4;
  c.lstm_layers = 2;
  c.lstm_units = 8;
  c.joint_count = 2;
  c.each_layer_input = each;
  c.fixed_joints = {1};
  c.fixed_values = {0.3};
  return c;
}

Dataset toy_data() {
  Dataset d;
  d.train = {toy_episode(0.2, 12, 1), toy_episode(0.8, 14, 2), toy_episode(0.5, 10, 3)};
  d.val = {toy_episode(0.6, 12, 4)};
  return d;
}

TrainConfig toy_train(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 2;
  c.seed = 5;
  c.lr = 1e-2;
  return c;
}

TEST(Train, BestCheckpointAndCurve) {
  const TrainResult r = train(toy_train(15), toy_policy(true), toy_data());
  ASSERT_EQ(r.curve.size(), 15u);
  EXPECT_LE(r.best_val_mse, r.curve.front().val_mse);
  double best = r.curve.front().val_mse;
  for (const auto& e : r.curve) best = std::min(best, e.val_mse);
  EXPECT_EQ(r.best_val_mse, best);
  EXPECT_EQ(r.curve[r.best_epoch - 1].val_mse, best);
  // the returned policy reproduces its recorded validation loss
  EXPECT_NEAR(evaluate_loss(r.policy, toy_data().val, r.pad_length), best, 1e-12);
  EXPECT_EQ(r.pad_length, pad_length({12, 14, 10}));
  const std::string csv = loss_csv(r.curve);
  EXPECT_EQ(csv.rfind("epoch,train_mse,val_mse\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 16);
}

TEST(Train, DeterministicUnderSeed) {
  const TrainResult a = train(toy_train(4), toy_policy(false), toy_data());
  const TrainResult b = train(toy_train(4), toy_policy(false), toy_data());
  ASSERT_EQ(a.policy.params.size(), b.policy.params.size());
  for (std::size_t i = 0; i < a.policy.params.size(); ++i) {
    EXPECT_EQ(a.policy.params.value(i).to_vector(), b.policy.params.value(i).to_vector());
  }
  EXPECT_EQ(loss_csv(a.curve), loss_csv(b.curve));
}

TEST(Train, NormalizationComesFromTrainingSplitOnly) {
  Dataset d = toy_data();
  const TrainResult a = train(toy_train(1), toy_policy(true), d);
  d.val = {toy_episode(5.0, 12, 9)};
  const TrainResult b = train(toy_train(1), toy_policy(true), d);
  EXPECT_EQ(a.policy.input_norm->mean, b.policy.input_norm->mean);
  EXPECT_EQ(a.policy.output_norm->std, b.policy.output_norm->std);
  // the fixed joint is inactive in both directions
  EXPECT_FALSE(a.policy.input_norm->active(1));
  EXPECT_FALSE(a.policy.output_norm->active(1));
}

TEST(Train, LossIgnoresFixedJointTargets) {
  const TrainResult r = train(toy_train(2), toy_policy(true), toy_data());
  std::vector<Trajectory> val = toy_data().val;
  const double base = evaluate_loss(r.policy, val, r.pad_length);
  for (auto& rec : val[0].leader) {
    rec.angle[1] += 10.0;
    rec.velocity[1] -= 3.0;
    rec.torque[1] = 7.0;
  }
  EXPECT_EQ(evaluate_loss(r.policy, val, r.pad_length), base);
  for (auto& rec : val[0].leader) rec.angle[0] += 1.0;
  EXPECT_GT(evaluate_loss(r.policy, val, r.pad_length), base);
}

TEST(Train, OverfitsTwoSequences) {
  Dataset d;
  d.train = {toy_episode(0.2, 10, 1), toy_episode(0.8, 10, 2)};
  d.val = d.train;
  TrainConfig c = toy_train(2000);
  c.noise_variance = 0.0;
  c.batch_size = 2;
  c.lr = 3e-3;
  const TrainResult r = train(c, toy_policy(true), d);
  EXPECT_LT(r.curve.back().train_mse, 1e-3);
}

TEST(Train, DivergenceReportsEpoch) {
  TrainConfig c = toy_train(5);
  c.lr = 1e300;
  try {
    train(c, toy_policy(true), toy_data());
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.epoch(), 1u);
    EXPECT_NE(std::string(e.what()).find("epoch " + std::to_string(e.epoch())), std::string::npos);
  }
}

TEST(Train, RejectsBadInputs) {
  TrainConfig c = toy_train(1);
  Dataset d = toy_data();
  d.val.clear();
  EXPECT_THROW(train(c, toy_policy(true), d), std::invalid_argument);
  c.batch_size = 0;
  EXPECT_THROW(train(c, toy_policy(true), toy_data()), std::invalid_argument);
  c = toy_train(1);
  c.lr = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace eli::train
