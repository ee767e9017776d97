#include "eli/sim.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace eli::sim {
namespace {

constexpr double kLoad = 0.5;  // object weight felt by the lift joint
constexpr double kPassiveStiffness = 30.0;
constexpr double kPassiveDamping = 1.5;
constexpr std::array<double, 3> kPassiveCoupling = {0.5, -0.3, 0.2};
constexpr double kObjectJitter = 0.01;
constexpr double kPixelsPerUnit = 40.0;
constexpr double kOriginCol = 0.2;  // world x at column 0 is -0.2
constexpr double kTableRow = 48.0;

bool actuated(std::size_t j) { return j < kPassive0; }

}  // namespace

Disturbance::Disturbance(std::mt19937_64& rng) : rng_(&rng), value_(kJoints, 0.0) {
  std::normal_distribution<double> n(0.0, kStd);
  for (std::size_t j = 0; j < kPassive0; ++j) value_[j] = n(*rng_);
}

const std::vector<double>& Disturbance::step(double dt) {
  const double a = std::exp(-dt / kTau);
  std::normal_distribution<double> n(0.0, kStd * std::sqrt(1.0 - a * a));
  for (std::size_t j = 0; j < kPassive0; ++j) value_[j] = a * value_[j] + n(*rng_);
  return value_;
}

namespace {

struct Canvas {
  std::vector<double> rgb = std::vector<double>(kImageSize * kImageSize * 3, 0.0);

  void fill_rows(double row0, double row1, std::array<double, 3> color) {
    paint(0.0, static_cast<double>(kImageSize), row0, row1, color);
  }

  // Blends color over the pixel-space rectangle [c0, c1) x [r0, r1) by the
  // covered area of each pixel.
  void paint(double c0, double c1, double r0, double r1, std::array<double, 3> color) {
    const double n = static_cast<double>(kImageSize);
    c0 = std::clamp(c0, 0.0, n);
    c1 = std::clamp(c1, 0.0, n);
    r0 = std::clamp(r0, 0.0, n);
    r1 = std::clamp(r1, 0.0, n);
    if (c1 <= c0 || r1 <= r0) return;
    const auto cb = static_cast<std::size_t>(c0), ce = static_cast<std::size_t>(std::ceil(c1));
    const auto rb = static_cast<std::size_t>(r0), re = static_cast<std::size_t>(std::ceil(r1));
    for (std::size_t r = rb; r < re; ++r) {
      const double ry = std::min(r + 1.0, r1) - std::max(static_cast<double>(r), r0);
      for (std::size_t c = cb; c < ce; ++c) {
        const double cx = std::min(c + 1.0, c1) - std::max(static_cast<double>(c), c0);
        const double cov = std::clamp(cx * ry, 0.0, 1.0);
        double* px = rgb.data() + (r * kImageSize + c) * 3;
        for (std::size_t k = 0; k < 3; ++k) px[k] = cov * color[k] + (1.0 - cov) * px[k];
      }
    }
  }

  // World-space rectangle [x0, x1) x [z0, z1).
  void paint_world(double x0, double x1, double z0, double z1, std::array<double, 3> color) {
    paint((x0 + kOriginCol) * kPixelsPerUnit, (x1 + kOriginCol) * kPixelsPerUnit,
          kTableRow - z1 * kPixelsPerUnit, kTableRow - z0 * kPixelsPerUnit, color);
  }
};

// Minimum-jerk position, velocity and acceleration for a move of `delta`
// over `duration`, at local time t.
std::array<double, 3> min_jerk(double delta, double duration, double t) {
  const double s = std::clamp(t / duration, 0.0, 1.0);
  const double s2 = s * s, s3 = s2 * s;
  const double pos = 10 * s3 - 15 * s3 * s + 6 * s3 * s2;
  const double vel = (30 * s2 - 60 * s3 + 30 * s3 * s) / duration;
  const double acc = (60 * s - 180 * s2 + 120 * s3) / (duration * duration);
  return {delta * pos, delta * vel, delta * acc};
}

constexpr std::array<std::size_t, 4> kScripted = {kBaseX, kLift, kWrist, kGripper};

struct Segment {
  double duration;
  std::array<double, 4> target;  // base, lift, wrist, gripper
};

std::vector<Segment> teacher_plan(double object_x, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jitter(0.95, 1.05);
  const double low = 0.02;
  std::vector<Segment> plan = {
      {0.3, {kCenterX, kHomeLift, 0.0, 0.0}},  // idle
      {1.0, {object_x, kHomeLift, 0.0, 0.0}},  // reach
      {0.6, {object_x, low, -0.2, 0.0}},       // descend
      {0.4, {object_x, low, -0.2, 1.0}},       // close
      {0.6, {object_x, kHomeLift, 0.0, 1.0}},  // lift
      {1.0, {kCenterX, kHomeLift, 0.0, 1.0}},  // carry
      {0.6, {kCenterX, low, 0.2, 1.0}},        // lower
      {0.4, {kCenterX, low, 0.2, 0.0}},        // open
      {0.6, {kCenterX, kHomeLift, 0.0, 0.0}},  // retreat
      {0.5, {kCenterX, kHomeLift, 0.0, 0.0}},  // hold
  };
  for (auto& s : plan) s.duration *= jitter(rng);
  return plan;
}

struct LeaderSample {
  std::vector<double> angle, velocity, acceleration;
};

LeaderSample leader_at(const std::vector<Segment>& plan, double t) {
  LeaderSample out;
  out.angle.assign(kJoints, 0.0);
  out.velocity.assign(kJoints, 0.0);
  out.acceleration.assign(kJoints, 0.0);
  out.angle[kReach] = kReachHold;
  std::array<double, 4> start = {kCenterX, kHomeLift, 0.0, 0.0};
  double t0 = 0.0;
  for (const auto& seg : plan) {
    if (t < t0 + seg.duration || &seg == &plan.back()) {
      for (std::size_t k = 0; k < 4; ++k) {
        const auto m = min_jerk(seg.target[k] - start[k], seg.duration, t - t0);
        out.angle[kScripted[k]] = start[k] + m[0];
        out.velocity[kScripted[k]] = m[1];
        out.acceleration[kScripted[k]] = m[2];
      }
      return out;
    }
    start = seg.target;
    t0 += seg.duration;
  }
  return out;
}

// Passive springs driven by base acceleration, backward Euler.
void passive_step(std::vector<double>& angle, std::vector<double>& velocity,
                  std::vector<double>& torque, double base_acc, double dt) {
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t j = kPassive0 + k;
    const double drive = -kPassiveCoupling[k] * base_acc;
    const double denom =
        1.0 + dt * kPassiveDamping / kInertia + dt * dt * kPassiveStiffness / kInertia;
    const double v =
        (velocity[j] + dt * (-kPassiveStiffness * angle[j] + drive) / kInertia) / denom;
    angle[j] += dt * v;
    velocity[j] = v;
    torque[j] = -kPassiveStiffness * angle[j] - kPassiveDamping * v;
  }
}

}  // namespace

WorldState WorldState::home(double object_x) {
  WorldState s;
  s.angle[kBaseX] = kCenterX;
  s.angle[kReach] = kReachHold;
  s.angle[kLift] = kHomeLift;
  s.object_x = object_x;
  return s;
}

JointRecord WorldState::follower() const {
  JointRecord r;
  r.angle = angle;
  r.velocity = velocity;
  r.torque = torque;
  r.role = JointRole::kFollower;
  return r;
}

Frame render(const WorldState& state) {
  Canvas cv;
  cv.fill_rows(0.0, kTableRow, {40, 40, 60});
  cv.fill_rows(kTableRow, static_cast<double>(kImageSize), {110, 90, 70});
  // placement zone on the table
  cv.paint_world(kCenterX - kPlaceTolerance, kCenterX + kPlaceTolerance, -0.05, 0.0,
                 {150, 150, 150});
  const double ex = state.angle[kBaseX], ez = state.angle[kLift];
  cv.paint_world(ex - 0.02, ex + 0.02, ez + 0.05, 1.4, {160, 160, 160});
  const double g = std::clamp(state.angle[kGripper], 0.0, 1.0);
  cv.paint_world(ex - 0.06, ex + 0.06, ez, ez + 0.05, {60, 120 + 100 * g, 220 - 100 * g});
  cv.paint_world(state.object_x - 0.05, state.object_x + 0.05, state.object_z,
                 state.object_z + 0.1, {220, 50, 40});
  Frame f;
  f.size = kImageSize;
  f.rgb.resize(cv.rgb.size());
  for (std::size_t i = 0; i < cv.rgb.size(); ++i) {
    f.rgb[i] = static_cast<std::uint8_t>(std::clamp(std::lround(cv.rgb[i]), 0L, 255L));
  }
  return f;
}

WorldState follower_dynamics_step(const WorldState& state, const JointRecord& command, double dt,
                                  const std::vector<double>* noise) {
  if (command.angle.size() != kJoints || command.torque.size() != kJoints) {
    throw std::invalid_argument("dynamics: command must cover " + std::to_string(kJoints) +
                                " joints");
  }
  for (std::size_t j = 0; j < kJoints; ++j) {
    if (!std::isfinite(command.angle[j]) || !std::isfinite(command.torque[j]) ||
        (j < command.velocity.size() && !std::isfinite(command.velocity[j]))) {
      throw std::runtime_error("dynamics: non-finite command at joint " + std::to_string(j));
    }
  }
  WorldState next = state;
  const double base_v0 = state.velocity[kBaseX];
  for (std::size_t j = 0; j < kPassive0; ++j) {
    double load = (j == kLift && state.grasped) ? kLoad : 0.0;
    double drive = kKp * (command.angle[j] - state.angle[j]) + command.torque[j];
    if (noise) drive += (*noise)[j];
    // backward Euler on M a = drive - Kp dq - Kd v' - load
    const double denom = 1.0 + dt * kKd / kInertia + dt * dt * kKp / kInertia;
    const double v = (state.velocity[j] + dt * (drive - load) / kInertia) / denom;
    next.velocity[j] = v;
    next.angle[j] = state.angle[j] + dt * v;
    next.torque[j] = kKp * (command.angle[j] - next.angle[j]) - kKd * v + command.torque[j] +
                     (noise ? (*noise)[j] : 0.0);
  }
  passive_step(next.angle, next.velocity, next.torque, (next.velocity[kBaseX] - base_v0) / dt, dt);

  const double ex = next.angle[kBaseX], ez = next.angle[kLift];
  const bool closed = next.angle[kGripper] > 0.5;
  const bool was_closed = state.angle[kGripper] > 0.5;
  if (next.grasped && !closed) {
    next.grasped = false;
    next.object_z = 0.0;
  } else if (!next.grasped && closed && !was_closed &&
             std::abs(ex - next.object_x) < kGraspRadius && ez < kGraspRadius) {
    next.grasped = true;
  }
  if (next.grasped) {
    next.object_x = ex;
    next.object_z = std::max(0.0, ez - 0.02);
    next.max_object_z = std::max(next.max_object_z, next.object_z);
  }
  ++next.steps;
  return next;
}

Trajectory teacher_demonstrate(double slot, std::uint64_t seed) {
  if (!SlotGrid::reachable(slot)) {
    throw std::invalid_argument("teacher: slot " + std::to_string(slot) +
                                " outside the reachable range [-0.5, 4.5]");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-kObjectJitter, kObjectJitter);
  const double object_x = SlotGrid::to_x(slot) + jitter(rng);
  const auto plan = teacher_plan(object_x, rng);
  double total = 0.0;
  for (const auto& s : plan) total += s.duration;
  const auto per_frame = static_cast<std::size_t>(kPhysicsRate / kFrameRate);
  const std::size_t frames = static_cast<std::size_t>(std::ceil(total * kFrameRate));
  const std::size_t steps = frames * per_frame;
  const double dt = 1.0 / kPhysicsRate;

  Trajectory traj;
  traj.joint_rate_hz = kPhysicsRate;
  traj.frame_rate_hz = kFrameRate;
  traj.slot = slot;
  traj.seed = seed;
  Disturbance disturbance(rng);
  std::vector<double> leader_passive_a(kJoints, 0.0), leader_passive_v(kJoints, 0.0),
      leader_passive_tau(kJoints, 0.0);
  WorldState world = WorldState::home(object_x);
  for (std::size_t i = 0; i < steps; ++i) {
    if (i % per_frame == 0) traj.frames.push_back(render(world));
    const LeaderSample s = leader_at(plan, static_cast<double>(i) * dt);
    passive_step(leader_passive_a, leader_passive_v, leader_passive_tau,
                 s.acceleration[kBaseX], dt);
    JointRecord lead = JointRecord::zeros(kJoints, JointRole::kLeader);
    for (std::size_t j = 0; j < kJoints; ++j) {
      if (actuated(j)) {
        lead.angle[j] = s.angle[j];
        lead.velocity[j] = s.velocity[j];
        // force felt at the leader: inertia and damping plus the reflected load
        lead.torque[j] = kInertia * s.acceleration[j] + kKd * s.velocity[j] +
                         ((j == kLift && world.grasped) ? kLoad : 0.0);
      } else {
        lead.angle[j] = leader_passive_a[j];
        lead.velocity[j] = leader_passive_v[j];
        lead.torque[j] = leader_passive_tau[j];
      }
    }
    traj.leader.push_back(lead);
    traj.follower.push_back(world.follower());
    world = follower_dynamics_step(world, lead, dt, &disturbance.step(dt));
  }
  traj.success = episode_success(world);
  return traj;
}

bool episode_success(const WorldState& state) {
  return state.max_object_z > kLiftThreshold && !state.grasped &&
         std::abs(state.object_x - kCenterX) < kPlaceTolerance;
}

SimEnv::SimEnv(double slot, std::uint64_t seed, double duration_s) : rng_(seed), disturbance_(rng_) {
  if (!SlotGrid::reachable(slot)) {
    throw std::invalid_argument("env: slot " + std::to_string(slot) + " is not reachable");
  }
  std::uniform_real_distribution<double> jitter(-kObjectJitter, kObjectJitter);
  state_ = WorldState::home(SlotGrid::to_x(slot) + jitter(rng_));
  max_steps_ = static_cast<std::size_t>(std::llround(duration_s * kPhysicsRate));
}

void SimEnv::apply(const JointRecord& command) {
  const auto per_control = static_cast<std::size_t>(kPhysicsRate / kFrameRate);
  for (std::size_t i = 0; i < per_control; ++i) {
    state_ = follower_dynamics_step(state_, command, 1.0 / kPhysicsRate, &disturbance_.step(1.0 / kPhysicsRate));
  }
}

bool SimEnv::terminal() const { return state_.steps >= max_steps_; }

bool SimEnv::success() const { return episode_success(state_); }

std::string SuccessTable::format() const {
  std::ostringstream head, row;
  head << "slot    ";
  row << "success ";
  char buf[32];
  for (std::size_t i = 0; i < slots.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%6.1f", slots[i]);
    head << buf;
    std::snprintf(buf, sizeof buf, "%6.1f", success_percent[i]);
    row << buf;
  }
  std::snprintf(buf, sizeof buf, " | %5s", "total");
  head << buf;
  std::snprintf(buf, sizeof buf, " | %5.1f", total_percent);
  row << buf;
  return head.str() + "\n" + row.str() + "\n";
}

std::string SuccessTable::csv() const {
  std::ostringstream out;
  out << "slot,success_percent\n";
  for (std::size_t i = 0; i < slots.size(); ++i) out << slots[i] << "," << success_percent[i] << "\n";
  out << "total," << total_percent << "\n";
  return out.str();
}

SuccessTable evaluate(const ControllerFactory& make_controller, const std::vector<double>& slots,
                      std::size_t trials_per_slot, std::uint64_t seed, std::size_t threads) {
  if (trials_per_slot == 0) throw std::invalid_argument("evaluate: trials must be positive");
  SuccessTable table;
  table.slots = slots;
  table.trials = trials_per_slot;
  const std::size_t jobs = slots.size() * trials_per_slot;
  std::vector<char> ok(jobs, 0);
  parallel_for(jobs, threads, [&](std::size_t job) {
    const std::size_t i = job / trials_per_slot, k = job % trials_per_slot;
    SimEnv env(slots[i], mix_seed(seed, i, k));
    auto controller = make_controller();
    rollout(*controller, env, static_cast<std::size_t>(-1), kFrameRate);
    ok[job] = env.success() ? 1 : 0;
  });
  std::size_t total = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    std::size_t n = 0;
    for (std::size_t k = 0; k < trials_per_slot; ++k) n += ok[i * trials_per_slot + k];
    total += n;
    table.success_percent.push_back(100.0 * static_cast<double>(n) /
                                    static_cast<double>(trials_per_slot));
  }
  table.total_percent = slots.empty() ? 0.0
                                      : 100.0 * static_cast<double>(total) /
                                            static_cast<double>(jobs);
  return table;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

ReplayController::ReplayController(std::vector<JointRecord> commands)
    : commands_(std::move(commands)) {
  if (commands_.empty()) throw std::invalid_argument("replay: no commands");
}

JointRecord ReplayController::act(const Frame&, const JointRecord&) {
  const JointRecord& c = commands_[std::min(next_, commands_.size() - 1)];
  ++next_;
  return c;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(a) ^ b) ^ c);
}

}  // namespace eli::sim
