#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "eli/policy.hpp"

namespace eli::sim {

/// Joint layout of the planar arm.
enum Joint : std::size_t {
  kBaseX = 0,
  kReach = 1,
  kLift = 2,
  kWrist = 3,
  kGripper = 4,
  kPassive0 = 5,
  kPassive1 = 6,
  kPassive2 = 7,
};
inline constexpr std::size_t kJoints = 8;

inline constexpr double kPhysicsRate = 500.0;
inline constexpr double kFrameRate = 50.0;
inline constexpr std::size_t kImageSize = 64;
/// Constant the reach joint is held at.
inline constexpr double kReachHold = 0.25;

inline constexpr double kInertia = 0.05;
inline constexpr double kOmega = 20.0;
inline constexpr double kKp = kInertia * kOmega * kOmega;
inline constexpr double kKd = 2.0 * kInertia * kOmega;

inline constexpr double kGraspRadius = 0.06;
inline constexpr double kLiftThreshold = 0.05;
inline constexpr double kPlaceTolerance = 0.1;
inline constexpr double kCenterX = 0.0;
inline constexpr double kHomeLift = 0.3;

/// Slot positions in slot units; x = 0.3 + 0.2 * slot.
struct SlotGrid {
  std::vector<double> train = {0, 1, 2, 3, 4};
  std::vector<double> eval = {-0.5, 0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4, 4.5};
  static double to_x(double slot) { return 0.3 + 0.2 * slot; }
  static bool reachable(double slot) { return slot >= -0.5 - 1e-9 && slot <= 4.5 + 1e-9; }
};

struct WorldState {
  std::vector<double> angle = std::vector<double>(kJoints, 0.0);
  std::vector<double> velocity = std::vector<double>(kJoints, 0.0);
  /// Applied actuator effort (actuated joints) or spring torque (passive).
  std::vector<double> torque = std::vector<double>(kJoints, 0.0);
  double object_x = 0.0;
  double object_z = 0.0;
  bool grasped = false;
  double max_object_z = 0.0;
  std::uint64_t steps = 0;

  /// Arm at home with the object at `object_x`.
  static WorldState home(double object_x);
  JointRecord follower() const;
};

/// Deterministic rasterizer with area-coverage antialiasing. Pixel column
/// of world x is (x + 0.2) * 40, pixel row of height z is 48 - 40 z.
Frame render(const WorldState& state);

/// One physics step. Actuated joints: double integrator of inertia kInertia under
/// u = Kp (target - angle) - Kd velocity + feedforward, backward Euler, so a
/// step response never overshoots. Passive joints are springs driven by the
/// base acceleration. `noise` (optional) adds to each actuator effort.
WorldState follower_dynamics_step(const WorldState& state, const JointRecord& command, double dt,
                                  const std::vector<double>* noise = nullptr);

/// Slowly varying effort disturbance on the actuated joints: one
/// Ornstein-Uhlenbeck process per joint, stationary from the first draw.
/// Demonstrations and evaluation both see it, so the follower drifts off
/// the leader and copying the follower state is not a good policy.
class Disturbance {
 public:
  static constexpr double kStd = 0.4;  ///< N m, about 0.02 rad of drift at Kp
  static constexpr double kTau = 0.3;  ///< s

  explicit Disturbance(std::mt19937_64& rng);
  /// Advances by dt and returns the effort per joint (zero on passive joints).
  const std::vector<double>& step(double dt);

 private:
  std::mt19937_64* rng_;
  std::vector<double> value_;
};

/// Scripted leader with minimum-jerk phases and a follower that tracks it
/// under a Disturbance. Joint streams at 500 Hz, frames at 50 Hz.
Trajectory teacher_demonstrate(double slot, std::uint64_t seed);

/// Leader command for the passive joints is ignored by the follower.
class SimEnv : public Environment {
 public:
  SimEnv(double slot, std::uint64_t seed, double duration_s = 7.0);
  // the disturbance draws from rng_
  SimEnv(const SimEnv&) = delete;
  SimEnv& operator=(const SimEnv&) = delete;
  Frame render() const override { return sim::render(state_); }
  JointRecord follower() const override { return state_.follower(); }
  void apply(const JointRecord& command) override;
  bool terminal() const override;
  bool success() const override;
  const WorldState& state() const { return state_; }

 private:
  WorldState state_;
  std::mt19937_64 rng_;
  Disturbance disturbance_;
  std::size_t max_steps_;
};

bool episode_success(const WorldState& state);

struct SuccessTable {
  std::vector<double> slots;
  std::vector<double> success_percent;
  double total_percent = 0.0;
  std::size_t trials = 0;

  /// Two text rows like the results table: slot header, then percentages.
  std::string format() const;
  std::string csv() const;
};

using ControllerFactory = std::function<std::unique_ptr<Controller>()>;

/// trials_per_slot episodes per slot; trial k of slot i uses an env seeded
/// from (seed, i, k), so the table does not depend on `threads`.
SuccessTable evaluate(const ControllerFactory& make_controller, const std::vector<double>& slots,
                      std::size_t trials_per_slot, std::uint64_t seed, std::size_t threads = 1);

/// Runs body(0..n-1) on up to `threads` threads; rethrows the first error.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

/// Replays a recorded leader stream at the control rate, ignoring inputs.
class ReplayController : public Controller {
 public:
  explicit ReplayController(std::vector<JointRecord> commands);
  void reset() override { next_ = 0; }
  JointRecord act(const Frame& frame, const JointRecord& follower) override;

 private:
  std::vector<JointRecord> commands_;
  std::size_t next_ = 0;
};

/// Seed mixing for derived streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

}  // namespace eli::sim
