#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "eli/policy.hpp"

namespace eli::train {

/// Keeps joint records phase, phase + f, phase + 2f, ... with
/// f = joint_rate / target_rate. Frames are resampled to the target rate
/// from offset 0, so output frame k pairs with source joint step f k + phase.
Trajectory downsample(const Trajectory& t, double target_rate_hz, std::size_t phase = 0);
/// All f phase offsets of `t`.
std::vector<Trajectory> downsample_phases(const Trajectory& t, double target_rate_hz);
/// Integer factor source/target; throws if the rates do not divide.
std::size_t rate_factor(double source_hz, double target_hz);

/// ceil(mean + 2 std) of the lengths, population std.
std::size_t pad_length(const std::vector<std::size_t>& lengths);
/// Truncates or extends by repeating the last joint record and frame.
Trajectory pad_to(const Trajectory& t, std::size_t length);
/// Pads every trajectory to pad_length of their joint stream lengths.
std::vector<Trajectory> pad_sequences(const std::vector<Trajectory>& seqs);

/// Adds N(0, variance) to every element where `active` is true (or to all
/// elements when `active` is empty). Draws in row-major order.
void augment(std::vector<double>& values, double variance, std::mt19937_64& rng,
             const std::vector<bool>& active = {});

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update of every parameter in the store.
void adam_step(ParameterStore& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& cfg = {});

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 300;
  double noise_variance = 0.01;
  std::uint64_t seed = 1;
  /// Export every downsampling phase as its own sequence.
  bool phase_augment = true;
  double control_rate = 50.0;

  void validate() const;
};

/// Whole demonstrations at the native rates, split by role.
struct Dataset {
  std::vector<Trajectory> train;
  std::vector<Trajectory> val;
};

struct EpochLoss {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  Policy policy;  ///< parameters of the best validation epoch
  std::vector<EpochLoss> curve;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  std::size_t pad_length = 0;
  std::size_t train_sequences = 0;
  std::size_t val_sequences = 0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

/// Fits normalization on the training split, then trains with full-sequence
/// BPTT. The loss is the MSE of denormalized outputs against the next leader
/// record, fixed joints excluded.
TrainResult train(const TrainConfig& cfg, const PolicyConfig& policy_cfg, const Dataset& data,
                  const EpochCallback& on_epoch = {});

/// Weight per output channel: 1 for free channels, 0 for fixed joints.
std::vector<double> loss_mask(const PolicyConfig& cfg);

/// Denormalized masked MSE of `policy` on whole sequences (no noise).
double evaluate_loss(const Policy& policy, const std::vector<Trajectory>& seqs,
                     std::size_t pad_length, std::size_t batch_size = 16);

std::string loss_csv(const std::vector<EpochLoss>& curve);

}  // namespace eli::train
