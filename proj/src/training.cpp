#include "eli/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "eli/ops.hpp"

namespace eli::train {

std::size_t rate_factor(double source_hz, double target_hz) {
  if (!(source_hz > 0.0) || !(target_hz > 0.0)) {
    throw std::invalid_argument("downsample: rates must be positive");
  }
  const double ratio = source_hz / target_hz;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * ratio) {
    std::ostringstream msg;
    msg << "downsample: " << source_hz << " Hz is not an integer multiple of " << target_hz
        << " Hz";
    throw std::invalid_argument(msg.str());
  }
  return static_cast<std::size_t>(rounded);
}

Trajectory downsample(const Trajectory& t, double target_rate_hz, std::size_t phase) {
  const std::size_t f = rate_factor(t.joint_rate_hz, target_rate_hz);
  if (phase >= f) {
    throw std::invalid_argument("downsample: phase " + std::to_string(phase) +
                                " must be below the factor " + std::to_string(f));
  }
  Trajectory out;
  out.joint_rate_hz = target_rate_hz;
  out.frame_rate_hz = target_rate_hz;
  out.slot = t.slot;
  out.seed = t.seed;
  out.success = t.success;
  for (std::size_t i = phase; i < t.leader.size(); i += f) out.leader.push_back(t.leader[i]);
  for (std::size_t i = phase; i < t.follower.size(); i += f) out.follower.push_back(t.follower[i]);
  if (!t.frames.empty()) {
    const std::size_t ff = rate_factor(t.frame_rate_hz, target_rate_hz);
    for (std::size_t i = 0; i < t.frames.size(); i += ff) out.frames.push_back(t.frames[i]);
  }
  return out;
}

std::vector<Trajectory> downsample_phases(const Trajectory& t, double target_rate_hz) {
  const std::size_t f = rate_factor(t.joint_rate_hz, target_rate_hz);
  std::vector<Trajectory> out;
  for (std::size_t p = 0; p < f; ++p) out.push_back(downsample(t, target_rate_hz, p));
  return out;
}

std::size_t pad_length(const std::vector<std::size_t>& lengths) {
  if (lengths.empty()) throw std::invalid_argument("pad_sequences: no sequences");
  const double n = static_cast<double>(lengths.size());
  double mean = 0.0;
  for (std::size_t l : lengths) mean += static_cast<double>(l);
  mean /= n;
  double var = 0.0;
  for (std::size_t l : lengths) var += (l - mean) * (l - mean);
  var /= n;
  // guard the ceil against rounding just above an integer
  const double target = mean + 2.0 * std::sqrt(var);
  const double nearest = std::round(target);
  if (std::abs(target - nearest) < 1e-9) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(target));
}

namespace {

template <typename T>
void resize_repeating(std::vector<T>& v, std::size_t length) {
  if (v.empty() || v.size() == length) return;
  if (v.size() > length) {
    v.resize(length);
  } else {
    const T last = v.back();
    v.resize(length, last);
  }
}

}  // namespace

Trajectory pad_to(const Trajectory& t, std::size_t length) {
  if (length == 0) throw std::invalid_argument("pad_sequences: length must be positive");
  Trajectory out = t;
  resize_repeating(out.leader, length);
  resize_repeating(out.follower, length);
  if (!out.frames.empty()) {
    const double ratio = t.joint_rate_hz / t.frame_rate_hz;
    resize_repeating(out.frames, static_cast<std::size_t>(
                                     std::ceil(static_cast<double>(length) / ratio)));
  }
  return out;
}

std::vector<Trajectory> pad_sequences(const std::vector<Trajectory>& seqs) {
  std::vector<std::size_t> lengths;
  for (const auto& s : seqs) lengths.push_back(s.leader.size());
  const std::size_t len = pad_length(lengths);
  std::vector<Trajectory> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(pad_to(s, len));
  return out;
}

void augment(std::vector<double>& values, double variance, std::mt19937_64& rng,
             const std::vector<bool>& active) {
  if (variance < 0.0) throw std::invalid_argument("augment: variance must be nonnegative");
  if (variance == 0.0) return;
  std::normal_distribution<double> noise(0.0, std::sqrt(variance));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!active.empty() && !active[i % active.size()]) continue;
    values[i] += noise(rng);
  }
}

void adam_step(ParameterStore& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& cfg) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m.emplace_back(params.value(i).size(), 0.0);
      state.v.emplace_back(params.value(i).size(), 0.0);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params.value(i).shape()) {
      throw std::invalid_argument("adam: gradient for '" + params.name(i) + "' has shape " +
                                  shape_string(grads[i].shape()) + ", parameter has " +
                                  shape_string(params.value(i).shape()));
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double> w = params.value(i).to_vector();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      w[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
    params.set(i, Tensor::adopt(params.value(i).shape(), std::move(w)));
  }
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(lr > 0.0)) fail("lr must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (epochs == 0) fail("epochs must be positive");
  if (!(noise_variance >= 0.0)) fail("noise_variance must be nonnegative");
  if (!(control_rate > 0.0)) fail("control_rate must be positive");
}

std::vector<double> loss_mask(const PolicyConfig& cfg) {
  const std::vector<bool> free = free_channel_mask(cfg);
  return std::vector<double>(free.begin(), free.end());
}

namespace {

// A training sequence viewed through a source trajectory: joint step t maps
// to source record stride * t + phase, clamped to the sequence length, which
// is the same as padding by repetition.
struct SeqRef {
  const Trajectory* traj = nullptr;
  std::size_t stride = 1;
  std::size_t phase = 0;
  std::size_t length = 0;
  std::size_t frame_stride = 1;

  std::size_t record(std::size_t t) const { return stride * std::min(t, length - 1) + phase; }
  std::size_t frame(std::size_t t) const {
    return std::min(std::min(t, length - 1) * frame_stride, traj->frames.size() - 1);
  }
};

SeqRef make_ref(const Trajectory& t, double rate, std::size_t phase) {
  SeqRef r;
  r.traj = &t;
  r.stride = rate_factor(t.joint_rate_hz, rate);
  r.phase = phase;
  const std::size_t n = std::min(t.leader.size(), t.follower.size());
  if (n <= phase) throw std::invalid_argument("training: sequence shorter than its phase offset");
  r.length = (n - phase + r.stride - 1) / r.stride;
  r.frame_stride = rate_factor(t.frame_rate_hz, rate);
  if (t.frames.empty()) throw std::invalid_argument("training: sequence without frames");
  if (r.length < 2) throw std::invalid_argument("training: sequence needs at least 2 records");
  return r;
}

std::vector<double> channel_scale(const NormStats& s) {
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s.active(i) ? s.std[i] : 1.0;
  return out;
}

struct BatchLoss {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

// One pass over a batch for pad length `pad`: pad - 1 prediction steps.
// With `rng` the inputs get noise and gradients are returned.
BatchLoss run_batch(const Policy& policy, const std::vector<SeqRef>& batch, std::size_t pad,
                    double noise_variance, std::mt19937_64* rng) {
  const PolicyConfig& cfg = policy.config;
  const NormStats& in_norm = *policy.input_norm;
  const NormStats& out_norm = *policy.output_norm;
  const bool training = rng != nullptr;
  const std::size_t B = batch.size();
  const std::size_t steps = pad - 1;
  const std::size_t jd = cfg.joint_dim();
  const std::size_t img = cfg.encoder.image_size;
  const std::size_t pixels = 3 * img * img;

  // encode each distinct frame of the batch once
  std::map<std::pair<const Trajectory*, std::size_t>, std::size_t> row_of;
  for (const SeqRef& s : batch) {
    for (std::size_t t = 0; t < steps; ++t) row_of.emplace(std::make_pair(s.traj, s.frame(t)), 0);
  }
  std::vector<double> images(row_of.size() * pixels);
  std::size_t row = 0;
  for (auto& [key, r] : row_of) {
    r = row;
    const Tensor im = frame_to_tensor(key.first->frames[key.second]);
    std::copy(im.values().begin(), im.values().end(), images.begin() + row * pixels);
    ++row;
  }

  Graph g;
  BoundParameters p(g, policy.params, training);
  const Var z_all = encode(cfg.encoder, p, g.constant(Tensor::adopt(
                                               Shape{row_of.size(), 3, img, img}, std::move(images))));
  const PolicyVars vars = bind_policy(cfg, p);
  LstmVarState state = constant_state(g, init_state(cfg, B));

  std::vector<bool> noisy(jd);
  for (std::size_t i = 0; i < jd; ++i) noisy[i] = in_norm.active(i);

  std::vector<Var> outputs;
  outputs.reserve(steps);
  std::vector<double> targets;
  targets.reserve(steps * B * jd);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<double> joints;
    joints.reserve(B * jd);
    std::vector<std::size_t> rows(B);
    for (std::size_t b = 0; b < B; ++b) {
      const SeqRef& s = batch[b];
      std::vector<double> x = s.traj->follower[s.record(t)].packed();
      if (training) augment(x, noise_variance, *rng, noisy);
      x = in_norm.normalize(x);
      joints.insert(joints.end(), x.begin(), x.end());
      const std::vector<double> y = out_norm.normalize(s.traj->leader[s.record(t + 1)].packed());
      targets.insert(targets.end(), y.begin(), y.end());
      rows[b] = row_of.at({s.traj, s.frame(t)});
    }
    const Var z = gather_rows(z_all, std::move(rows));
    NetworkStep step = network_step_from_features(
        cfg, vars, g.constant(Tensor::adopt(Shape{B, jd}, std::move(joints))), z, state);
    outputs.push_back(step.output);
    state = std::move(step.state);
  }

  // squared error in denormalized units: weight each normalized channel by scale^2
  const std::vector<double> mask = loss_mask(cfg);
  const std::vector<double> chan = channel_scale(out_norm);
  std::vector<double> weight(steps * B * jd);
  double weight_sum = 0.0, mask_sum = 0.0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    const std::size_t c = i % jd;
    weight[i] = mask[c] * chan[c] * chan[c];
    weight_sum += weight[i];
    mask_sum += mask[c];
  }
  const Var pred = concat(outputs, 0);
  const Var target = g.constant(Tensor::adopt(Shape{steps * B, jd}, std::move(targets)));
  const Var loss =
      scale(mse(pred, target, Tensor::adopt(Shape{steps * B, jd}, std::move(weight))),
            weight_sum / mask_sum);
  BatchLoss out;
  out.loss = loss.value().item();
  if (training && std::isfinite(out.loss)) {
    const Gradients grads = g.backward(loss);
    out.grads.reserve(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out.grads.push_back(grads.of(p.at(i)));
  }
  return out;
}

double mean_loss(const Policy& policy, const std::vector<SeqRef>& seqs, std::size_t pad,
                 std::size_t batch_size) {
  double total = 0.0;
  for (std::size_t begin = 0; begin < seqs.size(); begin += batch_size) {
    const std::size_t end = std::min(seqs.size(), begin + batch_size);
    const std::vector<SeqRef> batch(seqs.begin() + begin, seqs.begin() + end);
    total += run_batch(policy, batch, pad, 0.0, nullptr).loss * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(seqs.size());
}

std::vector<SeqRef> sequences(const std::vector<Trajectory>& episodes, double rate,
                              bool all_phases) {
  std::vector<SeqRef> out;
  for (const Trajectory& t : episodes) {
    const std::size_t f = rate_factor(t.joint_rate_hz, rate);
    for (std::size_t p = 0; p < (all_phases ? f : 1); ++p) out.push_back(make_ref(t, rate, p));
  }
  return out;
}

}  // namespace

double evaluate_loss(const Policy& policy, const std::vector<Trajectory>& seqs,
                     std::size_t pad_length, std::size_t batch_size) {
  if (seqs.empty()) throw std::invalid_argument("evaluate_loss: no sequences");
  if (pad_length < 2) throw std::invalid_argument("evaluate_loss: pad length must be at least 2");
  std::vector<SeqRef> refs;
  for (const Trajectory& t : seqs) refs.push_back(make_ref(t, t.joint_rate_hz, 0));
  return mean_loss(policy, refs, pad_length, batch_size);
}

TrainResult train(const TrainConfig& cfg, const PolicyConfig& policy_cfg, const Dataset& data,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  policy_cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("train: empty training split");
  if (data.val.empty()) throw std::invalid_argument("train: empty validation split");

  const std::vector<SeqRef> train_seqs = sequences(data.train, cfg.control_rate, cfg.phase_augment);
  const std::vector<SeqRef> val_seqs = sequences(data.val, cfg.control_rate, cfg.phase_augment);
  std::vector<std::size_t> lengths;
  for (const SeqRef& s : train_seqs) lengths.push_back(s.length);
  const std::size_t pad = pad_length(lengths);
  if (pad < 2) throw std::invalid_argument("train: pad length below 2");

  // statistics from the training split only, over every record it holds
  std::vector<std::vector<double>> in_rows, out_rows;
  for (const Trajectory& t : data.train) {
    if (t.follower.empty() || t.follower.front().joint_count() != policy_cfg.joint_count) {
      throw std::invalid_argument("train: trajectory joint count differs from the policy");
    }
    for (const JointRecord& r : t.follower) in_rows.push_back(r.packed());
    for (const JointRecord& r : t.leader) out_rows.push_back(r.packed());
  }
  std::vector<bool> excluded(policy_cfg.joint_dim(), false);
  const std::vector<bool> free = free_channel_mask(policy_cfg);
  for (std::size_t i = 0; i < excluded.size(); ++i) excluded[i] = !free[i];

  TrainResult result;
  Policy policy;
  policy.config = policy_cfg;
  policy.params = init_policy_params(policy_cfg, cfg.seed);
  policy.input_norm = NormStats::fit(in_rows, excluded);
  policy.output_norm = NormStats::fit(out_rows, excluded);
  result.pad_length = pad;
  result.train_sequences = train_seqs.size();
  result.val_sequences = val_seqs.size();

  std::mt19937_64 rng(cfg.seed ^ 0x5eedf00dULL);
  AdamState adam;
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;

  // group sequences by episode so a batch shares most of its frames
  std::vector<std::vector<std::size_t>> by_episode;
  {
    std::map<const Trajectory*, std::size_t> slot;
    for (std::size_t i = 0; i < train_seqs.size(); ++i) {
      auto [it, inserted] = slot.emplace(train_seqs[i].traj, by_episode.size());
      if (inserted) by_episode.emplace_back();
      by_episode[it->second].push_back(i);
    }
  }

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> episodes(by_episode.size());
    std::iota(episodes.begin(), episodes.end(), 0);
    std::shuffle(episodes.begin(), episodes.end(), rng);
    std::vector<std::size_t> order;
    for (std::size_t e : episodes) {
      std::vector<std::size_t> phases = by_episode[e];
      std::shuffle(phases.begin(), phases.end(), rng);
      order.insert(order.end(), phases.begin(), phases.end());
    }

    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<SeqRef> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(train_seqs[order[i]]);
      BatchLoss b = run_batch(policy, batch, pad, cfg.noise_variance, &rng);
      if (!std::isfinite(b.loss)) {
        throw DivergenceError(epoch, "training diverged at epoch " + std::to_string(epoch) +
                                         ": non-finite loss");
      }
      for (const Tensor& gr : b.grads) {
        if (!gr.all_finite()) {
          throw DivergenceError(epoch, "training diverged at epoch " + std::to_string(epoch) +
                                           ": non-finite gradient");
        }
      }
      adam_step(policy.params, b.grads, adam, adam_cfg);
      total += b.loss * static_cast<double>(batch.size());
    }

    EpochLoss e;
    e.epoch = epoch;
    e.train_mse = total / static_cast<double>(order.size());
    e.val_mse = mean_loss(policy, val_seqs, pad, cfg.batch_size);
    if (!std::isfinite(e.val_mse)) {
      throw DivergenceError(epoch, "training diverged at epoch " + std::to_string(epoch) +
                                       ": non-finite validation loss");
    }
    result.curve.push_back(e);
    if (e.val_mse < best) {
      best = e.val_mse;
      result.best_epoch = epoch;
      result.best_val_mse = e.val_mse;
      result.policy = policy;
    }
    if (on_epoch) on_epoch(e);
  }
  return result;
}

std::string loss_csv(const std::vector<EpochLoss>& curve) {
  std::ostringstream out;
  out.precision(10);
  out << "epoch,train_mse,val_mse\n";
  for (const EpochLoss& e : curve) out << e.epoch << ',' << e.train_mse << ',' << e.val_mse << '\n';
  return out.str();
}

}  // namespace eli::train
