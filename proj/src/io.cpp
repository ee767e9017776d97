#include "eli/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "eli/sim.hpp"

namespace eli::io {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian and written from host order");

namespace {

constexpr char kTrajectoryMagic[6] = {'I', 'L', 'T', 'R', 'J', '1'};
constexpr char kCheckpointMagic[6] = {'I', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string origin)
      : bytes_(bytes), origin_(std::move(origin)) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > bytes_.size() - pos_) fail("truncated file");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const { throw IoError(origin_ + ": " + what); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

void put_records(Writer& w, const std::vector<JointRecord>& records, std::size_t joints) {
  for (const JointRecord& r : records) {
    if (r.angle.size() != joints || r.velocity.size() != joints || r.torque.size() != joints) {
      throw std::invalid_argument("trajectory: records have inconsistent joint counts");
    }
    for (double v : r.packed()) w.put(static_cast<float>(v));
  }
}

std::vector<JointRecord> get_records(Reader& r, std::uint64_t steps, std::size_t joints,
                                     JointRole role) {
  std::vector<JointRecord> out;
  out.reserve(steps);
  std::vector<double> packed(3 * joints);
  for (std::uint64_t s = 0; s < steps; ++s) {
    for (double& v : packed) v = r.get<float>();
    out.push_back(JointRecord::unpack(packed, role));
  }
  return out;
}

TrajectoryHeader get_header(Reader& r) {
  const std::uint8_t* magic = r.take(sizeof(kTrajectoryMagic));
  if (std::memcmp(magic, kTrajectoryMagic, sizeof(kTrajectoryMagic)) != 0) {
    r.fail("not a trajectory file (bad magic)");
  }
  TrajectoryHeader h;
  h.joint_count = r.get<std::uint32_t>();
  h.joint_rate_hz = r.get<double>();
  h.frame_rate_hz = r.get<double>();
  h.leader_steps = r.get<std::uint64_t>();
  h.follower_steps = r.get<std::uint64_t>();
  h.frames = r.get<std::uint64_t>();
  h.frame_size = r.get<std::uint32_t>();
  h.slot = r.get<double>();
  h.seed = r.get<std::uint64_t>();
  h.success = r.get<std::uint8_t>() != 0;
  return h;
}

}  // namespace

std::vector<std::uint8_t> encode_trajectory(const Trajectory& t) {
  const std::size_t joints = t.leader.empty() ? (t.follower.empty() ? 0 : t.follower[0].joint_count())
                                              : t.leader[0].joint_count();
  const std::size_t size = t.frames.empty() ? 0 : t.frames[0].size;
  Writer w;
  w.raw(kTrajectoryMagic, sizeof(kTrajectoryMagic));
  w.put(static_cast<std::uint32_t>(joints));
  w.put(t.joint_rate_hz);
  w.put(t.frame_rate_hz);
  w.put(static_cast<std::uint64_t>(t.leader.size()));
  w.put(static_cast<std::uint64_t>(t.follower.size()));
  w.put(static_cast<std::uint64_t>(t.frames.size()));
  w.put(static_cast<std::uint32_t>(size));
  w.put(t.slot);
  w.put(t.seed);
  w.put(static_cast<std::uint8_t>(t.success ? 1 : 0));
  put_records(w, t.leader, joints);
  put_records(w, t.follower, joints);
  for (const Frame& f : t.frames) {
    if (f.size != size || f.rgb.size() != size * size * 3) {
      throw std::invalid_argument("trajectory: frames have inconsistent sizes");
    }
    w.raw(f.rgb.data(), f.rgb.size());
  }
  return std::move(w.bytes());
}

Trajectory decode_trajectory(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  const TrajectoryHeader h = get_header(r);
  const std::uint64_t record_bytes = 3ull * h.joint_count * sizeof(float);
  const std::uint64_t frame_bytes = 3ull * h.frame_size * h.frame_size;
  const std::uint64_t expected =
      (h.leader_steps + h.follower_steps) * record_bytes + h.frames * frame_bytes;
  if (expected != r.remaining()) {
    r.fail("block sizes do not match the header (expected " + std::to_string(expected) +
           " bytes after the header, found " + std::to_string(r.remaining()) + ")");
  }
  Trajectory t;
  t.joint_rate_hz = h.joint_rate_hz;
  t.frame_rate_hz = h.frame_rate_hz;
  t.slot = h.slot;
  t.seed = h.seed;
  t.success = h.success;
  t.leader = get_records(r, h.leader_steps, h.joint_count, JointRole::kLeader);
  t.follower = get_records(r, h.follower_steps, h.joint_count, JointRole::kFollower);
  t.frames.resize(h.frames);
  for (Frame& f : t.frames) {
    f.size = h.frame_size;
    const std::uint8_t* p = r.take(frame_bytes);
    f.rgb.assign(p, p + frame_bytes);
  }
  return t;
}

void write_trajectory(const std::filesystem::path& path, const Trajectory& t) {
  write_bytes(path, encode_trajectory(t));
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  return decode_trajectory(read_bytes(path), path.string());
}

TrajectoryHeader read_trajectory_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  std::vector<std::uint8_t> head(128);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  Reader r(head, path.string());
  return get_header(r);
}

nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json j;
  j["format_version"] = m.format_version;
  j["creation_seed"] = m.creation_seed;
  j["episodes_per_slot"] = m.episodes_per_slot;
  j["slot_grid"] = {{"train", m.train_slots}, {"eval", m.eval_slots}};
  nlohmann::json entries = nlohmann::json::array();
  for (const ManifestEntry& e : m.entries) {
    entries.push_back({{"file", e.file},
                       {"slot", e.slot},
                       {"seed", e.seed},
                       {"role", e.train ? "train" : "val"},
                       {"joint_rate_hz", e.joint_rate_hz},
                       {"frame_rate_hz", e.frame_rate_hz},
                       {"joint_steps", e.joint_steps},
                       {"frames", e.frames}});
  }
  j["entries"] = entries;
  return j;
}

Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    m.creation_seed = j.at("creation_seed").get<std::uint64_t>();
    m.episodes_per_slot = j.at("episodes_per_slot").get<std::size_t>();
    m.train_slots = j.at("slot_grid").at("train").get<std::vector<double>>();
    m.eval_slots = j.at("slot_grid").at("eval").get<std::vector<double>>();
    for (const auto& e : j.at("entries")) {
      ManifestEntry x;
      x.file = e.at("file").get<std::string>();
      x.slot = e.at("slot").get<double>();
      x.seed = e.at("seed").get<std::uint64_t>();
      const std::string role = e.at("role").get<std::string>();
      if (role != "train" && role != "val") throw IoError("manifest: unknown role '" + role + "'");
      x.train = role == "train";
      x.joint_rate_hz = e.at("joint_rate_hz").get<double>();
      x.frame_rate_hz = e.at("frame_rate_hz").get<double>();
      x.joint_steps = e.at("joint_steps").get<std::uint64_t>();
      x.frames = e.at("frames").get<std::uint64_t>();
      m.entries.push_back(std::move(x));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("manifest: ") + e.what());
  }
  if (m.format_version != 1) {
    throw IoError("manifest: unsupported format version " + std::to_string(m.format_version));
  }
  return m;
}

void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
  write_text(dir / kManifestName, manifest_to_json(m).dump(2) + "\n");
}

Manifest read_manifest(const std::filesystem::path& dir) {
  const std::filesystem::path path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  Manifest m = manifest_from_json(j);
  for (const ManifestEntry& e : m.entries) {
    const std::filesystem::path file = dir / e.file;
    if (!std::filesystem::exists(file)) throw IoError(file.string() + ": listed in manifest but missing");
    const TrajectoryHeader h = read_trajectory_header(file);
    if (h.leader_steps != e.joint_steps || h.follower_steps != e.joint_steps ||
        h.frames != e.frames || h.joint_rate_hz != e.joint_rate_hz ||
        h.frame_rate_hz != e.frame_rate_hz || h.slot != e.slot || h.seed != e.seed) {
      throw IoError(file.string() + ": header does not match the manifest entry");
    }
  }
  return m;
}

Manifest generate_dataset(const std::filesystem::path& dir, std::size_t episodes_per_slot,
                          std::uint64_t seed) {
  if (episodes_per_slot < 2) {
    throw std::invalid_argument("gen-data: episodes per slot must be at least 2 (train + val)");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": " + ec.message());
  const sim::SlotGrid grid;
  Manifest m;
  m.creation_seed = seed;
  m.episodes_per_slot = episodes_per_slot;
  m.train_slots = grid.train;
  m.eval_slots = grid.eval;
  for (std::size_t i = 0; i < grid.train.size(); ++i) {
    for (std::size_t k = 0; k < episodes_per_slot; ++k) {
      const std::uint64_t ep_seed = sim::mix_seed(seed, i, k);
      const Trajectory t = sim::teacher_demonstrate(grid.train[i], ep_seed);
      char name[64];
      std::snprintf(name, sizeof(name), "slot%zu_ep%02zu.iltrj", i, k);
      write_trajectory(dir / name, t);
      ManifestEntry e;
      e.file = name;
      e.slot = t.slot;
      e.seed = t.seed;
      e.train = k + 1 < episodes_per_slot;
      e.joint_rate_hz = t.joint_rate_hz;
      e.frame_rate_hz = t.frame_rate_hz;
      e.joint_steps = t.leader.size();
      e.frames = t.frames.size();
      m.entries.push_back(std::move(e));
    }
  }
  write_manifest(dir, m);
  return m;
}

train::Dataset load_dataset(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir);
  train::Dataset d;
  for (const ManifestEntry& e : m.entries) {
    (e.train ? d.train : d.val).push_back(read_trajectory(dir / e.file));
  }
  return d;
}

nlohmann::json policy_config_to_json(const PolicyConfig& c) {
  return {{"encoder",
           {{"kind", encoder_kind_name(c.encoder.kind)},
            {"conv_channels", c.encoder.conv_channels},
            {"hidden", c.encoder.hidden},
            {"feature_dim", c.encoder.feature_dim},
            {"image_size", c.encoder.image_size}}},
          {"each_layer_input", c.each_layer_input},
          {"lstm_layers", c.lstm_layers},
          {"lstm_units", c.lstm_units},
          {"joint_count", c.joint_count},
          {"feature_dim", c.feature_dim},
          {"control_rate", c.control_rate},
          {"fixed_joints", c.fixed_joints},
          {"fixed_values", c.fixed_values}};
}

PolicyConfig policy_config_from_json(const nlohmann::json& j) {
  PolicyConfig c;
  const auto& e = j.at("encoder");
  c.encoder.kind = parse_encoder_kind(e.at("kind").get<std::string>());
  c.encoder.conv_channels = e.at("conv_channels").get<std::vector<std::size_t>>();
  c.encoder.hidden = e.at("hidden").get<std::size_t>();
  c.encoder.feature_dim = e.at("feature_dim").get<std::size_t>();
  c.encoder.image_size = e.at("image_size").get<std::size_t>();
  c.each_layer_input = j.at("each_layer_input").get<bool>();
  c.lstm_layers = j.at("lstm_layers").get<std::size_t>();
  c.lstm_units = j.at("lstm_units").get<std::size_t>();
  c.joint_count = j.at("joint_count").get<std::size_t>();
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.control_rate = j.at("control_rate").get<double>();
  c.fixed_joints = j.at("fixed_joints").get<std::vector<std::size_t>>();
  c.fixed_values = j.at("fixed_values").get<std::vector<double>>();
  c.validate();
  return c;
}

namespace {

nlohmann::json norm_to_json(const NormStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }

NormStats norm_from_json(const nlohmann::json& j) {
  NormStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  if (s.mean.size() != s.std.size()) throw IoError("checkpoint: mean and std lengths differ");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Policy& policy,
                     const nlohmann::json& meta) {
  if (!policy.input_norm || !policy.output_norm) {
    throw std::invalid_argument("checkpoint: policy has no normalization statistics");
  }
  nlohmann::json header;
  header["policy"] = policy_config_to_json(policy.config);
  header["input_norm"] = norm_to_json(*policy.input_norm);
  header["output_norm"] = norm_to_json(*policy.output_norm);
  const std::vector<bool> free = free_channel_mask(policy.config);
  header["fixed_joint_mask"] = std::vector<int>(free.begin(), free.end());
  header["meta"] = meta;
  const std::string text = header.dump();

  Writer w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint64_t>(text.size()));
  w.raw(text.data(), text.size());
  w.put(static_cast<std::uint64_t>(policy.params.size()));
  for (std::size_t i = 0; i < policy.params.size(); ++i) {
    const std::string& name = policy.params.name(i);
    const Tensor& v = policy.params.value(i);
    w.put(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.put(static_cast<std::uint32_t>(v.rank()));
    for (std::size_t d : v.shape()) w.put(static_cast<std::uint64_t>(d));
    w.raw(v.data(), v.size() * sizeof(double));
  }
  write_bytes(path, w.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  Reader r(bytes, path.string());
  if (std::memcmp(r.take(sizeof(kCheckpointMagic)), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    r.fail("not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = r.get<std::uint64_t>();
  const auto* text = reinterpret_cast<const char*>(r.take(header_len));
  Checkpoint ck;
  try {
    const nlohmann::json header = nlohmann::json::parse(text, text + header_len);
    ck.policy.config = policy_config_from_json(header.at("policy"));
    ck.policy.input_norm = norm_from_json(header.at("input_norm"));
    ck.policy.output_norm = norm_from_json(header.at("output_norm"));
    ck.meta = header.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    const auto* name = reinterpret_cast<const char*>(r.take(name_len));
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    const std::size_t n = element_count(shape);
    std::vector<double> values(n);
    std::memcpy(values.data(), r.take(n * sizeof(double)), n * sizeof(double));
    ck.policy.params.add(std::string(name, name_len), Tensor(shape, std::move(values)));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after parameter blocks");

  // parameters must be exactly those of a fresh policy with this config
  const ParameterStore expected = init_policy_params(ck.policy.config, 0);
  if (expected.size() != ck.policy.params.size()) {
    r.fail("parameter count " + std::to_string(ck.policy.params.size()) +
           " does not match the config (" + std::to_string(expected.size()) + ")");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const std::string& name = expected.name(i);
    if (!ck.policy.params.contains(name)) r.fail("missing parameter '" + name + "'");
    if (ck.policy.params.get(name).shape() != expected.value(i).shape()) {
      r.fail("parameter '" + name + "' has shape " +
             shape_string(ck.policy.params.get(name).shape()) + ", config expects " +
             shape_string(expected.value(i).shape()));
    }
  }
  const std::size_t jd = ck.policy.config.joint_dim();
  if (ck.policy.input_norm->size() != jd || ck.policy.output_norm->size() != jd) {
    r.fail("normalization statistics do not match the joint count");
  }
  return ck;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw IoError(path.string() + ": write failed");
}

}  // namespace eli::io
