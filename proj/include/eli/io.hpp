#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "eli/policy.hpp"
#include "eli/training.hpp"

namespace eli::io {

/// IO and format failures; the message names the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trajectory container: magic "ILTRJ1", fixed header, then leader and
// follower blocks as little-endian binary32 [steps x 3 x joints] and the
// frames as raw RGB8 [frames x size x size x 3].
std::vector<std::uint8_t> encode_trajectory(const Trajectory& t);
Trajectory decode_trajectory(const std::vector<std::uint8_t>& bytes, const std::string& origin);
void write_trajectory(const std::filesystem::path& path, const Trajectory& t);
Trajectory read_trajectory(const std::filesystem::path& path);

struct TrajectoryHeader {
  std::uint32_t joint_count = 0;
  double joint_rate_hz = 0.0;
  double frame_rate_hz = 0.0;
  std::uint64_t leader_steps = 0;
  std::uint64_t follower_steps = 0;
  std::uint64_t frames = 0;
  std::uint32_t frame_size = 0;
  double slot = 0.0;
  std::uint64_t seed = 0;
  bool success = false;
};
TrajectoryHeader read_trajectory_header(const std::filesystem::path& path);

struct ManifestEntry {
  std::string file;  ///< relative to the manifest directory
  double slot = 0.0;
  std::uint64_t seed = 0;
  bool train = true;
  double joint_rate_hz = 0.0;
  double frame_rate_hz = 0.0;
  std::uint64_t joint_steps = 0;
  std::uint64_t frames = 0;
};

struct Manifest {
  int format_version = 1;
  std::uint64_t creation_seed = 0;
  std::size_t episodes_per_slot = 0;
  std::vector<double> train_slots;
  std::vector<double> eval_slots;
  std::vector<ManifestEntry> entries;
};

inline constexpr const char* kManifestName = "manifest.json";

nlohmann::json manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const std::filesystem::path& dir, const Manifest& m);
/// Reads and checks every entry against its file header.
Manifest read_manifest(const std::filesystem::path& dir);

/// Teacher demonstrations for every training slot; the last episode of
/// each slot is validation. Needs episodes_per_slot >= 2.
Manifest generate_dataset(const std::filesystem::path& dir, std::size_t episodes_per_slot,
                          std::uint64_t seed);
train::Dataset load_dataset(const std::filesystem::path& dir);

nlohmann::json policy_config_to_json(const PolicyConfig& c);
PolicyConfig policy_config_from_json(const nlohmann::json& j);

struct Checkpoint {
  Policy policy;
  nlohmann::json meta;  ///< free-form: training config, seed, losses
};

// Checkpoint: magic "ILCKPT", version, JSON header (policy config,
// normalization, fixed-joint mask, meta), then named parameter blocks of
// little-endian binary64 with shape prefixes.
void save_checkpoint(const std::filesystem::path& path, const Policy& policy,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace eli::io
