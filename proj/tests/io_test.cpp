#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "eli/config.hpp"
#include "eli/io.hpp"
#include "eli/sim.hpp"

namespace eli::io {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("eli_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

TEST(TrajectoryFile, RoundTripIsByteIdentical) {
  TempDir dir;
  const Trajectory t = sim::teacher_demonstrate(2.0, 11);
  write_trajectory(dir.path() / "a.iltrj", t);
  const Trajectory back = read_trajectory(dir.path() / "a.iltrj");
  write_trajectory(dir.path() / "b.iltrj", back);
  EXPECT_EQ(file_bytes(dir.path() / "a.iltrj"), file_bytes(dir.path() / "b.iltrj"));

  ASSERT_EQ(back.leader.size(), t.leader.size());
  ASSERT_EQ(back.frames.size(), t.frames.size());
  EXPECT_EQ(back.slot, 2.0);
  EXPECT_EQ(back.seed, 11u);
  EXPECT_EQ(back.success, t.success);
  EXPECT_EQ(back.frames[57].rgb, t.frames[57].rgb);
  // joints are stored as binary32
  for (std::size_t j = 0; j < sim::kJoints; ++j) {
    EXPECT_EQ(back.follower[123].torque[j], static_cast<float>(t.follower[123].torque[j]));
  }
  EXPECT_EQ(back.leader[0].role, JointRole::kLeader);
  EXPECT_EQ(back.follower[0].role, JointRole::kFollower);
}

TEST(TrajectoryFile, SizesFollowHeaderArithmetic) {
  const Trajectory t = sim::teacher_demonstrate(0.0, 1);
  const std::vector<std::uint8_t> bytes = encode_trajectory(t);
  const std::size_t header = 6 + 4 + 8 + 8 + 8 + 8 + 8 + 4 + 8 + 8 + 1;
  const std::size_t expected = header + 2 * t.leader.size() * 3 * sim::kJoints * 4 +
                               t.frames.size() * 64 * 64 * 3;
  EXPECT_EQ(bytes.size(), expected);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 6), "ILTRJ1");
}

TEST(TrajectoryFile, RejectsCorruptInput) {
  const Trajectory t = sim::teacher_demonstrate(0.0, 1);
  std::vector<std::uint8_t> bytes = encode_trajectory(t);
  std::vector<std::uint8_t> bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_trajectory(bad_magic, "x"), IoError);
  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 5);
  try {
    decode_trajectory(truncated, "cut.iltrj");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("cut.iltrj"), std::string::npos);
  }
  EXPECT_THROW(read_trajectory("/nonexistent/dir/t.iltrj"), IoError);
}

TEST(Dataset, DefaultSplitGivesTwentyFiveFiles) {
  TempDir dir;
  const Manifest m = generate_dataset(dir.path(), 5, 3);
  EXPECT_EQ(m.entries.size(), 25u);
  std::size_t train = 0;
  for (const auto& e : m.entries) {
    train += e.train;
    EXPECT_TRUE(fs::exists(dir.path() / e.file));
  }
  EXPECT_EQ(train, 20u);
  std::size_t files = 0;
  for (const auto& p : fs::directory_iterator(dir.path())) files += p.path().extension() == ".iltrj";
  EXPECT_EQ(files, 25u);

  const Manifest back = read_manifest(dir.path());
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(m));
  const train::Dataset d = load_dataset(dir.path());
  EXPECT_EQ(d.train.size(), 20u);
  EXPECT_EQ(d.val.size(), 5u);
}

TEST(Dataset, DeterministicAndValidated) {
  TempDir a, b;
  generate_dataset(a.path() / "d", 2, 8);
  generate_dataset(b.path() / "d", 2, 8);
  for (const auto& p : fs::directory_iterator(a.path() / "d")) {
    EXPECT_EQ(file_bytes(p.path()), file_bytes(b.path() / "d" / p.path().filename()))
        << p.path().filename();
  }
  EXPECT_THROW(generate_dataset(a.path() / "e", 1, 8), std::invalid_argument);

  // a missing file is reported by path
  const Manifest m = read_manifest(a.path() / "d");
  fs::remove(a.path() / "d" / m.entries[3].file);
  try {
    read_manifest(a.path() / "d");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(m.entries[3].file), std::string::npos);
  }
  // a file that does not match its entry is rejected
  fs::copy_file(a.path() / "d" / m.entries[0].file, a.path() / "d" / m.entries[3].file);
  EXPECT_THROW(read_manifest(a.path() / "d"), IoError);
}

Policy small_policy() {
  RunConfig c = desk_preset();
  c.policy.lstm_units = 8;
  c.policy.encoder.hidden = 8;
  Policy p;
  p.config = c.policy;
  p.params = init_policy_params(p.config, 4);
  NormStats s;
  for (std::size_t i = 0; i < p.config.joint_dim(); ++i) {
    s.mean.push_back(0.1 * i);
    s.std.push_back(i % 8 == 1 ? 0.0 : 1.0 + 0.01 * i);
  }
  p.input_norm = s;
  p.output_norm = s;
  return p;
}

TEST(CheckpointFile, RoundTripIsExact) {
  TempDir dir;
  const Policy p = small_policy();
  save_checkpoint(dir.path() / "p.ckpt", p, {{"seed", 4}});
  const Checkpoint c = load_checkpoint(dir.path() / "p.ckpt");
  EXPECT_EQ(policy_config_to_json(c.policy.config), policy_config_to_json(p.config));
  ASSERT_EQ(c.policy.params.size(), p.params.size());
  for (std::size_t i = 0; i < p.params.size(); ++i) {
    EXPECT_EQ(c.policy.params.name(i), p.params.name(i));
    EXPECT_EQ(c.policy.params.value(i).to_vector(), p.params.value(i).to_vector());
  }
  EXPECT_EQ(c.policy.input_norm->mean, p.input_norm->mean);
  EXPECT_EQ(c.policy.output_norm->std, p.output_norm->std);
  EXPECT_EQ(c.meta.at("seed"), 4);
  save_checkpoint(dir.path() / "q.ckpt", c.policy, c.meta);
  EXPECT_EQ(file_bytes(dir.path() / "p.ckpt"), file_bytes(dir.path() / "q.ckpt"));
}

TEST(CheckpointFile, RejectsMismatches) {
  TempDir dir;
  Policy q = small_policy();
  ParameterStore wrong;
  for (std::size_t i = 0; i + 1 < q.params.size(); ++i) wrong.add(q.params.name(i), q.params.value(i));
  q.params = wrong;
  save_checkpoint(dir.path() / "short.ckpt", q);
  try {
    load_checkpoint(dir.path() / "short.ckpt");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("parameter count"), std::string::npos);
  }
  std::ofstream(dir.path() / "junk.ckpt") << "hello";
  EXPECT_THROW(load_checkpoint(dir.path() / "junk.ckpt"), IoError);
  Policy no_norm = small_policy();
  no_norm.input_norm.reset();
  EXPECT_THROW(save_checkpoint(dir.path() / "n.ckpt", no_norm), std::invalid_argument);
}

}  // namespace
}  // namespace eli::io

namespace eli {
namespace {

TEST(RunConfigText, DefaultsAreTheDeskPreset) {
  std::vector<std::string> defaulted;
  const RunConfig c = parse_run_config("# nothing set\n\n", &defaulted);
  EXPECT_EQ(c.policy.lstm_layers, 2u);
  EXPECT_EQ(c.policy.lstm_units, 64u);
  EXPECT_EQ(c.train.epochs, 300u);
  EXPECT_EQ(c.train.batch_size, 16u);
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-3);
  EXPECT_DOUBLE_EQ(c.train.noise_variance, 0.01);
  EXPECT_EQ(defaulted.size(), run_config_keys().size() - 1);
}

TEST(RunConfigText, KeysOverridePreset) {
  const RunConfig c = parse_run_config(
      "preset = paper\nencoder = cnn_spatial_softmax\neach_layer_input = true\n"
      "epochs = 12   # short\n");
  EXPECT_EQ(c.policy.lstm_layers, 6u);
  EXPECT_EQ(c.policy.lstm_units, 400u);
  EXPECT_EQ(c.policy.encoder.kind, EncoderConfig::Kind::kCnnSpatialSoftmax);
  EXPECT_TRUE(c.policy.each_layer_input);
  EXPECT_EQ(c.train.epochs, 12u);
}

TEST(RunConfigText, FormatParsesBack) {
  RunConfig c = desk_preset();
  c.train.lr = 0.0003;
  c.policy.each_layer_input = false;
  c.policy.fixed_joints.clear();
  c.policy.fixed_values.clear();
  const std::string text = format_run_config(c);
  EXPECT_EQ(format_run_config(parse_run_config(text)), text);
}

void expect_key_error(const std::string& text, const std::string& key) {
  try {
    parse_run_config(text);
    FAIL() << text;
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), key) << e.what();
    EXPECT_NE(std::string(e.what()).find(key), std::string::npos);
  }
}

TEST(RunConfigText, ErrorsNameTheKey) {
  expect_key_error("learning_rate = 0.1\n", "learning_rate");
  expect_key_error("epochs = ten\n", "epochs");
  expect_key_error("epochs = 0\n", "epochs");
  expect_key_error("lr = -1\n", "lr");
  expect_key_error("each_layer_input = maybe\n", "each_layer_input");
  expect_key_error("encoder = resnet\n", "encoder");
  expect_key_error("lstm_layers = 0\n", "lstm_layers");
  expect_key_error("fixed_joints = 1,2\n", "fixed_joints");
  expect_key_error("fixed_joints = 9\nfixed_values = 1\n", "fixed_joints");
  expect_key_error("encoder = cnn_spatial_softmax\n", "conv_channels");
  expect_key_error("epochs = 3\nepochs = 4\n", "epochs");
  expect_key_error("preset = huge\n", "preset");
}

}  // namespace
}  // namespace eli
