#include "eli/config.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <sstream>

#include "eli/sim.hpp"

namespace eli {

RunConfig desk_preset() {
  RunConfig c;
  c.policy.encoder.kind = EncoderConfig::Kind::kCnnMlp;
  c.policy.encoder.conv_channels = {4, 8, 8};
  c.policy.encoder.hidden = 64;
  c.policy.lstm_layers = 2;
  c.policy.lstm_units = 64;
  c.policy.joint_count = sim::kJoints;
  c.policy.fixed_joints = {sim::kReach};
  c.policy.fixed_values = {sim::kReachHold};
  c.train.epochs = 300;
  return c;
}

RunConfig paper_preset() {
  RunConfig c;
  c.policy.encoder.kind = EncoderConfig::Kind::kCnnSpatialSoftmax;
  c.policy.encoder.conv_channels = {16, 32, 16};
  c.policy.lstm_layers = 6;
  c.policy.lstm_units = 400;
  c.policy.joint_count = sim::kJoints;
  c.policy.fixed_joints = {sim::kReach};
  c.policy.fixed_values = {sim::kReachHold};
  c.train.epochs = 5000;
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key, "cannot parse '" + v + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  for (const std::string& item : split_list(v)) out.push_back(parse_number<T>(key, item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  if (v.empty()) return "none";
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  return out.str();
}

using Setter = void (*)(RunConfig&, const std::string& key, const std::string& value);

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"encoder",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         try {
           c.policy.encoder.kind = parse_encoder_kind(v);
         } catch (const std::invalid_argument&) {
           throw ConfigError(k, "unknown encoder '" + v + "' (cnn_mlp or cnn_spatial_softmax)");
         }
       }},
      {"conv_channels",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.policy.encoder.conv_channels = parse_list<std::size_t>(k, v);
       }},
      {"hidden",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.policy.encoder.hidden = parse_number<std::size_t>(k, v);
       }},
      {"feature_dim",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.policy.feature_dim = parse_number<std::size_t>(k, v);
         c.policy.encoder.feature_dim = c.policy.feature_dim;
       }},
      {"each_layer_input",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.policy.each_layer_input = parse_bool(k, v);
       }},
      {"lstm_layers",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.policy.lstm_layers = parse_number<std::size_t>(k, v);
       }},
      {"lstm_units",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.policy.lstm_units = parse_number<std::size_t>(k, v);
       }},
      {"fixed_joints",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.policy.fixed_joints = parse_list<std::size_t>(k, v);
       }},
      {"fixed_values",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.policy.fixed_values = parse_list<double>(k, v);
       }},
      {"lr",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.lr = parse_number<double>(k, v);
       }},
      {"batch_size",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.batch_size = parse_number<std::size_t>(k, v);
       }},
      {"epochs",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.epochs = parse_number<std::size_t>(k, v);
       }},
      {"noise_variance",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.noise_variance = parse_number<double>(k, v);
       }},
      {"seed",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.seed = parse_number<std::uint64_t>(k, v);
       }},
      {"phase_augment",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.phase_augment = parse_bool(k, v);
       }},
      {"control_rate",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.control_rate = parse_number<double>(k, v);
         c.policy.control_rate = c.train.control_rate;
       }},
  };
  return table;
}

// Maps a validation message onto the key it concerns.
std::string key_for(const std::string& message) {
  static const std::vector<std::pair<std::string, std::string>> hints = {
      {"lstm_layers", "lstm_layers"}, {"lstm_units", "lstm_units"},
      {"feature_dim", "feature_dim"}, {"fixed_joints", "fixed_joints"},
      {"fixed_values", "fixed_values"},
      {"fixed joint", "fixed_joints"}, {"lr", "lr"},
      {"batch_size", "batch_size"},   {"epochs", "epochs"},
      {"noise_variance", "noise_variance"}, {"control_rate", "control_rate"},
      {"joint_count", "joint_count"}};
  for (const auto& [needle, key] : hints) {
    if (message.find(needle) != std::string::npos) return key;
  }
  return "encoder";
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k = {"preset"};
    for (const auto& [name, setter] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

RunConfig parse_run_config(const std::string& text, std::vector<std::string>* defaulted) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::string preset = "desk";
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(line, "line " + std::to_string(line_no) + " is not key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "preset") {
      if (value != "desk" && value != "paper") {
        throw ConfigError(key, "unknown preset '" + value + "' (desk or paper)");
      }
      preset = value;
      continue;
    }
    if (!setters().count(key)) throw ConfigError(key, "unknown key");
    if (value.empty()) throw ConfigError(key, "empty value");
    if (std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.first == key; })) {
      throw ConfigError(key, "given more than once");
    }
    entries.emplace_back(key, value);
  }
  RunConfig cfg = preset == "paper" ? paper_preset() : desk_preset();
  for (const auto& [key, value] : entries) setters().at(key)(cfg, key, value);
  if (defaulted) {
    defaulted->clear();
    for (const auto& [name, setter] : setters()) {
      if (std::none_of(entries.begin(), entries.end(), [&](const auto& e) { return e.first == name; })) {
        defaulted->push_back(name);
      }
    }
  }
  cfg.policy.control_rate = cfg.train.control_rate;
  try {
    cfg.policy.validate();
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key_for(e.what()), e.what());
  }
  if (cfg.policy.encoder.kind == EncoderConfig::Kind::kCnnSpatialSoftmax &&
      (cfg.policy.encoder.conv_channels.empty() ||
       2 * cfg.policy.encoder.conv_channels.back() != cfg.policy.feature_dim)) {
    throw ConfigError("conv_channels",
                      "spatial softmax needs the last conv to have feature_dim / 2 channels");
  }
  if (cfg.policy.encoder.conv_channels.empty()) throw ConfigError("conv_channels", "empty list");
  return cfg;
}

std::string format_run_config(const RunConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "encoder = " << encoder_kind_name(c.policy.encoder.kind) << '\n'
      << "conv_channels = " << join(c.policy.encoder.conv_channels) << '\n'
      << "hidden = " << c.policy.encoder.hidden << '\n'
      << "feature_dim = " << c.policy.feature_dim << '\n'
      << "each_layer_input = " << (c.policy.each_layer_input ? "true" : "false") << '\n'
      << "lstm_layers = " << c.policy.lstm_layers << '\n'
      << "lstm_units = " << c.policy.lstm_units << '\n'
      << "fixed_joints = " << join(c.policy.fixed_joints) << '\n'
      << "fixed_values = " << join(c.policy.fixed_values) << '\n'
      << "lr = " << c.train.lr << '\n'
      << "batch_size = " << c.train.batch_size << '\n'
      << "epochs = " << c.train.epochs << '\n'
      << "noise_variance = " << c.train.noise_variance << '\n'
      << "seed = " << c.train.seed << '\n'
      << "phase_augment = " << (c.train.phase_augment ? "true" : "false") << '\n'
      << "control_rate = " << c.train.control_rate << '\n';
  return out.str();
}

}  // namespace eli
