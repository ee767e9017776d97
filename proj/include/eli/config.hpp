#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "eli/policy.hpp"
#include "eli/training.hpp"

namespace eli {

/// Config error that names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::invalid_argument("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  train::TrainConfig train;
  PolicyConfig policy;
};

/// 2 x 64 LSTM, small CNN+MLP encoder, 300 epochs: fits a single laptop core.
RunConfig desk_preset();
/// 6 x 400 LSTM, full-width encoder, 5000 epochs.
RunConfig paper_preset();

/// Flat `key = value` lines, `#` comments. `preset` (desk|paper) is applied
/// first wherever it appears; other keys override it. Unknown keys, bad
/// values and invalid combinations throw ConfigError.
RunConfig parse_run_config(const std::string& text, std::vector<std::string>* defaulted = nullptr);

/// Every key with its resolved value, one per line, parseable again.
std::string format_run_config(const RunConfig& cfg);

/// Keys understood by parse_run_config.
const std::vector<std::string>& run_config_keys();

}  // namespace eli
