#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "emi/model.hpp"

namespace emi {

struct TrainConfig {
  double lr = 3e-5;
  int batch_size = 128;
  int max_epochs = 100;
  int patience = 10;
  double lr_factor = 0.5;
  double lr_floor = 1e-7;
  double stop_at_val_rho = 0.0;  // 0 disables the early target
  uint64_t seed = 7;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("train.lr must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    if (!(lr_factor > 0) || lr_factor >= 1.0)
      throw ConfigError("train.lr_factor must be in (0, 1)");
    if (!(lr_floor > 0)) throw ConfigError("train.lr_floor must be positive");
  }
};

// Raw parsed config: section -> key -> value text, in a stable order.
struct ConfigFile {
  std::map<std::string, std::map<std::string, std::string>> sections;
};

ConfigFile parse_config_text(const std::string& text, const std::string& origin);
ConfigFile load_config_file(const std::string& path);

// Applies one "section.key=value" override on top of a parsed file.
void apply_override(ConfigFile& cf, const std::string& spec);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

// Converts the raw file to typed configs. Unknown sections or keys are
// rejected so a typo cannot silently fall back to a default.
RunConfig make_run_config(const ConfigFile& cf);

}  // namespace emi
