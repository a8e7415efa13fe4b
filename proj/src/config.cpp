#include "emi/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

namespace emi {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  char* end = nullptr;
  double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size())
    throw ConfigError(key + ": not a number: '" + text + "'");
  return v;
}

long long parse_int(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  char* end = nullptr;
  long long v = std::strtoll(t.c_str(), &end, 10);
  if (t.empty() || end != t.c_str() + t.size())
    throw ConfigError(key + ": not an integer: '" + text + "'");
  return v;
}

std::vector<int> parse_int_list(const std::string& key,
                                const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(int(parse_int(key, item)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

}  // namespace

ConfigFile parse_config_text(const std::string& text,
                             const std::string& origin) {
  ConfigFile cf;
  std::stringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3)
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": malformed section header '" + t + "'");
      section = trim(t.substr(1, t.size() - 2));
      cf.sections[section];
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key=value, got '" + t + "'");
    if (section.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": key outside any [section]");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    cf.sections[section][key] = trim(t.substr(eq + 1));
  }
  return cf;
}

ConfigFile load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

void apply_override(ConfigFile& cf, const std::string& spec) {
  const size_t eq = spec.find('=');
  const size_t dot = spec.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override must look like section.key=value, got '" +
                      spec + "'");
  const std::string section = trim(spec.substr(0, dot));
  const std::string key = trim(spec.substr(dot + 1, eq - dot - 1));
  if (section.empty() || key.empty())
    throw ConfigError("override must look like section.key=value, got '" +
                      spec + "'");
  cf.sections[section][key] = trim(spec.substr(eq + 1));
}

RunConfig make_run_config(const ConfigFile& cf) {
  RunConfig rc;
  for (const auto& [section, kv] : cf.sections) {
    if (section == "model") {
      for (const auto& [key, val] : kv) {
        const std::string full = "model." + key;
        if (key == "d_model")
          rc.model.d_model = int(parse_int(full, val));
        else if (key == "num_heads")
          rc.model.num_heads = int(parse_int(full, val));
        else if (key == "num_blocks")
          rc.model.num_blocks = int(parse_int(full, val));
        else if (key == "kernel_size")
          rc.model.kernel_size = int(parse_int(full, val));
        else if (key == "dilations")
          rc.model.dilations = parse_int_list(full, val);
        else if (key == "visual_len")
          rc.model.visual_len = int(parse_int(full, val));
        else if (key == "audio_len")
          rc.model.audio_len = int(parse_int(full, val));
        else if (key == "ffn_hidden")
          rc.model.ffn_hidden = int(parse_int(full, val));
        else
          throw ConfigError("unknown config key '" + full + "'");
      }
    } else if (section == "train") {
      for (const auto& [key, val] : kv) {
        const std::string full = "train." + key;
        if (key == "lr")
          rc.train.lr = parse_double(full, val);
        else if (key == "batch_size")
          rc.train.batch_size = int(parse_int(full, val));
        else if (key == "max_epochs")
          rc.train.max_epochs = int(parse_int(full, val));
        else if (key == "patience")
          rc.train.patience = int(parse_int(full, val));
        else if (key == "lr_factor")
          rc.train.lr_factor = parse_double(full, val);
        else if (key == "lr_floor")
          rc.train.lr_floor = parse_double(full, val);
        else if (key == "stop_at_val_rho")
          rc.train.stop_at_val_rho = parse_double(full, val);
        else
          throw ConfigError("unknown config key '" + full + "'");
      }
    } else {
      throw ConfigError("unknown config section '[" + section + "]'");
    }
  }
  rc.model.validate();
  rc.train.validate();
  return rc;
}

}  // namespace emi
