#include "emi/fusion.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>

#include "emi/data.hpp"
#include "emi/errors.hpp"

namespace emi {

const char* prediction_source_name(PredictionSource s) {
  switch (s) {
    case PredictionSource::visual: return "visual";
    case PredictionSource::audio: return "audio";
    case PredictionSource::fused: return "fused";
  }
  return "?";
}

PredictionSource prediction_source_from_string(const std::string& s) {
  if (s == "visual") return PredictionSource::visual;
  if (s == "audio") return PredictionSource::audio;
  if (s == "fused") return PredictionSource::fused;
  throw ConfigError("unknown prediction source '" + s + "'");
}

namespace {

std::string predictions_header() {
  std::string h = "sample_id";
  for (const char* d : kDimensionNames) h += std::string(",") + d;
  return h;
}

}  // namespace

void write_predictions(const std::string& path, const PredictionSet& ps) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "# source=" << prediction_source_name(ps.source) << "\n";
  out << predictions_header() << "\n";
  char buf[64];
  for (const auto& r : ps.records) {
    out << r.sample_id;
    for (double v : r.values) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("short write: " + path);
}

PredictionSet read_predictions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open predictions: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ConfigError("predictions: " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string tag = "# source=";
  if (line.rfind(tag, 0) != 0)
    throw ConfigError("predictions: " + path +
                      ": first line must be '# source=<modality>'");
  PredictionSet ps;
  ps.source = prediction_source_from_string(line.substr(tag.size()));
  if (!std::getline(in, line))
    throw ConfigError("predictions: " + path + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != predictions_header())
    throw ConfigError("predictions: " + path + ": header mismatch");
  std::set<std::string> seen;
  int lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    PredictionRecord rec;
    size_t pos = 0;
    std::vector<std::string> fields;
    while (true) {
      const size_t c = line.find(',', pos);
      fields.push_back(line.substr(pos, c == std::string::npos ? c : c - pos));
      if (c == std::string::npos) break;
      pos = c + 1;
    }
    if (fields.size() != 7)
      throw ConfigError("predictions: " + path + ":" + std::to_string(lineno) +
                        ": expected 7 fields, got " +
                        std::to_string(fields.size()));
    rec.sample_id = fields[0];
    if (rec.sample_id.empty())
      throw ContractError("predictions: " + path + ":" +
                          std::to_string(lineno) + ": empty sample_id");
    if (!seen.insert(rec.sample_id).second)
      throw ContractError("predictions: duplicate sample_id '" +
                          rec.sample_id + "' in " + path);
    for (int k = 0; k < 6; ++k) {
      const std::string& f = fields[size_t(k + 1)];
      char* end = nullptr;
      rec.values[size_t(k)] = std::strtod(f.c_str(), &end);
      if (f.empty() || end != f.c_str() + f.size() ||
          !std::isfinite(rec.values[size_t(k)]))
        throw ContractError("predictions: " + path + ":" +
                            std::to_string(lineno) + ": bad value '" + f +
                            "'");
    }
    ps.records.push_back(std::move(rec));
  }
  return ps;
}

PredictionSet late_fuse(const PredictionSet& visual, const PredictionSet& audio,
                        double w_visual, double w_audio) {
  if (!(w_visual >= 0) || !(w_audio >= 0) || w_visual + w_audio <= 0)
    throw ConfigError("late_fuse: weights must be non-negative with a "
                      "positive sum");
  std::map<std::string, const PredictionRecord*> audio_by_id;
  for (const auto& r : audio.records) audio_by_id[r.sample_id] = &r;
  std::vector<std::string> only_visual, only_audio;
  std::set<std::string> visual_ids;
  for (const auto& r : visual.records) {
    visual_ids.insert(r.sample_id);
    if (!audio_by_id.count(r.sample_id)) only_visual.push_back(r.sample_id);
  }
  for (const auto& r : audio.records)
    if (!visual_ids.count(r.sample_id)) only_audio.push_back(r.sample_id);
  if (!only_visual.empty() || !only_audio.empty()) {
    std::string msg = "late_fuse: sample sets differ;";
    auto list = [&](const char* label, const std::vector<std::string>& ids) {
      if (ids.empty()) return;
      msg += std::string(" ") + label + ":";
      for (size_t i = 0; i < ids.size() && i < 5; ++i) msg += " " + ids[i];
      if (ids.size() > 5) msg += " (+" + std::to_string(ids.size() - 5) + ")";
    };
    list("only visual", only_visual);
    list("only audio", only_audio);
    throw ContractError(msg);
  }
  const double wsum = w_visual + w_audio;
  PredictionSet out;
  out.source = PredictionSource::fused;
  for (const auto& r : visual.records) {
    PredictionRecord f;
    f.sample_id = r.sample_id;
    const auto& a = *audio_by_id[r.sample_id];
    for (int k = 0; k < 6; ++k)
      f.values[size_t(k)] =
          (w_visual * r.values[size_t(k)] + w_audio * a.values[size_t(k)]) /
          wsum;
    out.records.push_back(std::move(f));
  }
  return out;
}

}  // namespace emi
