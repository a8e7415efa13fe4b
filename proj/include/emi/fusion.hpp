#pragma once

#include <array>
#include <string>
#include <vector>

// Late fusion: each branch predicts independently, fusion averages the
// prediction vectors per sample.

namespace emi {

enum class PredictionSource { visual, audio, fused };

const char* prediction_source_name(PredictionSource s);
PredictionSource prediction_source_from_string(const std::string& s);

struct PredictionRecord {
  std::string sample_id;
  std::array<double, 6> values{};
};

struct PredictionSet {
  PredictionSource source = PredictionSource::visual;
  std::vector<PredictionRecord> records;
};

void write_predictions(const std::string& path, const PredictionSet& ps);
PredictionSet read_predictions(const std::string& path);

// Weighted per-sample average; weights are normalized by their sum. The two
// sets must cover exactly the same sample ids; output keeps the order of
// the first set.
PredictionSet late_fuse(const PredictionSet& visual, const PredictionSet& audio,
                        double w_visual = 1.0, double w_audio = 1.0);

}  // namespace emi
