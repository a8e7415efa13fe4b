#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "emi/model.hpp"

namespace emi {

// On-disk feature modality tags. The numeric codes are part of the file
// format and must not be renumbered.
enum class FeatureModality : uint8_t {
  visual_resnet = 1,
  visual_aus = 2,
  audio_w2v = 3,
};

int modality_dim(FeatureModality m);
const char* feature_modality_name(FeatureModality m);

// One decoded feature file: rows time steps by cols features, row-major.
struct FeatureSequence {
  FeatureModality modality = FeatureModality::visual_resnet;
  int rows = 0, cols = 0;
  std::vector<float> data;

  float at(int t, int j) const { return data[size_t(t) * cols + j]; }
};

void write_feature_file(const std::string& path, const FeatureSequence& seq);
FeatureSequence read_feature_file(const std::string& path);

enum class Split { train, val, test };

Split split_from_string(const std::string& s);
const char* split_name(Split s);

inline constexpr std::array<const char*, 6> kDimensionNames = {
    "admiration", "amusement",    "determination",
    "empathic_pain", "excitement", "joy"};

extern const std::string kManifestHeader;

struct ManifestRow {
  std::string sample_id;
  Split split = Split::train;
  std::string visual_resnet_path, visual_aus_path, audio_path;
  std::array<double, 6> labels{};
};

struct Manifest {
  std::string dir;  // directory the manifest file lives in; paths resolve here
  std::vector<ManifestRow> rows;

  std::vector<const ManifestRow*> split_rows(Split s) const;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ManifestRow>& rows);
std::string resolve_path(const Manifest& m, const std::string& rel);

// Length normalization to a fixed target: longer sequences are uniformly
// subsampled (index floor(i * rows / target)), shorter ones are end-padded
// with zero rows and a false mask.
struct NormalizedSeq {
  int rows = 0, cols = 0;
  std::vector<float> data;
  std::vector<uint8_t> mask;  // 1 = real frame, 0 = padding
};

NormalizedSeq normalize_length(const FeatureSequence& seq, int target);

// One loaded, length-normalized sample for a branch. Visual samples carry
// resnet and AU channels; audio samples carry the wav2vec channel.
struct Sample {
  std::string id;
  TensorT<Real> resnet, aus, audio;
  std::vector<uint8_t> visual_mask, audio_mask;
  std::array<double, 6> labels{};
};

Sample load_sample(const Manifest& m, const ManifestRow& row, Modality modality,
                   int visual_len, int audio_len);

struct Batch {
  std::vector<Sample> samples;
};

// Deterministic batching: train split order is shuffled by
// mix_seed(seed, epoch), other splits keep manifest order. The trailing
// partial batch is kept.
std::vector<Batch> make_batches(const Manifest& m, Split split,
                                Modality modality, int batch_size,
                                uint64_t seed, uint64_t epoch, int visual_len,
                                int audio_len, bool shuffle);

struct SynthSpec {
  int n_train = 48, n_val = 16, n_test = 16;
  double signal = 1.0;  // 1 = fully label-linked features, 0 = pure noise labels
  uint64_t seed = 7;
  int t_visual_min = 33, t_visual_max = 48;
  int t_audio_min = 33, t_audio_max = 44;
};

// Writes feature files plus manifest.csv under out_dir and returns the
// manifest path. Byte-identical for identical spec.
std::string generate_synthetic_dataset(const std::string& out_dir,
                                       const SynthSpec& spec);

}  // namespace emi
