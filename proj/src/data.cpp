#include "emi/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "emi/rng.hpp"

namespace fs = std::filesystem;

namespace emi {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'I', 'F'};
constexpr uint32_t kVersion = 1;
constexpr size_t kHeaderBytes = 20;

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(uint8_t(v & 0xff));
  b.push_back(uint8_t((v >> 8) & 0xff));
  b.push_back(uint8_t((v >> 16) & 0xff));
  b.push_back(uint8_t((v >> 24) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}

}  // namespace

int modality_dim(FeatureModality m) {
  switch (m) {
    case FeatureModality::visual_resnet: return kResnetDim;
    case FeatureModality::visual_aus: return kAusDim;
    case FeatureModality::audio_w2v: return kAudioDim;
  }
  throw ContractError("unknown feature modality code " +
                      std::to_string(int(m)));
}

const char* feature_modality_name(FeatureModality m) {
  switch (m) {
    case FeatureModality::visual_resnet: return "visual_resnet";
    case FeatureModality::visual_aus: return "visual_aus";
    case FeatureModality::audio_w2v: return "audio_w2v";
  }
  return "?";
}

void write_feature_file(const std::string& path, const FeatureSequence& seq) {
  if (seq.rows < 0 || seq.cols != modality_dim(seq.modality))
    throw ContractError("write_feature_file: " + path + ": cols " +
                        std::to_string(seq.cols) + " does not match " +
                        feature_modality_name(seq.modality));
  if (seq.data.size() != size_t(seq.rows) * size_t(seq.cols))
    throw ContractError("write_feature_file: " + path +
                        ": payload size does not match rows x cols");
  std::vector<uint8_t> buf;
  buf.reserve(kHeaderBytes + seq.data.size() * 4);
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, kVersion);
  buf.push_back(uint8_t(seq.modality));
  buf.insert(buf.end(), 3, uint8_t(0));
  put_u32(buf, uint32_t(seq.rows));
  put_u32(buf, uint32_t(seq.cols));
  for (float f : seq.data) put_u32(buf, std::bit_cast<uint32_t>(f));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size()));
  if (!out) throw IoError("short write: " + path);
}

FeatureSequence read_feature_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < kHeaderBytes)
    throw CodecError(CodecError::Kind::truncated,
                     path + ": " + std::to_string(buf.size()) +
                         " bytes is too short for the header");
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw CodecError(CodecError::Kind::bad_magic,
                     path + ": bad magic, not a feature file");
  const uint32_t version = get_u32(buf.data() + 4);
  if (version != kVersion)
    throw CodecError(CodecError::Kind::bad_version,
                     path + ": unsupported version " + std::to_string(version));
  const uint8_t mod = buf[8];
  if (mod < 1 || mod > 3)
    throw CodecError(CodecError::Kind::bad_modality,
                     path + ": unknown modality code " + std::to_string(mod));
  FeatureSequence seq;
  seq.modality = FeatureModality(mod);
  seq.rows = int(get_u32(buf.data() + 12));
  seq.cols = int(get_u32(buf.data() + 16));
  if (seq.cols != modality_dim(seq.modality))
    throw CodecError(CodecError::Kind::dim_mismatch,
                     path + ": " + std::string(feature_modality_name(seq.modality)) +
                         " expects " + std::to_string(modality_dim(seq.modality)) +
                         " columns, file declares " + std::to_string(seq.cols));
  const uint64_t cells = uint64_t(seq.rows) * uint64_t(seq.cols);
  const uint64_t expect = kHeaderBytes + cells * 4;
  if (buf.size() != expect)
    throw CodecError(CodecError::Kind::truncated,
                     path + ": expected " + std::to_string(expect) +
                         " bytes for " + std::to_string(seq.rows) + "x" +
                         std::to_string(seq.cols) + ", found " +
                         std::to_string(buf.size()));
  seq.data.resize(size_t(cells));
  for (uint64_t i = 0; i < cells; ++i) {
    const float f =
        std::bit_cast<float>(get_u32(buf.data() + kHeaderBytes + i * 4));
    if (!std::isfinite(f))
      throw CodecError(CodecError::Kind::non_finite,
                       path + ": non-finite value at element " +
                           std::to_string(i));
    seq.data[size_t(i)] = f;
  }
  return seq;
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train/val/test)");
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

const std::string kManifestHeader =
    "sample_id,split,visual_resnet_path,visual_aus_path,audio_path,"
    "admiration,amusement,determination,empathic_pain,excitement,joy";

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

double parse_label(const std::string& id, const char* dim,
                   const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size())
    throw ConfigError("manifest: sample " + id + ": " + dim +
                      " is not a number: '" + text + "'");
  if (!std::isfinite(v) || v < 0.0 || v > 1.0)
    throw ContractError("manifest: sample " + id + ": " + dim + " = " + text +
                        " outside [0, 1]");
  return v;
}

}  // namespace

std::vector<const ManifestRow*> Manifest::split_rows(Split s) const {
  std::vector<const ManifestRow*> out;
  for (const auto& r : rows)
    if (r.split == s) out.push_back(&r);
  return out;
}

std::string resolve_path(const Manifest& m, const std::string& rel) {
  fs::path p(rel);
  if (p.is_absolute()) return rel;
  return (fs::path(m.dir) / p).string();
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path);
  Manifest m;
  const auto parent = fs::path(path).parent_path();
  m.dir = parent.empty() ? std::string(".") : parent.string();
  std::string line;
  if (!std::getline(in, line))
    throw ConfigError("manifest: " + path + " is empty");
  if (strip_cr(line) != kManifestHeader)
    throw ConfigError("manifest: " + path + ": header mismatch, expected '" +
                      kManifestHeader + "'");
  std::set<std::string> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = strip_cr(line);
    if (t.empty()) continue;
    const auto f = split_csv(t);
    if (f.size() != 11)
      throw ConfigError("manifest: " + path + ":" + std::to_string(lineno) +
                        ": expected 11 fields, got " +
                        std::to_string(f.size()));
    ManifestRow row;
    row.sample_id = f[0];
    if (row.sample_id.empty())
      throw ContractError("manifest: " + path + ":" + std::to_string(lineno) +
                          ": empty sample_id");
    if (!seen.insert(row.sample_id).second)
      throw ContractError("manifest: duplicate sample_id '" + row.sample_id +
                          "'");
    row.split = split_from_string(f[1]);
    row.visual_resnet_path = f[2];
    row.visual_aus_path = f[3];
    row.audio_path = f[4];
    for (int k = 0; k < 6; ++k)
      row.labels[size_t(k)] =
          parse_label(row.sample_id, kDimensionNames[size_t(k)], f[size_t(5 + k)]);
    for (const std::string* p :
         {&row.visual_resnet_path, &row.visual_aus_path, &row.audio_path}) {
      if (p->empty())
        throw ContractError("manifest: sample " + row.sample_id +
                            ": empty feature path");
      const std::string full = resolve_path(m, *p);
      if (!fs::exists(full))
        throw ContractError("manifest: sample " + row.sample_id +
                            ": missing feature file " + full);
    }
    m.rows.push_back(std::move(row));
  }
  if (m.rows.empty())
    throw ContractError("manifest: " + path + " declares no samples");
  return m;
}

void save_manifest(const std::string& path,
                   const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << kManifestHeader << "\n";
  char buf[32];
  for (const auto& r : rows) {
    out << r.sample_id << ',' << split_name(r.split) << ','
        << r.visual_resnet_path << ',' << r.visual_aus_path << ','
        << r.audio_path;
    for (double v : r.labels) {
      std::snprintf(buf, sizeof buf, "%.6f", v);
      out << ',' << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("short write: " + path);
}

NormalizedSeq normalize_length(const FeatureSequence& seq, int target) {
  if (target < 1) throw ContractError("normalize_length: target must be >= 1");
  if (seq.rows < 1)
    throw ContractError("normalize_length: empty sequence (0 rows)");
  NormalizedSeq out;
  out.rows = target;
  out.cols = seq.cols;
  out.data.assign(size_t(target) * size_t(seq.cols), 0.0f);
  out.mask.assign(size_t(target), 0);
  if (seq.rows >= target) {
    for (int i = 0; i < target; ++i) {
      // Uniform subsample keeps the first frame and the temporal order.
      const int src = int((int64_t(i) * seq.rows) / target);
      std::memcpy(out.data.data() + size_t(i) * seq.cols,
                  seq.data.data() + size_t(src) * seq.cols,
                  size_t(seq.cols) * sizeof(float));
      out.mask[size_t(i)] = 1;
    }
  } else {
    std::memcpy(out.data.data(), seq.data.data(),
                seq.data.size() * sizeof(float));
    for (int i = 0; i < seq.rows; ++i) out.mask[size_t(i)] = 1;
  }
  return out;
}

namespace {

TensorT<Real> tensor_from(const NormalizedSeq& n) {
  std::vector<Real> v(n.data.begin(), n.data.end());
  return TensorT<Real>::from_data({n.rows, n.cols}, std::move(v));
}

FeatureSequence read_checked(const Manifest& m, const ManifestRow& row,
                             const std::string& rel, FeatureModality expect) {
  const auto seq = read_feature_file(resolve_path(m, rel));
  if (seq.modality != expect)
    throw ContractError("sample " + row.sample_id + ": " + rel +
                        " holds " + feature_modality_name(seq.modality) +
                        " features where " + feature_modality_name(expect) +
                        " was expected");
  return seq;
}

}  // namespace

Sample load_sample(const Manifest& m, const ManifestRow& row, Modality modality,
                   int visual_len, int audio_len) {
  Sample s;
  s.id = row.sample_id;
  s.labels = row.labels;
  if (modality == Modality::visual) {
    const auto resnet = read_checked(m, row, row.visual_resnet_path,
                                     FeatureModality::visual_resnet);
    const auto aus =
        read_checked(m, row, row.visual_aus_path, FeatureModality::visual_aus);
    if (resnet.rows != aus.rows)
      throw ContractError("sample " + row.sample_id +
                          ": visual channels disagree on frame count: " +
                          std::to_string(resnet.rows) + " resnet vs " +
                          std::to_string(aus.rows) + " AU frames");
    const auto nr = normalize_length(resnet, visual_len);
    const auto na = normalize_length(aus, visual_len);
    s.resnet = tensor_from(nr);
    s.aus = tensor_from(na);
    s.visual_mask = nr.mask;
  } else {
    const auto audio =
        read_checked(m, row, row.audio_path, FeatureModality::audio_w2v);
    const auto na = normalize_length(audio, audio_len);
    s.audio = tensor_from(na);
    s.audio_mask = na.mask;
  }
  return s;
}

std::vector<Batch> make_batches(const Manifest& m, Split split,
                                Modality modality, int batch_size,
                                uint64_t seed, uint64_t epoch, int visual_len,
                                int audio_len, bool shuffle) {
  if (batch_size < 1) throw ContractError("make_batches: batch_size must be >= 1");
  const auto rows = m.split_rows(split);
  if (rows.empty())
    throw ContractError(std::string("make_batches: split '") +
                        split_name(split) + "' has no samples");
  std::vector<size_t> order(rows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) {
    Rng rng(mix_seed(seed, epoch));
    rng.shuffle(order);
  }
  std::vector<Batch> out;
  for (size_t start = 0; start < order.size(); start += size_t(batch_size)) {
    Batch b;
    const size_t end = std::min(order.size(), start + size_t(batch_size));
    for (size_t i = start; i < end; ++i)
      b.samples.push_back(
          load_sample(m, *rows[order[i]], modality, visual_len, audio_len));
    out.push_back(std::move(b));
  }
  return out;
}

namespace {

// Synthetic data shape: each frame embeds a jittered copy of the sample's
// 6-d latent on top of a fixed per-feature offset, and labels are a noisy
// linear-plus-tanh readout of the same latent, so signal=1 data is
// learnable from temporal means and signal=0 data provably is not. The
// large offset keeps deep randomly-initialized ReLU stacks in a near-
// linear regime (activation signs are set by the offset, not the sample),
// so an untrained encoder already transports the latent to its pooled
// output instead of scrambling it.
constexpr double kEmbScale = 0.40824829046386301637;  // 1/sqrt(6)
constexpr double kFeatureBias = 10.0;
constexpr double kLatentJitter = 0.15;
constexpr double kAmbientNoise = 0.003;
constexpr double kReadoutScale = 0.40824829046386301637;  // 1/sqrt(6)
constexpr double kLabelSd = 0.22;
constexpr double kTanhGain = 0.05;
constexpr double kLabelNoise = 0.01;

struct Embeddings {
  std::vector<double> resnet, aus, audio;        // [dim x 6]
  std::vector<double> resnet_o, aus_o, audio_o;  // [dim] fixed offsets
  double b[6][6], c[6][6];
};

std::vector<double> draw_matrix(Rng& rng, int rows, double scl) {
  std::vector<double> m(size_t(rows) * 6);
  for (auto& v : m) v = rng.normal() * scl;
  return m;
}

std::vector<double> draw_offset(Rng& rng, int rows) {
  std::vector<double> m(size_t(rows), 0.0);
  for (auto& v : m) v = rng.normal() * kFeatureBias;
  return m;
}

Embeddings draw_embeddings(uint64_t seed) {
  Rng rng(mix_seed(seed, 1001));
  Embeddings e;
  e.resnet = draw_matrix(rng, kResnetDim, kEmbScale);
  e.aus = draw_matrix(rng, kAusDim, kEmbScale);
  e.audio = draw_matrix(rng, kAudioDim, kEmbScale);
  e.resnet_o = draw_offset(rng, kResnetDim);
  e.aus_o = draw_offset(rng, kAusDim);
  e.audio_o = draw_offset(rng, kAudioDim);
  for (auto& row : e.b)
    for (auto& v : row) v = rng.normal() * (kLabelSd * kReadoutScale);
  for (auto& row : e.c)
    for (auto& v : row) v = rng.normal() * kReadoutScale;
  return e;
}

FeatureSequence draw_features(Rng& rng, FeatureModality mod,
                              const std::vector<double>& emb,
                              const std::vector<double>& offset, int rows,
                              const double z[6]) {
  FeatureSequence seq;
  seq.modality = mod;
  seq.rows = rows;
  seq.cols = modality_dim(mod);
  seq.data.resize(size_t(rows) * size_t(seq.cols));
  for (int t = 0; t < rows; ++t) {
    double zt[6];
    for (int k = 0; k < 6; ++k) zt[k] = z[k] + kLatentJitter * rng.normal();
    for (int j = 0; j < seq.cols; ++j) {
      double mean = offset[size_t(j)];
      for (int k = 0; k < 6; ++k) mean += emb[size_t(j) * 6 + k] * zt[k];
      seq.data[size_t(t) * seq.cols + j] =
          float(mean + kAmbientNoise * rng.normal());
    }
  }
  return seq;
}

}  // namespace

std::string generate_synthetic_dataset(const std::string& out_dir,
                                       const SynthSpec& spec) {
  if (spec.n_train < 0 || spec.n_val < 0 || spec.n_test < 0 ||
      spec.n_train + spec.n_val + spec.n_test < 1)
    throw ConfigError("synth: sample counts must be non-negative, total >= 1");
  if (!(spec.signal >= 0.0 && spec.signal <= 1.0))
    throw ConfigError("synth: signal must lie in [0, 1]");
  if (spec.t_visual_min < 1 || spec.t_visual_max < spec.t_visual_min ||
      spec.t_audio_min < 1 || spec.t_audio_max < spec.t_audio_min)
    throw ConfigError("synth: length ranges must satisfy 1 <= min <= max");

  const auto feat_dir = fs::path(out_dir) / "features";
  fs::create_directories(feat_dir);
  const auto e = draw_embeddings(spec.seed);

  std::vector<ManifestRow> rows;
  int global = 0;
  auto emit_split = [&](Split split, const char* prefix, int count) {
    for (int i = 0; i < count; ++i, ++global) {
      char idbuf[16];
      std::snprintf(idbuf, sizeof idbuf, "%s%04d", prefix, i);
      const std::string id = idbuf;
      Rng rng(mix_seed(spec.seed, 2000 + uint64_t(global)));
      double z[6];
      for (double& v : z) v = rng.normal();
      const int tv = spec.t_visual_min +
                     int(rng.next_below(
                         uint64_t(spec.t_visual_max - spec.t_visual_min + 1)));
      const int ta = spec.t_audio_min +
                     int(rng.next_below(
                         uint64_t(spec.t_audio_max - spec.t_audio_min + 1)));
      const auto resnet =
          draw_features(rng, FeatureModality::visual_resnet, e.resnet, e.resnet_o, tv, z);
      const auto aus =
          draw_features(rng, FeatureModality::visual_aus, e.aus, e.aus_o, tv, z);
      const auto audio =
          draw_features(rng, FeatureModality::audio_w2v, e.audio, e.audio_o, ta, z);

      ManifestRow row;
      row.sample_id = id;
      row.split = split;
      row.visual_resnet_path = "features/" + id + "_resnet.emif";
      row.visual_aus_path = "features/" + id + "_aus.emif";
      row.audio_path = "features/" + id + "_audio.emif";
      for (int k = 0; k < 6; ++k) {
        double lin = 0, arg = 0;
        for (int j = 0; j < 6; ++j) {
          lin += e.b[k][j] * z[j];
          arg += e.c[k][j] * z[j];
        }
        double y = 0.5 + lin + kTanhGain * std::tanh(arg) +
                   kLabelNoise * rng.normal();
        y = std::clamp(y, 0.0, 1.0);
        // The noise label is drawn either way to keep the stream aligned
        // across signal settings.
        const double u = rng.next_double();
        row.labels[size_t(k)] = spec.signal * y + (1.0 - spec.signal) * u;
      }
      write_feature_file((fs::path(out_dir) / row.visual_resnet_path).string(),
                         resnet);
      write_feature_file((fs::path(out_dir) / row.visual_aus_path).string(),
                         aus);
      write_feature_file((fs::path(out_dir) / row.audio_path).string(), audio);
      rows.push_back(std::move(row));
    }
  };
  emit_split(Split::train, "tr", spec.n_train);
  emit_split(Split::val, "va", spec.n_val);
  emit_split(Split::test, "te", spec.n_test);

  const std::string manifest_path = (fs::path(out_dir) / "manifest.csv").string();
  save_manifest(manifest_path, rows);
  return manifest_path;
}

}  // namespace emi
