#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "emi/layers.hpp"

namespace emi {

inline constexpr int kResnetDim = 512;
inline constexpr int kAusDim = 34;
inline constexpr int kVisualDim = kResnetDim + kAusDim;
inline constexpr int kAudioDim = 768;
inline constexpr int kOutputDim = 6;

enum class Modality { visual, audio };

inline const char* modality_name(Modality m) {
  return m == Modality::visual ? "visual" : "audio";
}

struct ModelConfig {
  int d_model = 128;
  int num_heads = 4;
  int num_blocks = 2;  // transformer blocks on the visual branch; audio has 0
  int kernel_size = 3;
  std::vector<int> dilations = {1, 2, 4, 8, 16};
  int visual_len = 300;  // sequence length after normalization
  int audio_len = 300;
  int ffn_hidden = 64;
  uint64_t seed = 7;

  int tcn_layers() const { return int(dilations.size()); }

  void validate() const {
    if (d_model <= 0) throw ConfigError("model.d_model must be positive");
    if (num_heads <= 0 || d_model % num_heads != 0)
      throw ConfigError("model.d_model (" + std::to_string(d_model) +
                        ") must be divisible by model.num_heads (" +
                        std::to_string(num_heads) + ")");
    if (num_blocks < 0) throw ConfigError("model.num_blocks must be >= 0");
    if (kernel_size < 1) throw ConfigError("model.kernel_size must be >= 1");
    if (dilations.empty()) throw ConfigError("model.dilations must be non-empty");
    for (int d : dilations)
      if (d < 1) throw ConfigError("model.dilations entries must be >= 1");
    if (visual_len < 1 || audio_len < 1)
      throw ConfigError("sequence lengths must be >= 1");
    if (ffn_hidden < 1) throw ConfigError("model.ffn_hidden must be >= 1");
  }
};

// One modality branch: TCN, then (visual only) transformer blocks, masked
// mean pooling, regression head.
template <class S>
struct BranchModelT {
  Modality modality = Modality::visual;
  int in_dim = 0;
  ModelConfig cfg;
  TcnEncoderT<S> tcn;
  std::vector<TransformerBlockT<S>> blocks;
  FfnHeadT<S> head;

  // Fixed naming scheme; checkpoint layout and the optimizer state both
  // key off these names, so the order must never change.
  std::vector<std::pair<std::string, TensorT<S>*>> named_params() {
    std::vector<std::pair<std::string, TensorT<S>*>> out;
    for (size_t i = 0; i < tcn.layers.size(); ++i) {
      const std::string p = "tcn.conv" + std::to_string(i);
      out.emplace_back(p + ".weight", &tcn.layers[i].weight);
      out.emplace_back(p + ".bias", &tcn.layers[i].bias);
    }
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "block" + std::to_string(i);
      auto& b = blocks[i];
      out.emplace_back(p + ".ln1.gamma", &b.ln1_gamma);
      out.emplace_back(p + ".ln1.beta", &b.ln1_beta);
      out.emplace_back(p + ".attn.wq", &b.wq);
      out.emplace_back(p + ".attn.bq", &b.bq);
      out.emplace_back(p + ".attn.wk", &b.wk);
      out.emplace_back(p + ".attn.bk", &b.bk);
      out.emplace_back(p + ".attn.wv", &b.wv);
      out.emplace_back(p + ".attn.bv", &b.bv);
      out.emplace_back(p + ".attn.wo", &b.wo);
      out.emplace_back(p + ".attn.bo", &b.bo);
      out.emplace_back(p + ".ln2.gamma", &b.ln2_gamma);
      out.emplace_back(p + ".ln2.beta", &b.ln2_beta);
      out.emplace_back(p + ".ffn.w1", &b.ffn_w1);
      out.emplace_back(p + ".ffn.b1", &b.ffn_b1);
      out.emplace_back(p + ".ffn.w2", &b.ffn_w2);
      out.emplace_back(p + ".ffn.b2", &b.ffn_b2);
    }
    out.emplace_back("head.w1", &head.w1);
    out.emplace_back("head.b1", &head.b1);
    out.emplace_back("head.w2", &head.w2);
    out.emplace_back("head.b2", &head.b2);
    return out;
  }

  size_t parameter_count() {
    size_t n = 0;
    for (auto& [name, t] : named_params()) n += t->numel();
    return n;
  }

  int sequence_len() const {
    return modality == Modality::visual ? cfg.visual_len : cfg.audio_len;
  }

  // features: [T x in_dim]; mask marks the valid prefix. Returns the 6-d
  // intensity vector.
  TensorT<S> forward(TapeT<S>& tp, const TensorT<S>& features,
                     const std::vector<uint8_t>& mask) const {
    if (features.ndim() != 2 || features.extent(1) != in_dim)
      throw ShapeError(std::string("branch forward: ") +
                       modality_name(modality) + " expects [T x " +
                       std::to_string(in_dim) + "] features, got " +
                       shape_str(features.shape()));
    if (int(mask.size()) != features.extent(0))
      throw ShapeError("branch forward: mask length " +
                       std::to_string(mask.size()) + " vs " +
                       std::to_string(features.extent(0)) + " time steps");
    auto h = tcn.forward(tp, features);
    for (const auto& b : blocks) h = b.forward(tp, h, mask);
    auto pooled = masked_mean_pool(tp, h, mask);
    return head.forward(tp, pooled);
  }
};

template <class S>
BranchModelT<S> build_branch(const ModelConfig& cfg, Modality modality) {
  cfg.validate();
  BranchModelT<S> m;
  m.modality = modality;
  m.cfg = cfg;
  m.in_dim = modality == Modality::visual ? kVisualDim : kAudioDim;
  // Branch index keeps the two parameter streams disjoint under one seed.
  Rng rng(mix_seed(cfg.seed, modality == Modality::visual ? 1 : 2));
  m.tcn = make_tcn<S>(rng, m.in_dim, cfg.d_model, cfg.kernel_size,
                      cfg.dilations);
  if (modality == Modality::visual)
    for (int i = 0; i < cfg.num_blocks; ++i)
      m.blocks.push_back(
          make_transformer_block<S>(rng, cfg.d_model, cfg.num_heads));
  m.head = make_ffn_head<S>(rng, cfg.d_model, cfg.ffn_hidden, kOutputDim);
  return m;
}

// ResNet embeddings first, action units after, frame for frame.
template <class S>
TensorT<S> concat_visual_channels(TapeT<S>& tp, const TensorT<S>& resnet,
                                  const TensorT<S>& aus) {
  if (resnet.ndim() != 2 || resnet.extent(1) != kResnetDim)
    throw ShapeError("visual concat: resnet features must be [T x " +
                     std::to_string(kResnetDim) + "], got " +
                     shape_str(resnet.shape()));
  if (aus.ndim() != 2 || aus.extent(1) != kAusDim)
    throw ShapeError("visual concat: AU features must be [T x " +
                     std::to_string(kAusDim) + "], got " +
                     shape_str(aus.shape()));
  if (resnet.extent(0) != aus.extent(0))
    throw ShapeError("visual concat: frame counts differ: " +
                     std::to_string(resnet.extent(0)) + " resnet vs " +
                     std::to_string(aus.extent(0)) + " AU frames");
  return concat_cols(tp, resnet, aus);
}

using BranchModel = BranchModelT<Real>;

}  // namespace emi
