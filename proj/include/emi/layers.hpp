#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "emi/ops.hpp"
#include "emi/rng.hpp"

// Layer structs own their parameter tensors and compose ops on a tape.
// Initializers consume the Rng in declaration order, so a given seed fixes
// every parameter bit.

namespace emi {

template <class S>
TensorT<S> he_uniform(Rng& rng, int fan_in, std::vector<int> shape) {
  const double limit = std::sqrt(6.0 / double(fan_in));
  auto t = TensorT<S>::zeros(std::move(shape), true);
  for (auto& v : t.value()) v = S(rng.uniform(-limit, limit));
  return t;
}

template <class S>
TensorT<S> xavier_uniform(Rng& rng, int fan_in, int fan_out,
                          std::vector<int> shape) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  auto t = TensorT<S>::zeros(std::move(shape), true);
  for (auto& v : t.value()) v = S(rng.uniform(-limit, limit));
  return t;
}

template <class S>
TensorT<S> zeros_param(std::vector<int> shape) {
  return TensorT<S>::zeros(std::move(shape), true);
}

template <class S>
TensorT<S> ones_param(std::vector<int> shape) {
  auto t = TensorT<S>::zeros(std::move(shape), true);
  for (auto& v : t.value()) v = S(1);
  return t;
}

template <class S>
struct CausalConv1dT {
  int in_dim = 0, out_dim = 0, kernel_size = 0, dilation = 1;
  TensorT<S> weight;  // [out x in x k]
  TensorT<S> bias;    // [out]

  TensorT<S> forward(TapeT<S>& tp, const TensorT<S>& x) const {
    return conv1d_causal(tp, x, weight, bias, dilation);
  }
};

template <class S>
CausalConv1dT<S> make_causal_conv(Rng& rng, int in_dim, int out_dim,
                                  int kernel_size, int dilation) {
  CausalConv1dT<S> c;
  c.in_dim = in_dim;
  c.out_dim = out_dim;
  c.kernel_size = kernel_size;
  c.dilation = dilation;
  c.weight = he_uniform<S>(rng, in_dim * kernel_size,
                           {out_dim, in_dim, kernel_size});
  c.bias = zeros_param<S>({out_dim});
  return c;
}

// Stack of dilated causal conv layers, ReLU after every layer. The first
// layer projects the raw feature width down to the model width; all later
// layers are width-preserving.
template <class S>
struct TcnEncoderT {
  std::vector<CausalConv1dT<S>> layers;

  int receptive_field() const {
    int rf = 1;
    for (const auto& l : layers) rf += (l.kernel_size - 1) * l.dilation;
    return rf;
  }

  TensorT<S> forward(TapeT<S>& tp, const TensorT<S>& x) const {
    TensorT<S> h = x;
    for (const auto& l : layers) h = relu(tp, l.forward(tp, h));
    return h;
  }
};

template <class S>
TcnEncoderT<S> make_tcn(Rng& rng, int in_dim, int d_model, int kernel_size,
                        const std::vector<int>& dilations) {
  TcnEncoderT<S> t;
  int cur = in_dim;
  for (int d : dilations) {
    t.layers.push_back(make_causal_conv<S>(rng, cur, d_model, kernel_size, d));
    cur = d_model;
  }
  return t;
}

// Pre-norm encoder block: x + MHA(LN(x)), then h + FFN(LN(h)). No
// positional encoding and no dropout anywhere. The key mask keeps padded
// positions out of every attention sum.
template <class S>
struct TransformerBlockT {
  int d_model = 0, num_heads = 0;
  S ln_eps = S(1e-5);

  TensorT<S> ln1_gamma, ln1_beta;
  TensorT<S> wq, bq, wk, bk, wv, bv, wo, bo;
  TensorT<S> ln2_gamma, ln2_beta;
  TensorT<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  TensorT<S> forward(TapeT<S>& tp, const TensorT<S>& x,
                     const std::vector<uint8_t>& mask) const {
    const int dk = d_model / num_heads;
    auto xn = layer_norm(tp, x, ln1_gamma, ln1_beta, ln_eps);
    auto q = add_bias(tp, matmul(tp, xn, wq), bq);
    auto k = add_bias(tp, matmul(tp, xn, wk), bk);
    auto v = add_bias(tp, matmul(tp, xn, wv), bv);
    TensorT<S> ctx;
    for (int h = 0; h < num_heads; ++h) {
      auto qh = slice_cols(tp, q, h * dk, (h + 1) * dk);
      auto kh = slice_cols(tp, k, h * dk, (h + 1) * dk);
      auto vh = slice_cols(tp, v, h * dk, (h + 1) * dk);
      auto scores = scale(tp, matmul(tp, qh, transpose(tp, kh)),
                          S(1.0 / std::sqrt(double(dk))));
      auto attn = masked_softmax_rows(tp, scores, mask);
      auto head = matmul(tp, attn, vh);
      ctx = h == 0 ? head : concat_cols(tp, ctx, head);
    }
    auto att_out = add_bias(tp, matmul(tp, ctx, wo), bo);
    auto h1 = add(tp, x, att_out);
    auto hn = layer_norm(tp, h1, ln2_gamma, ln2_beta, ln_eps);
    auto f = relu(tp, add_bias(tp, matmul(tp, hn, ffn_w1), ffn_b1));
    f = add_bias(tp, matmul(tp, f, ffn_w2), ffn_b2);
    return add(tp, h1, f);
  }
};

template <class S>
TransformerBlockT<S> make_transformer_block(Rng& rng, int d_model,
                                            int num_heads) {
  if (num_heads <= 0 || d_model % num_heads != 0)
    throw ContractError("transformer block: d_model " +
                        std::to_string(d_model) + " not divisible by " +
                        std::to_string(num_heads) + " heads");
  TransformerBlockT<S> b;
  b.d_model = d_model;
  b.num_heads = num_heads;
  const int dff = 4 * d_model;
  b.ln1_gamma = ones_param<S>({d_model});
  b.ln1_beta = zeros_param<S>({d_model});
  b.wq = xavier_uniform<S>(rng, d_model, d_model, {d_model, d_model});
  b.bq = zeros_param<S>({d_model});
  b.wk = xavier_uniform<S>(rng, d_model, d_model, {d_model, d_model});
  b.bk = zeros_param<S>({d_model});
  b.wv = xavier_uniform<S>(rng, d_model, d_model, {d_model, d_model});
  b.bv = zeros_param<S>({d_model});
  b.wo = xavier_uniform<S>(rng, d_model, d_model, {d_model, d_model});
  b.bo = zeros_param<S>({d_model});
  b.ln2_gamma = ones_param<S>({d_model});
  b.ln2_beta = zeros_param<S>({d_model});
  b.ffn_w1 = he_uniform<S>(rng, d_model, {d_model, dff});
  b.ffn_b1 = zeros_param<S>({dff});
  b.ffn_w2 = he_uniform<S>(rng, dff, {dff, d_model});
  b.ffn_b2 = zeros_param<S>({d_model});
  return b;
}

// Two affine maps with one ReLU between them; the regression output is
// deliberately unclamped.
template <class S>
struct FfnHeadT {
  TensorT<S> w1, b1, w2, b2;

  TensorT<S> forward(TapeT<S>& tp, const TensorT<S>& pooled) const {
    auto x = reshape(tp, pooled, {1, pooled.extent(0)});
    x = relu(tp, add_bias(tp, matmul(tp, x, w1), b1));
    x = add_bias(tp, matmul(tp, x, w2), b2);
    return reshape(tp, x, {x.extent(1)});
  }
};

template <class S>
FfnHeadT<S> make_ffn_head(Rng& rng, int in_dim, int hidden, int out_dim) {
  FfnHeadT<S> h;
  h.w1 = he_uniform<S>(rng, in_dim, {in_dim, hidden});
  h.b1 = zeros_param<S>({hidden});
  h.w2 = he_uniform<S>(rng, hidden, {hidden, out_dim});
  h.b2 = zeros_param<S>({out_dim});
  return h;
}

}  // namespace emi
