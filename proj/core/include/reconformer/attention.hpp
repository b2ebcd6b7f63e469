#pragma once

#include <string>
#include <utility>
#include <vector>

#include "reconformer/ops.hpp"
#include "reconformer/params.hpp"
#include "reconformer/rng.hpp"

namespace reconformer {

// Configuration of an RSA head stack / RPTL. With recurrent=false the layer
// degenerates to standard windowed multi-head self-attention: every head runs
// at scale 1 and the correlation state is neither blended in nor carried.
struct RSAConfig {
  int embed_dim = 24;
  int window = 4;
  std::vector<int> scales = {1, 3, 5};
  int heads_per_scale = 1;
  double mlp_ratio = 2.0;
  bool recurrent = true;

  int head_count() const { return static_cast<int>(scales.size()) * heads_per_scale; }
  int head_dim() const { return embed_dim / head_count(); }
  int scale_for_head(int head) const { return recurrent ? scales[head / heads_per_scale] : 1; }
  int mlp_hidden() const { return static_cast<int>(mlp_ratio * embed_dim); }

  void validate(int feat_h, int feat_w) const;
};

// Shift of the windowing grid for a given layer: the shifted-window scheme
// alternates 0 and K/2.
inline int rptl_shift(int layer_idx, int window) { return layer_idx % 2 == 0 ? 0 : window / 2; }

// Per-layer correlation state: one [num_windows, K^2, K^2] tensor per head.
// Zero at iteration 1; participates in the tape so gradients flow through
// the unroll.
template <typename S>
struct CorrelationStateT {
  std::vector<TensorT<S>> per_head;
  int iteration = 0;
};

template <typename S>
struct WindowGridT {
  TensorT<S> windows;  // [num_windows, K^2, C']
  int feat_h = 0, feat_w = 0;
  int window = 0, shift = 0;
};

template <typename S>
struct RSAParamsT {
  struct Head {
    TensorT<S> p_q, p_k, p_v;
    TensorT<S> lambda;  // undefined when the layer is non-recurrent
  };
  std::vector<Head> heads;
  TensorT<S> out_weight, out_bias;
};

template <typename S>
struct RPTLParamsT {
  TensorT<S> ln1_gamma, ln1_beta;
  RSAParamsT<S> rsa;
  TensorT<S> ln2_gamma, ln2_beta;
  TensorT<S> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <typename S>
struct RFBParamsT {
  std::vector<RPTLParamsT<S>> layers;
};

template <typename S>
CorrelationStateT<S> zero_correlation(const RSAConfig& cfg, int feat_h, int feat_w);
template <typename S>
std::vector<CorrelationStateT<S>> zero_correlation_stack(const RSAConfig& cfg, int depth,
                                                         int feat_h, int feat_w);

template <typename S>
WindowGridT<S> window_partition(const TensorT<S>& feat, int window, int shift);
template <typename S>
TensorT<S> window_merge(const WindowGridT<S>& grid);

// Average-pool pyramid step on window tokens; s = 1 is the identity.
template <typename S>
TensorT<S> scale_aggregate(const TensorT<S>& window_tokens, int window, int s);

// Recurrent scale-wise attention over one window grid. Per head with scale s:
// Q projects the raw tokens, K/V project the scale-aggregated tokens, and the
// pre-softmax correlation is lambda * QK^T/sqrt(d) + (1-lambda) * c.
template <typename S>
std::pair<WindowGridT<S>, CorrelationStateT<S>> rsa(const WindowGridT<S>& grid,
                                                    const CorrelationStateT<S>& state,
                                                    const RSAParamsT<S>& params,
                                                    const RSAConfig& cfg);

// Pre-norm transformer layer: F = RSA(LN(F)) + F; F = MLP(LN(F)) + F.
template <typename S>
std::pair<TensorT<S>, CorrelationStateT<S>> rptl_forward(const TensorT<S>& feat,
                                                         const CorrelationStateT<S>& state,
                                                         const RPTLParamsT<S>& params,
                                                         const RSAConfig& cfg, int layer_idx);

// Stacked RPTLs, one correlation state per layer. `shift_trace`, when given,
// records the window shift each layer used.
template <typename S>
std::pair<TensorT<S>, std::vector<CorrelationStateT<S>>> rfb_forward(
    const TensorT<S>& feat, const std::vector<CorrelationStateT<S>>& states,
    const RFBParamsT<S>& params, const RSAConfig& cfg, std::vector<int>* shift_trace = nullptr);

template <typename S>
RFBParamsT<S> create_rfb_params(ParamStoreT<S>& store, const std::string& prefix,
                                const RSAConfig& cfg, int depth, Rng& rng);

}  // namespace reconformer
