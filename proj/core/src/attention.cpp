#include "reconformer/attention.hpp"

#include <cmath>

namespace reconformer {

void RSAConfig::validate(int feat_h, int feat_w) const {
  const char* where = "rsa-attention::RSAConfig";
  require(embed_dim >= 1, ErrorKind::Config, where, "embed_dim must be positive");
  require(window >= 1, ErrorKind::Config, where, "window must be positive");
  require(!scales.empty(), ErrorKind::Config, where, "at least one scale head");
  require(heads_per_scale >= 1, ErrorKind::Config, where, "heads_per_scale must be positive");
  for (int s : scales) {
    require(s % 2 == 1, ErrorKind::Config, where, "scales must be odd");
    require(s <= window, ErrorKind::Config, where, "scales must not exceed the window size");
  }
  require(embed_dim % head_count() == 0, ErrorKind::Config, where,
          "embed_dim must be divisible by the head count");
  require(mlp_hidden() >= 1, ErrorKind::Config, where, "mlp_ratio too small");
  require(feat_h % window == 0 && feat_w % window == 0, ErrorKind::Shape, where,
          "window must divide the feature extents");
}

template <typename S>
CorrelationStateT<S> zero_correlation(const RSAConfig& cfg, int feat_h, int feat_w) {
  cfg.validate(feat_h, feat_w);
  const int kk = cfg.window * cfg.window;
  const int nw = (feat_h / cfg.window) * (feat_w / cfg.window);
  CorrelationStateT<S> state;
  state.iteration = 0;
  state.per_head.reserve(cfg.head_count());
  for (int h = 0; h < cfg.head_count(); ++h)
    state.per_head.push_back(TensorT<S>::zeros(Shape{nw, kk, kk}));
  return state;
}

template <typename S>
std::vector<CorrelationStateT<S>> zero_correlation_stack(const RSAConfig& cfg, int depth,
                                                         int feat_h, int feat_w) {
  std::vector<CorrelationStateT<S>> states;
  states.reserve(depth);
  for (int i = 0; i < depth; ++i) states.push_back(zero_correlation<S>(cfg, feat_h, feat_w));
  return states;
}

template <typename S>
WindowGridT<S> window_partition(const TensorT<S>& feat, int window, int shift) {
  WindowGridT<S> grid;
  grid.windows = window_partition_op(feat, window, shift);
  grid.feat_h = feat.shape()[0];
  grid.feat_w = feat.shape()[1];
  grid.window = window;
  grid.shift = shift;
  return grid;
}

template <typename S>
TensorT<S> window_merge(const WindowGridT<S>& grid) {
  return window_merge_op(grid.windows, grid.feat_h, grid.feat_w, grid.window, grid.shift);
}

template <typename S>
TensorT<S> scale_aggregate(const TensorT<S>& window_tokens, int window, int s) {
  if (s == 1) return window_tokens;
  return box_filter_windows(window_tokens, window, s);
}

template <typename S>
std::pair<WindowGridT<S>, CorrelationStateT<S>> rsa(const WindowGridT<S>& grid,
                                                    const CorrelationStateT<S>& state,
                                                    const RSAParamsT<S>& params,
                                                    const RSAConfig& cfg) {
  const char* where = "rsa-attention::rsa";
  const int heads = cfg.head_count();
  const int kk = cfg.window * cfg.window;
  const int nw = grid.windows.shape()[0];
  require(static_cast<int>(params.heads.size()) == heads, ErrorKind::Shape, where,
          "parameter head count mismatch");
  require(static_cast<int>(state.per_head.size()) == heads, ErrorKind::Shape, where,
          "state head count mismatch");
  for (const auto& c : state.per_head)
    require(c.shape() == Shape{nw, kk, kk}, ErrorKind::Shape, where,
            "correlation state shape mismatch: " + c.shape().str());

  const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(cfg.head_dim())));
  const TensorT<S> one = TensorT<S>::scalar(S(1));

  // K/V share the aggregated tokens, computed once per distinct scale.
  std::vector<TensorT<S>> by_scale(cfg.window + 1);
  auto aggregated = [&](int s) -> const TensorT<S>& {
    if (!by_scale[s].defined()) by_scale[s] = scale_aggregate(grid.windows, cfg.window, s);
    return by_scale[s];
  };

  CorrelationStateT<S> next;
  next.iteration = state.iteration + 1;
  next.per_head.reserve(heads);
  std::vector<TensorT<S>> head_outputs;
  head_outputs.reserve(heads);

  for (int h = 0; h < heads; ++h) {
    const auto& hp = params.heads[h];
    const int s = cfg.scale_for_head(h);
    TensorT<S> q = matmul(grid.windows, hp.p_q);
    TensorT<S> k = matmul(aggregated(s), hp.p_k);
    TensorT<S> v = matmul(aggregated(s), hp.p_v);
    TensorT<S> qk = scale(matmul(q, transpose_last2(k)), inv_sqrt_d);

    TensorT<S> corr;
    if (cfg.recurrent) {
      require(hp.lambda.defined(), ErrorKind::Usage, where, "recurrent head lacks lambda");
      corr = add(mul(qk, hp.lambda), mul(state.per_head[h], sub(one, hp.lambda)));
    } else {
      corr = qk;
    }
    next.per_head.push_back(corr);
    head_outputs.push_back(matmul(softmax(corr, 2), v));
  }

  WindowGridT<S> out = grid;
  out.windows = add(matmul(concat_channels(head_outputs), params.out_weight), params.out_bias);
  return {out, std::move(next)};
}

template <typename S>
std::pair<TensorT<S>, CorrelationStateT<S>> rptl_forward(const TensorT<S>& feat,
                                                         const CorrelationStateT<S>& state,
                                                         const RPTLParamsT<S>& params,
                                                         const RSAConfig& cfg, int layer_idx) {
  cfg.validate(feat.shape()[0], feat.shape()[1]);
  const int shift = rptl_shift(layer_idx, cfg.window);

  TensorT<S> normed = layer_norm(feat, params.ln1_gamma, params.ln1_beta);
  WindowGridT<S> grid = window_partition(normed, cfg.window, shift);
  auto [attn_grid, next_state] = rsa(grid, state, params.rsa, cfg);
  TensorT<S> x = add(feat, window_merge(attn_grid));

  TensorT<S> normed2 = layer_norm(x, params.ln2_gamma, params.ln2_beta);
  TensorT<S> hidden = gelu(add(matmul(normed2, params.mlp_w1), params.mlp_b1));
  TensorT<S> mlp_out = add(matmul(hidden, params.mlp_w2), params.mlp_b2);
  return {add(x, mlp_out), std::move(next_state)};
}

template <typename S>
std::pair<TensorT<S>, std::vector<CorrelationStateT<S>>> rfb_forward(
    const TensorT<S>& feat, const std::vector<CorrelationStateT<S>>& states,
    const RFBParamsT<S>& params, const RSAConfig& cfg, std::vector<int>* shift_trace) {
  require(states.size() == params.layers.size(), ErrorKind::Config, "rsa-attention::rfb_forward",
          "correlation state count != RPTL depth");
  TensorT<S> x = feat;
  std::vector<CorrelationStateT<S>> next;
  next.reserve(states.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    if (shift_trace) shift_trace->push_back(rptl_shift(static_cast<int>(i), cfg.window));
    auto [y, c] = rptl_forward(x, states[i], params.layers[i], cfg, static_cast<int>(i));
    x = y;
    next.push_back(std::move(c));
  }
  return {x, std::move(next)};
}

template <typename S>
RFBParamsT<S> create_rfb_params(ParamStoreT<S>& store, const std::string& prefix,
                                const RSAConfig& cfg, int depth, Rng& rng) {
  require(depth >= 1, ErrorKind::Config, "rsa-attention::create_rfb_params",
          "depth must be positive");
  const int c = cfg.embed_dim;
  const int d = cfg.head_dim();
  const int hidden = cfg.mlp_hidden();
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(c));
  const double hidden_std = 1.0 / std::sqrt(static_cast<double>(hidden));

  RFBParamsT<S> rfb;
  for (int layer = 0; layer < depth; ++layer) {
    const std::string lp = prefix + ".layer" + std::to_string(layer);
    RPTLParamsT<S> p;
    p.ln1_gamma = create_param_const(store, lp + ".ln1.gamma", Shape{c}, S(1));
    p.ln1_beta = create_param_const(store, lp + ".ln1.beta", Shape{c}, S(0));
    for (int h = 0; h < cfg.head_count(); ++h) {
      const std::string hp = lp + ".attn.head" + std::to_string(h);
      typename RSAParamsT<S>::Head head;
      head.p_q = create_param_trunc_normal(store, hp + ".pq", Shape{c, d}, proj_std, rng);
      head.p_k = create_param_trunc_normal(store, hp + ".pk", Shape{c, d}, proj_std, rng);
      head.p_v = create_param_trunc_normal(store, hp + ".pv", Shape{c, d}, proj_std, rng);
      if (cfg.recurrent)
        head.lambda = create_param_const(store, hp + ".lambda", Shape{1}, S(0.9));
      p.rsa.heads.push_back(std::move(head));
    }
    p.rsa.out_weight =
        create_param_trunc_normal(store, lp + ".attn.proj.weight", Shape{c, c}, proj_std, rng);
    p.rsa.out_bias = create_param_const(store, lp + ".attn.proj.bias", Shape{c}, S(0));
    p.ln2_gamma = create_param_const(store, lp + ".ln2.gamma", Shape{c}, S(1));
    p.ln2_beta = create_param_const(store, lp + ".ln2.beta", Shape{c}, S(0));
    p.mlp_w1 =
        create_param_trunc_normal(store, lp + ".mlp.fc1.weight", Shape{c, hidden}, proj_std, rng);
    p.mlp_b1 = create_param_const(store, lp + ".mlp.fc1.bias", Shape{hidden}, S(0));
    p.mlp_w2 = create_param_trunc_normal(store, lp + ".mlp.fc2.weight", Shape{hidden, c},
                                         hidden_std, rng);
    p.mlp_b2 = create_param_const(store, lp + ".mlp.fc2.bias", Shape{c}, S(0));
    rfb.layers.push_back(std::move(p));
  }
  return rfb;
}

#define RECONFORMER_INSTANTIATE_ATTENTION(S)                                                      \
  template CorrelationStateT<S> zero_correlation(const RSAConfig&, int, int);                     \
  template std::vector<CorrelationStateT<S>> zero_correlation_stack(const RSAConfig&, int, int,   \
                                                                    int);                         \
  template WindowGridT<S> window_partition(const TensorT<S>&, int, int);                          \
  template TensorT<S> window_merge(const WindowGridT<S>&);                                        \
  template TensorT<S> scale_aggregate(const TensorT<S>&, int, int);                               \
  template std::pair<WindowGridT<S>, CorrelationStateT<S>> rsa(                                   \
      const WindowGridT<S>&, const CorrelationStateT<S>&, const RSAParamsT<S>&, const RSAConfig&); \
  template std::pair<TensorT<S>, CorrelationStateT<S>> rptl_forward(                              \
      const TensorT<S>&, const CorrelationStateT<S>&, const RPTLParamsT<S>&, const RSAConfig&,    \
      int);                                                                                       \
  template std::pair<TensorT<S>, std::vector<CorrelationStateT<S>>> rfb_forward(                  \
      const TensorT<S>&, const std::vector<CorrelationStateT<S>>&, const RFBParamsT<S>&,          \
      const RSAConfig&, std::vector<int>*);                                                       \
  template RFBParamsT<S> create_rfb_params(ParamStoreT<S>&, const std::string&, const RSAConfig&, \
                                           int, Rng&);

RECONFORMER_INSTANTIATE_ATTENTION(float)
RECONFORMER_INSTANTIATE_ATTENTION(double)

#undef RECONFORMER_INSTANTIATE_ATTENTION

}  // namespace reconformer
