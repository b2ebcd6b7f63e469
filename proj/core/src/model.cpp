#include "reconformer/model.hpp"

#include <cmath>

namespace reconformer {

namespace {
const char* kWhere = "reconformer-net";
}

std::vector<int> ModelConfig::active_units() const {
  std::vector<int> units{1};
  if (use_ru2) units.push_back(2);
  if (use_ru3) units.push_back(3);
  return units;
}

RSAConfig ModelConfig::rsa_for_unit(int unit) const {
  RSAConfig cfg;
  cfg.embed_dim = channels;
  cfg.window = window;
  const std::vector<int>* per_unit =
      unit == 1 ? &scales_ru1 : (unit == 2 ? &scales_ru2 : &scales_ru3);
  cfg.scales = per_unit->empty() ? scales : *per_unit;
  cfg.heads_per_scale = heads_per_scale;
  cfg.mlp_ratio = mlp_ratio;
  cfg.recurrent = use_rptl;
  return cfg;
}

void ModelConfig::validate() const {
  const std::string where = std::string(kWhere) + "::ModelConfig";
  require(height >= 8 && width >= 8, ErrorKind::Config, where, "image extents must be >= 8");
  require(height % 4 == 0 && width % 4 == 0, ErrorKind::Config, where,
          "image extents must be divisible by 4");
  require(channels >= 1, ErrorKind::Config, where, "channels must be positive");
  require(unroll >= 1, ErrorKind::Config, where, "unroll length must be >= 1");
  require(rfb_depth >= 1, ErrorKind::Config, where, "rfb_depth must be >= 1");
  for (int unit : active_units()) {
    require(feat_h(unit) % window == 0 && feat_w(unit) % window == 0, ErrorKind::Config, where,
            "unit " + std::to_string(unit) + " feature is not divisible by the window size");
    rsa_for_unit(unit).validate(feat_h(unit), feat_w(unit));
  }
}

namespace {

template <typename S>
ConvLayerT<S> make_conv(ParamStoreT<S>& store, const std::string& name, int k, int ci, int co,
                        int stride, bool transposed, bool relu_after, Rng& rng) {
  ConvLayerT<S> layer;
  const double stddev = 1.0 / std::sqrt(static_cast<double>(k) * k * ci);
  layer.weight = create_param_trunc_normal(store, name + ".weight", Shape{k, k, ci, co}, stddev, rng);
  layer.bias = create_param_const(store, name + ".bias", Shape{co}, S(0));
  layer.stride = stride;
  layer.transposed = transposed;
  layer.relu_after = relu_after;
  return layer;
}

// Encoder stacks per unit; relu after every conv except the last.
//   RU1: conv s2 (2->C), conv s2 (C->C)          -> H/4
//   RU2: conv s2 (2->C), conv s1 (C->C)          -> H/2
//   RU3: tconv s2 (2->C), conv s1 (C->C)         -> 2H (overcomplete)
template <typename S>
std::vector<ConvLayerT<S>> build_encoder(ParamStoreT<S>& store, int unit, int c,
                                         const std::string& prefix, Rng& rng) {
  std::vector<ConvLayerT<S>> enc;
  if (unit == 1) {
    enc.push_back(make_conv(store, prefix + ".conv0", 3, 2, c, 2, false, true, rng));
    enc.push_back(make_conv(store, prefix + ".conv1", 3, c, c, 2, false, false, rng));
  } else if (unit == 2) {
    enc.push_back(make_conv(store, prefix + ".conv0", 3, 2, c, 2, false, true, rng));
    enc.push_back(make_conv(store, prefix + ".conv1", 3, c, c, 1, false, false, rng));
  } else {
    enc.push_back(make_conv(store, prefix + ".conv0", 3, 2, c, 2, true, true, rng));
    enc.push_back(make_conv(store, prefix + ".conv1", 3, c, c, 1, false, false, rng));
  }
  return enc;
}

// Decoders mirror the encoder in reverse (transposed where the encoder
// strided down, strided where it upsampled), then a final conv to 2 channels
// with no activation.
template <typename S>
std::vector<ConvLayerT<S>> build_decoder(ParamStoreT<S>& store, int unit, int c,
                                         const std::string& prefix, Rng& rng) {
  std::vector<ConvLayerT<S>> dec;
  if (unit == 1) {
    dec.push_back(make_conv(store, prefix + ".conv0", 3, c, c, 2, true, true, rng));
    dec.push_back(make_conv(store, prefix + ".conv1", 3, c, c, 2, true, true, rng));
  } else if (unit == 2) {
    dec.push_back(make_conv(store, prefix + ".conv0", 3, c, c, 1, false, true, rng));
    dec.push_back(make_conv(store, prefix + ".conv1", 3, c, c, 2, true, true, rng));
  } else {
    dec.push_back(make_conv(store, prefix + ".conv0", 3, c, c, 1, false, true, rng));
    dec.push_back(make_conv(store, prefix + ".conv1", 3, c, c, 2, false, true, rng));
  }
  dec.push_back(make_conv(store, prefix + ".conv2", 3, c, 2, 1, false, false, rng));
  return dec;
}

}  // namespace

template <typename S>
ModelT<S> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelT<S> model;
  model.config = config;
  model.store = ParamStoreT<S>(seed);
  Rng rng(seed);

  const int c = config.channels;
  for (int unit : config.active_units()) {
    const std::string prefix = "ru" + std::to_string(unit);
    RUParamsT<S> ru;
    ru.unit = unit;
    ru.encoder = build_encoder(model.store, unit, c, prefix + ".enc", rng);
    ru.rfb = create_rfb_params(model.store, prefix + ".rfb", config.rsa_for_unit(unit),
                               config.rfb_depth, rng);
    ru.decoder = build_decoder(model.store, unit, c, prefix + ".dec", rng);
    model.params.units.push_back(std::move(ru));
  }
  if (config.use_rm) {
    const int in_c = 2 * static_cast<int>(config.active_units().size());
    const double std0 = 1.0 / std::sqrt(9.0 * in_c);
    const double std1 = 1.0 / std::sqrt(9.0 * c);
    model.params.rm_w0 =
        create_param_trunc_normal(model.store, "rm.conv0.weight", Shape{3, 3, in_c, c}, std0, rng);
    model.params.rm_b0 = create_param_const(model.store, "rm.conv0.bias", Shape{c}, S(0));
    model.params.rm_w1 =
        create_param_trunc_normal(model.store, "rm.conv1.weight", Shape{3, 3, c, 2}, std1, rng);
    model.params.rm_b1 = create_param_const(model.store, "rm.conv1.bias", Shape{2}, S(0));
  }
  return model;
}

template <typename S>
RecurrentStateT<S> zero_state(const ModelConfig& config) {
  config.validate();
  RecurrentStateT<S> state;
  for (int unit : config.active_units()) {
    state.hidden.push_back(
        TensorT<S>::zeros(Shape{config.feat_h(unit), config.feat_w(unit), config.channels}));
    state.corr.push_back(zero_correlation_stack<S>(config.rsa_for_unit(unit), config.rfb_depth,
                                                   config.feat_h(unit), config.feat_w(unit)));
  }
  return state;
}

template <typename S>
DcTermsT<S> dc_terms(const KSpaceT<S>& x, const SamplingMask& mask) {
  require(mask.width == x.width, ErrorKind::Shape, std::string(kWhere) + "::dc_terms",
          "mask width != k-space width");
  std::vector<S> measured(x.data.size()), keep(x.data.size());
  for (int r = 0; r < x.height; ++r)
    for (int c = 0; c < x.width; ++c) {
      const std::size_t i = (static_cast<std::size_t>(r) * x.width + c) * 2;
      const bool on = mask.sampled(c);
      measured[i] = on ? x.data[i] : S(0);
      measured[i + 1] = on ? x.data[i + 1] : S(0);
      keep[i] = keep[i + 1] = on ? S(0) : S(1);
    }
  Shape shape{x.height, x.width, 2};
  return {TensorT<S>::from_data(shape, std::move(measured)),
          TensorT<S>::from_data(shape, std::move(keep))};
}

template <typename S>
TensorT<S> data_consistency_op(const TensorT<S>& img, const DcTermsT<S>& dc) {
  return ifft2c_op(add(mul(fft2c_op(img), dc.keep), dc.measured));
}

namespace {

template <typename S>
TensorT<S> run_conv_stack(const std::vector<ConvLayerT<S>>& stack, TensorT<S> x) {
  for (const auto& layer : stack) {
    x = conv2d(x, layer.weight, layer.bias, layer.stride, Padding::Same, layer.transposed);
    if (layer.relu_after) x = relu(x);
  }
  return x;
}

}  // namespace

template <typename S>
TensorT<S> encoder_forward(const ModelT<S>& model, int unit_pos, const TensorT<S>& y_in) {
  require(y_in.shape() == Shape{model.config.height, model.config.width, 2}, ErrorKind::Shape,
          std::string(kWhere) + "::encoder_forward", "input must be [H,W,2]");
  return run_conv_stack(model.params.units[unit_pos].encoder, y_in);
}

template <typename S>
TensorT<S> decoder_forward(const ModelT<S>& model, int unit_pos, const TensorT<S>& feat) {
  const int unit = model.params.units[unit_pos].unit;
  require(feat.shape() == Shape{model.config.feat_h(unit), model.config.feat_w(unit),
                                model.config.channels},
          ErrorKind::Shape, std::string(kWhere) + "::decoder_forward",
          "feature geometry mismatch for unit " + std::to_string(unit));
  return run_conv_stack(model.params.units[unit_pos].decoder, feat);
}

template <typename S>
TensorT<S> ru_forward(const ModelT<S>& model, int unit_pos, const TensorT<S>& y_in,
                      RecurrentStateT<S>& state, const DcTermsT<S>& dc,
                      std::vector<int>* shift_trace) {
  const auto& ru = model.params.units[unit_pos];
  const RSAConfig rsa_cfg = model.config.rsa_for_unit(ru.unit);
  auto [rfb_out, corr_next] =
      rfb_forward(state.hidden[unit_pos], state.corr[unit_pos], ru.rfb, rsa_cfg, shift_trace);
  TensorT<S> feat = add(rfb_out, encoder_forward(model, unit_pos, y_in));
  TensorT<S> y_out = data_consistency_op(decoder_forward(model, unit_pos, feat), dc);
  state.hidden[unit_pos] = feat;
  state.corr[unit_pos] = std::move(corr_next);
  return y_out;
}

template <typename S>
TensorT<S> refine_module(const ModelT<S>& model, const std::vector<TensorT<S>>& unit_outputs,
                         const DcTermsT<S>& dc) {
  require(model.params.rm_w0.defined(), ErrorKind::Usage, std::string(kWhere) + "::refine_module",
          "refine module is disabled in this configuration");
  require(!unit_outputs.empty(), ErrorKind::Shape, std::string(kWhere) + "::refine_module",
          "no unit outputs");
  TensorT<S> fused = concat_channels(unit_outputs);
  fused = relu(conv2d(fused, model.params.rm_w0, model.params.rm_b0, 1, Padding::Same));
  fused = conv2d(fused, model.params.rm_w1, model.params.rm_b1, 1, Padding::Same);
  return data_consistency_op(add(fused, unit_outputs.back()), dc);
}

template <typename S>
ForwardResultT<S> model_forward(const ModelT<S>& model, const KSpaceT<S>& x,
                                const SamplingMask& mask, int unroll,
                                std::vector<int>* shift_trace) {
  const std::string where = std::string(kWhere) + "::model_forward";
  require(unroll >= 1, ErrorKind::Config, where, "unroll length must be >= 1");
  require(x.height == model.config.height && x.width == model.config.width, ErrorKind::Shape,
          where, "k-space geometry does not match the model");

  ForwardResultT<S> result;
  DcTermsT<S> dc = dc_terms(x, mask);
  result.state = zero_state<S>(model.config);

  TensorT<S> y = ifft2c_op(dc.measured);  // zero-filled reconstruction
  result.iterates.push_back(y);
  for (int t = 0; t < unroll; ++t) {
    std::vector<TensorT<S>> unit_outputs;
    TensorT<S> y_in = y;
    for (std::size_t pos = 0; pos < model.params.units.size(); ++pos) {
      y_in = ru_forward(model, static_cast<int>(pos), y_in, result.state, dc, shift_trace);
      unit_outputs.push_back(y_in);
    }
    y = model.config.use_rm ? refine_module(model, unit_outputs, dc) : unit_outputs.back();
    result.iterates.push_back(y);
  }
  result.output = y;
  return result;
}

template <typename S>
TensorT<S> image_to_tensor(const ComplexImageT<S>& img, bool requires_grad) {
  return TensorT<S>::from_data(Shape{img.height, img.width, 2}, img.data, requires_grad);
}

template <typename S>
ComplexImageT<S> tensor_to_image(const TensorT<S>& t) {
  const Shape& s = t.shape();
  require(s.rank() == 3 && s[2] == 2, ErrorKind::Shape, std::string(kWhere) + "::tensor_to_image",
          "expected [H,W,2], got " + s.str());
  return ComplexImageT<S>(s[0], s[1], t.value());
}

#define RECONFORMER_INSTANTIATE_MODEL(S)                                                         \
  template ModelT<S> init_model(const ModelConfig&, std::uint64_t);                              \
  template RecurrentStateT<S> zero_state(const ModelConfig&);                                    \
  template DcTermsT<S> dc_terms(const KSpaceT<S>&, const SamplingMask&);                         \
  template TensorT<S> data_consistency_op(const TensorT<S>&, const DcTermsT<S>&);                \
  template TensorT<S> encoder_forward(const ModelT<S>&, int, const TensorT<S>&);                 \
  template TensorT<S> decoder_forward(const ModelT<S>&, int, const TensorT<S>&);                 \
  template TensorT<S> ru_forward(const ModelT<S>&, int, const TensorT<S>&, RecurrentStateT<S>&,  \
                                 const DcTermsT<S>&, std::vector<int>*);                         \
  template TensorT<S> refine_module(const ModelT<S>&, const std::vector<TensorT<S>>&,            \
                                    const DcTermsT<S>&);                                         \
  template ForwardResultT<S> model_forward(const ModelT<S>&, const KSpaceT<S>&,                  \
                                           const SamplingMask&, int, std::vector<int>*);         \
  template TensorT<S> image_to_tensor(const ComplexImageT<S>&, bool);                            \
  template ComplexImageT<S> tensor_to_image(const TensorT<S>&);

RECONFORMER_INSTANTIATE_MODEL(float)
RECONFORMER_INSTANTIATE_MODEL(double)

#undef RECONFORMER_INSTANTIATE_MODEL

}  // namespace reconformer
