#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "reconformer/attention.hpp"
#include "reconformer/kspace.hpp"
#include "reconformer/ops.hpp"
#include "reconformer/params.hpp"

namespace reconformer {

// Coarse-to-fine recurrent-unit layout, fixed by the architecture:
//   RU1 downsamples by 4, RU2 by 2, RU3 is the overcomplete unit (x2 up).
// The ablation toggles select which units run; RU1 is always on. use_rptl =
// false swaps RSA for standard windowed multi-head self-attention.
struct ModelConfig {
  int height = 64;
  int width = 64;
  int channels = 24;  // C
  int unroll = 5;     // T
  int window = 4;     // K
  std::vector<int> scales = {1, 3};
  std::vector<int> scales_ru1, scales_ru2, scales_ru3;  // optional per-unit overrides
  int heads_per_scale = 1;
  double mlp_ratio = 2.0;
  int rfb_depth = 2;
  bool use_ru2 = true;
  bool use_ru3 = true;
  bool use_rm = true;
  bool use_rptl = true;

  static constexpr double kUnitScale[3] = {4.0, 2.0, 0.5};

  int feat_h(int unit) const { return spatial(height, unit); }
  int feat_w(int unit) const { return spatial(width, unit); }
  std::vector<int> active_units() const;
  RSAConfig rsa_for_unit(int unit) const;
  void validate() const;

 private:
  static int spatial(int extent, int unit) {
    if (unit == 1) return extent / 4;
    if (unit == 2) return extent / 2;
    return extent * 2;
  }
};

template <typename S>
struct ConvLayerT {
  TensorT<S> weight, bias;
  int stride = 1;
  bool transposed = false;
  bool relu_after = false;
};

template <typename S>
struct RUParamsT {
  int unit = 0;  // architectural id, 1-based
  std::vector<ConvLayerT<S>> encoder;
  RFBParamsT<S> rfb;
  std::vector<ConvLayerT<S>> decoder;
};

template <typename S>
struct ModelParamsT {
  std::vector<RUParamsT<S>> units;  // active units only, in execution order
  TensorT<S> rm_w0, rm_b0, rm_w1, rm_b1;  // undefined when RM is off
};

// A parameter store plus the structured handles into it. Checkpoint loads
// mutate the store in place, so handles stay valid.
template <typename S>
struct ModelT {
  ModelConfig config;
  ParamStoreT<S> store;
  ModelParamsT<S> params;
};

template <typename S>
ModelT<S> init_model(const ModelConfig& config, std::uint64_t seed);

template <typename S>
std::size_t count_params(const ModelT<S>& model) {
  return model.store.parameter_count();
}

// Per-unit hidden features and per-layer correlation states; all zero at the
// start of an unroll.
template <typename S>
struct RecurrentStateT {
  std::vector<TensorT<S>> hidden;
  std::vector<std::vector<CorrelationStateT<S>>> corr;
};

template <typename S>
RecurrentStateT<S> zero_state(const ModelConfig& config);

// Constants for the data-consistency projection: measured = U o x and
// keep = 1 - U, both expanded to [H,W,2].
template <typename S>
struct DcTermsT {
  TensorT<S> measured, keep;
};
template <typename S>
DcTermsT<S> dc_terms(const KSpaceT<S>& x, const SamplingMask& mask);

// F^-1[U x + (1 - U) F img] as a tape composition.
template <typename S>
TensorT<S> data_consistency_op(const TensorT<S>& img, const DcTermsT<S>& dc);

template <typename S>
TensorT<S> encoder_forward(const ModelT<S>& model, int unit_pos, const TensorT<S>& y_in);
template <typename S>
TensorT<S> decoder_forward(const ModelT<S>& model, int unit_pos, const TensorT<S>& feat);

// One recurrent unit: feat = RFB(h, c) + Enc(y_in); y_out = DC(Dec(feat));
// h <- feat, c <- updated correlation states.
template <typename S>
TensorT<S> ru_forward(const ModelT<S>& model, int unit_pos, const TensorT<S>& y_in,
                      RecurrentStateT<S>& state, const DcTermsT<S>& dc,
                      std::vector<int>* shift_trace = nullptr);

// Convolutional fusion of the unit outputs with a residual from the last one,
// then DC.
template <typename S>
TensorT<S> refine_module(const ModelT<S>& model, const std::vector<TensorT<S>>& unit_outputs,
                         const DcTermsT<S>& dc);

template <typename S>
struct ForwardResultT {
  TensorT<S> output;                  // final reconstruction, [H,W,2]
  std::vector<TensorT<S>> iterates;   // zero-fill followed by each iteration's output
  RecurrentStateT<S> state;
};

// Unrolled pass: iterates T times through the active units (each consuming
// the previous unit's output) and the refine module; recurrent state persists
// across iterations within the call.
template <typename S>
ForwardResultT<S> model_forward(const ModelT<S>& model, const KSpaceT<S>& x,
                                const SamplingMask& mask, int unroll,
                                std::vector<int>* shift_trace = nullptr);

template <typename S>
TensorT<S> image_to_tensor(const ComplexImageT<S>& img, bool requires_grad = false);
template <typename S>
ComplexImageT<S> tensor_to_image(const TensorT<S>& t);

using Model = ModelT<float>;

}  // namespace reconformer
