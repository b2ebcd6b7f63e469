#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "reconformer/tensor.hpp"

namespace reconformer {

// Ordered map of named trainable tensors. Iteration order is creation order,
// which fixes the RNG stream during initialization and the record order in
// checkpoints.
template <typename S>
class ParamStoreT {
 public:
  explicit ParamStoreT(std::uint64_t rng_seed = 0) : rng_seed_(rng_seed) {}

  TensorT<S> create(const std::string& name, Shape shape, std::vector<S> values);
  const TensorT<S>& get(const std::string& name) const;
  TensorT<S>& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t record_count() const { return entries_.size(); }
  std::size_t parameter_count() const;
  std::vector<std::string> names() const;

  void zero_grads();
  // Scales every gradient by max_norm/norm when the global L2 norm exceeds
  // max_norm; returns the pre-clip norm. Usage error on missing gradients.
  double clip_global_norm(double max_norm);

  std::uint64_t rng_seed() const { return rng_seed_; }

  const std::vector<std::pair<std::string, TensorT<S>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, TensorT<S>>>& entries() { return entries_; }

 private:
  std::vector<std::pair<std::string, TensorT<S>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t rng_seed_ = 0;
};

// Bias-corrected Adam. Defaults: lr 2e-4, beta1 0.9, beta2 0.999, eps 1e-8.
template <typename S>
struct AdamStateT {
  struct Slot {
    std::vector<S> m, v;
  };
  std::vector<Slot> slots;  // aligned with ParamStore entry order
  std::int64_t step = 0;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
AdamStateT<S> make_adam_state(const ParamStoreT<S>& params, double lr = 2e-4, double beta1 = 0.9,
                              double beta2 = 0.999, double eps = 1e-8);

// One Adam update over every record; usage error if any gradient is missing.
template <typename S>
void adam_step(ParamStoreT<S>& params, AdamStateT<S>& state);

class Rng;

// Weight init policy: truncated normal (+/- 2 sigma, resampled) with the
// given stddev, drawn in element order from `rng`.
template <typename S>
TensorT<S> create_param_trunc_normal(ParamStoreT<S>& store, const std::string& name, Shape shape,
                                     double stddev, Rng& rng);
template <typename S>
TensorT<S> create_param_const(ParamStoreT<S>& store, const std::string& name, Shape shape,
                              S value);

// Checkpoint container: one record per parameter, adam.m.<name>/adam.v.<name>
// moment records when `state` is given, and an adam.step counter.
template <typename S>
void save_checkpoint(const std::string& path, const ParamStoreT<S>& params,
                     const AdamStateT<S>* state);
template <typename S>
void load_checkpoint(const std::string& path, ParamStoreT<S>& params, AdamStateT<S>* state);

using ParamStore = ParamStoreT<float>;
using AdamState = AdamStateT<float>;

}  // namespace reconformer
