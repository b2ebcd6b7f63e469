#include "reconformer/params.hpp"

#include <cmath>

#include "reconformer/record.hpp"
#include "reconformer/rng.hpp"

namespace reconformer {

template <typename S>
TensorT<S> ParamStoreT<S>::create(const std::string& name, Shape shape, std::vector<S> values) {
  require(!contains(name), ErrorKind::Usage, "diff-engine::ParamStore",
          "duplicate parameter name '" + name + "'");
  TensorT<S> t = TensorT<S>::from_data(shape, std::move(values), /*requires_grad=*/true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, t);
  return t;
}

template <typename S>
const TensorT<S>& ParamStoreT<S>::get(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorKind::Usage, "diff-engine::ParamStore",
          "no parameter named '" + name + "'");
  return entries_[it->second].second;
}

template <typename S>
TensorT<S>& ParamStoreT<S>::get(const std::string& name) {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorKind::Usage, "diff-engine::ParamStore",
          "no parameter named '" + name + "'");
  return entries_[it->second].second;
}

template <typename S>
std::size_t ParamStoreT<S>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

template <typename S>
std::vector<std::string> ParamStoreT<S>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(name);
  return out;
}

template <typename S>
void ParamStoreT<S>::zero_grads() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

template <typename S>
double ParamStoreT<S>::clip_global_norm(double max_norm) {
  double sq = 0;
  for (auto& [name, t] : entries_) {
    require(t.has_grad(), ErrorKind::Usage, "diff-engine::clip_global_norm",
            "missing gradient for '" + name + "'");
    for (S g : t.grad()) sq += static_cast<double>(g) * g;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    S factor = static_cast<S>(max_norm / norm);
    for (auto& [name, t] : entries_)
      for (auto& g : t.node()->grad) g *= factor;
  }
  return norm;
}

template <typename S>
AdamStateT<S> make_adam_state(const ParamStoreT<S>& params, double lr, double beta1, double beta2,
                              double eps) {
  AdamStateT<S> state;
  state.lr = lr;
  state.beta1 = beta1;
  state.beta2 = beta2;
  state.eps = eps;
  state.slots.resize(params.record_count());
  for (std::size_t i = 0; i < params.record_count(); ++i) {
    std::size_t n = params.entries()[i].second.size();
    state.slots[i].m.assign(n, S(0));
    state.slots[i].v.assign(n, S(0));
  }
  return state;
}

template <typename S>
void adam_step(ParamStoreT<S>& params, AdamStateT<S>& state) {
  const char* where = "diff-engine::adam_step";
  require(state.slots.size() == params.record_count(), ErrorKind::Usage, where,
          "state does not match parameter store");
  state.step += 1;
  const double corr1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.record_count(); ++i) {
    auto& [name, t] = params.entries()[i];
    require(t.has_grad(), ErrorKind::Usage, where, "missing gradient for '" + name + "'");
    const auto& g = t.grad();
    auto& m = state.slots[i].m;
    auto& v = state.slots[i].v;
    auto& w = t.mutable_value();
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = static_cast<S>(state.beta1 * m[j] + (1.0 - state.beta1) * g[j]);
      v[j] = static_cast<S>(state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j]);
      double mhat = m[j] / corr1;
      double vhat = v[j] / corr2;
      w[j] = static_cast<S>(w[j] - state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

template <typename S>
TensorT<S> create_param_trunc_normal(ParamStoreT<S>& store, const std::string& name, Shape shape,
                                     double stddev, Rng& rng) {
  std::vector<S> values(shape.element_count());
  for (auto& v : values) v = static_cast<S>(rng.next_trunc_gauss(stddev));
  return store.create(name, shape, std::move(values));
}

template <typename S>
TensorT<S> create_param_const(ParamStoreT<S>& store, const std::string& name, Shape shape,
                              S value) {
  return store.create(name, shape, std::vector<S>(shape.element_count(), value));
}

namespace {

template <typename S>
TensorRecord to_record(const std::string& name, const Shape& shape, const std::vector<S>& data) {
  std::vector<std::uint32_t> extents;
  for (int i = 0; i < shape.rank(); ++i) extents.push_back(static_cast<std::uint32_t>(shape[i]));
  if constexpr (std::is_same_v<S, float>)
    return TensorRecord::f32(name, extents, data);
  else
    return TensorRecord::f64(name, extents, std::vector<double>(data.begin(), data.end()));
}

template <typename S>
const std::vector<S>& record_values(const TensorRecord& r);
template <>
const std::vector<float>& record_values<float>(const TensorRecord& r) {
  require(r.dtype == TensorRecord::kFloat32, ErrorKind::Format, "diff-engine::load_checkpoint",
          "dtype mismatch for record '" + r.name + "'");
  return r.data_f32;
}
template <>
const std::vector<double>& record_values<double>(const TensorRecord& r) {
  require(r.dtype == TensorRecord::kFloat64, ErrorKind::Format, "diff-engine::load_checkpoint",
          "dtype mismatch for record '" + r.name + "'");
  return r.data_f64;
}

}  // namespace

template <typename S>
void save_checkpoint(const std::string& path, const ParamStoreT<S>& params,
                     const AdamStateT<S>* state) {
  std::vector<TensorRecord> records;
  for (const auto& [name, t] : params.entries())
    records.push_back(to_record<S>(name, t.shape(), t.value()));
  if (state) {
    for (std::size_t i = 0; i < params.record_count(); ++i) {
      const auto& [name, t] = params.entries()[i];
      records.push_back(to_record<S>("adam.m." + name, t.shape(), state->slots[i].m));
      records.push_back(to_record<S>("adam.v." + name, t.shape(), state->slots[i].v));
    }
    records.push_back(
        to_record<S>("adam.step", Shape{1}, std::vector<S>{static_cast<S>(state->step)}));
  }
  save_records(path, records);
}

template <typename S>
void load_checkpoint(const std::string& path, ParamStoreT<S>& params, AdamStateT<S>* state) {
  const char* where = "diff-engine::load_checkpoint";
  auto records = load_records(path);
  std::unordered_map<std::string, const TensorRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;

  for (auto& [name, t] : params.entries()) {
    auto it = by_name.find(name);
    require(it != by_name.end(), ErrorKind::Format, where, "checkpoint lacks record '" + name + "'");
    const auto& vals = record_values<S>(*it->second);
    require(vals.size() == t.size(), ErrorKind::Format, where,
            "record '" + name + "' has wrong size");
    t.mutable_value() = vals;
  }
  if (state) {
    require(state->slots.size() == params.record_count(), ErrorKind::Usage, where,
            "adam state does not match parameter store");
    for (std::size_t i = 0; i < params.record_count(); ++i) {
      const auto& name = params.entries()[i].first;
      for (const char* kind : {"m", "v"}) {
        auto it = by_name.find("adam." + std::string(kind) + "." + name);
        require(it != by_name.end(), ErrorKind::Format, where,
                "checkpoint lacks adam moments for '" + name + "'");
        const auto& vals = record_values<S>(*it->second);
        require(vals.size() == params.entries()[i].second.size(), ErrorKind::Format, where,
                "adam moment record size mismatch for '" + name + "'");
        (kind[0] == 'm' ? state->slots[i].m : state->slots[i].v) = vals;
      }
    }
    auto it = by_name.find("adam.step");
    require(it != by_name.end(), ErrorKind::Format, where, "checkpoint lacks adam.step");
    state->step = static_cast<std::int64_t>(record_values<S>(*it->second)[0]);
  }
}

template class ParamStoreT<float>;
template class ParamStoreT<double>;
template TensorT<float> create_param_trunc_normal(ParamStoreT<float>&, const std::string&, Shape,
                                                  double, Rng&);
template TensorT<double> create_param_trunc_normal(ParamStoreT<double>&, const std::string&, Shape,
                                                   double, Rng&);
template TensorT<float> create_param_const(ParamStoreT<float>&, const std::string&, Shape, float);
template TensorT<double> create_param_const(ParamStoreT<double>&, const std::string&, Shape,
                                            double);
template AdamStateT<float> make_adam_state(const ParamStoreT<float>&, double, double, double,
                                           double);
template AdamStateT<double> make_adam_state(const ParamStoreT<double>&, double, double, double,
                                            double);
template void adam_step(ParamStoreT<float>&, AdamStateT<float>&);
template void adam_step(ParamStoreT<double>&, AdamStateT<double>&);
template void save_checkpoint(const std::string&, const ParamStoreT<float>&,
                              const AdamStateT<float>*);
template void save_checkpoint(const std::string&, const ParamStoreT<double>&,
                              const AdamStateT<double>*);
template void load_checkpoint(const std::string&, ParamStoreT<float>&, AdamStateT<float>*);
template void load_checkpoint(const std::string&, ParamStoreT<double>&, AdamStateT<double>*);

}  // namespace reconformer
