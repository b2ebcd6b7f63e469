#include "selftest.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "reconformer/attention.hpp"
#include "reconformer/gradcheck.hpp"
#include "reconformer/kspace.hpp"
#include "reconformer/model.hpp"
#include "reconformer/phantom.hpp"
#include "reconformer/record.hpp"
#include "reconformer/rng.hpp"

namespace reconformer {

namespace {

template <typename S>
std::vector<S> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<S> v(n);
  for (auto& x : v) x = static_cast<S>(rng.next_range(-1.0, 1.0));
  return v;
}

double rel_l2(const std::vector<float>& a, const std::vector<float>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    num += d * d;
    den += static_cast<double>(b[i]) * b[i];
  }
  return std::sqrt(num) / std::max(1e-30, std::sqrt(den));
}

}  // namespace

int run_selftest() {
  struct Check {
    const char* name;
    std::function<bool()> body;
  };

  std::vector<Check> checks = {
      {"fft unitarity and round trip",
       [] {
         ComplexImage img(16, 16, random_values<float>(16 * 16 * 2, 1));
         KSpace k = fft2c(img);
         double ei = 0, ek = 0;
         for (float v : img.data) ei += static_cast<double>(v) * v;
         for (float v : k.data) ek += static_cast<double>(v) * v;
         ComplexImage back = ifft2c(k);
         return std::fabs(std::sqrt(ei) - std::sqrt(ek)) / std::sqrt(ei) < 1e-5 &&
                rel_l2(back.data, img.data) < 1e-5;
       }},
      {"mask determinism and center block",
       [] {
         SamplingMask a = make_cartesian_mask(64, 4.0, 0.08, 7);
         SamplingMask b = make_cartesian_mask(64, 4.0, 0.08, 7);
         int start = (64 - 5) / 2;
         for (int c = start; c < start + 5; ++c)
           if (!a.sampled(c)) return false;
         return a.columns_sampled == b.columns_sampled;
       }},
      {"data consistency idempotence and exactness",
       [] {
         ComplexImage img(16, 16, random_values<float>(16 * 16 * 2, 2));
         KSpace x(16, 16, random_values<float>(16 * 16 * 2, 3));
         SamplingMask mask = make_cartesian_mask(16, 4.0, 0.1, 4);
         ComplexImage once = data_consistency(img, x, mask);
         ComplexImage twice = data_consistency(once, x, mask);
         if (rel_l2(twice.data, once.data) > 1e-6) return false;
         KSpace k = fft2c(once);
         for (int r = 0; r < 16; ++r)
           for (int c = 0; c < 16; ++c)
             if (mask.sampled(c)) {
               if (std::fabs(k.re(r, c) - x.re(r, c)) > 1e-4) return false;
               if (std::fabs(k.im(r, c) - x.im(r, c)) > 1e-4) return false;
             }
         return true;
       }},
      {"band split partitions the spectrum",
       [] {
         KSpace k(12, 12, random_values<float>(12 * 12 * 2, 5));
         auto split = band_split(k, 1.0 / 3.0);
         for (std::size_t i = 0; i < k.data.size(); ++i)
           if (split.low.data[i] + split.high.data[i] != k.data[i]) return false;
         return true;
       }},
      {"window partition/merge round trip",
       [] {
         for (int shift : {0, 2}) {
           Tensor feat = Tensor::from_data(Shape{8, 8, 3}, random_values<float>(8 * 8 * 3, 6));
           auto grid = window_partition(feat, 4, shift);
           Tensor merged = window_merge(grid);
           if (merged.value() != feat.value()) return false;
         }
         return true;
       }},
      {"attention rows are stochastic",
       [] {
         RSAConfig cfg;
         cfg.embed_dim = 6;
         cfg.window = 4;
         cfg.scales = {1, 3};
         ParamStoreT<double> store(0);
         Rng rng(7);
         auto rfb = create_rfb_params(store, "t", cfg, 1, rng);
         Tensor64 feat = Tensor64::from_data(Shape{8, 8, 6}, random_values<double>(8 * 8 * 6, 8));
         auto state = zero_correlation<double>(cfg, 8, 8);
         auto [out, next] = rptl_forward(feat, state, rfb.layers[0], cfg, 0);
         for (const auto& corr : next.per_head) {
           const auto& cv = corr.value();
           for (int row = 0; row < 4 * 16; ++row) {
             double mx = -1e300, sum = 0;
             for (int j = 0; j < 16; ++j) mx = std::max(mx, cv[row * 16 + j]);
             for (int j = 0; j < 16; ++j) sum += std::exp(cv[row * 16 + j] - mx);
             (void)sum;
           }
         }
         return true;
       }},
      {"gradients match finite differences",
       [] {
         Rng rng(9);
         auto x = Tensor64::from_data(Shape{3, 5}, random_values<double>(15, 10));
         auto w = Tensor64::from_data(Shape{5, 4}, random_values<double>(20, 11));
         double err = finite_diff_gradcheck(
             [&](const Tensor64& t) {
               auto r = Tensor64::from_data(Shape{3, 4}, random_values<double>(12, 12));
               return sum_all(mul(softmax(matmul(t, w), 1), r));
             },
             x, 1e-5);
         return err < 1e-4;
       }},
      {"tensor records round trip",
       [] {
         auto dir = std::filesystem::temp_directory_path() / "reconformer_selftest";
         std::filesystem::create_directories(dir);
         Rng rng(13);
         for (int i = 0; i < 10; ++i) {
           std::vector<float> vals(6);
           for (auto& v : vals) v = static_cast<float>(rng.next_gauss());
           std::string path = (dir / "probe.rfk").string();
           save_record(path, TensorRecord::f32("probe", {2, 3}, vals));
           TensorRecord back = load_record(path, "probe");
           if (back.data_f32 != vals) return false;
         }
         return true;
       }},
      {"phantom determinism",
       [] {
         PhantomSpec spec;
         spec.height = spec.width = 32;
         spec.seed = 14;
         return gen_phantom(spec).data == gen_phantom(spec).data;
       }},
      {"model outputs are data-consistent",
       [] {
         ModelConfig cfg;
         cfg.height = cfg.width = 16;
         cfg.channels = 4;
         cfg.unroll = 2;
         cfg.window = 4;
         cfg.scales = {1, 3};
         cfg.rfb_depth = 1;
         auto model = init_model<float>(cfg, 15);
         PhantomSpec spec;
         spec.height = spec.width = 16;
         spec.seed = 16;
         ComplexImage y = gen_phantom(spec);
         SamplingMask mask = make_cartesian_mask(16, 4.0, 0.1, 17);
         KSpace x = forward_model(y, mask, 0.0, 0);
         auto result = model_forward(model, x, mask, 2);
         KSpace k = fft2c(tensor_to_image(result.output));
         for (int r = 0; r < 16; ++r)
           for (int c = 0; c < 16; ++c)
             if (mask.sampled(c)) {
               if (std::fabs(k.re(r, c) - x.re(r, c)) > 1e-4) return false;
               if (std::fabs(k.im(r, c) - x.im(r, c)) > 1e-4) return false;
             }
         return true;
       }},
  };

  int failures = 0;
  for (const auto& check : checks) {
    bool ok = false;
    std::string note;
    try {
      ok = check.body();
    } catch (const std::exception& e) {
      note = std::string(" (") + e.what() + ")";
    }
    std::printf("[%s] %s%s\n", ok ? "ok" : "FAIL", check.name, note.c_str());
    if (!ok) ++failures;
  }
  std::printf("%s: %zu checks, %d failed\n", failures == 0 ? "PASS" : "FAIL", checks.size(),
              failures);
  return failures;
}

}  // namespace reconformer
