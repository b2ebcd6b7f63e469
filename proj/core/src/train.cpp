#include "reconformer/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include "reconformer/config.hpp"
#include "reconformer/rng.hpp"

namespace reconformer {

namespace {

const char* const kWhere = "train-eval";

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string format_float9(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

KeyValueConfig model_config_to_kv(const ModelConfig& m) {
  KeyValueConfig kv;
  kv.set_int("height", m.height);
  kv.set_int("width", m.width);
  kv.set_int("channels", m.channels);
  kv.set_int("unroll", m.unroll);
  kv.set_int("window", m.window);
  kv.set("scales", join_ints(m.scales));
  if (!m.scales_ru1.empty()) kv.set("scales_ru1", join_ints(m.scales_ru1));
  if (!m.scales_ru2.empty()) kv.set("scales_ru2", join_ints(m.scales_ru2));
  if (!m.scales_ru3.empty()) kv.set("scales_ru3", join_ints(m.scales_ru3));
  kv.set_int("heads_per_scale", m.heads_per_scale);
  kv.set_double("mlp_ratio", m.mlp_ratio);
  kv.set_int("rfb_depth", m.rfb_depth);
  kv.set_bool("use_ru2", m.use_ru2);
  kv.set_bool("use_ru3", m.use_ru3);
  kv.set_bool("use_rm", m.use_rm);
  kv.set_bool("use_rptl", m.use_rptl);
  return kv;
}

ModelConfig model_config_from_kv(const KeyValueConfig& kv) {
  ModelConfig m;
  m.height = static_cast<int>(kv.get_int("height", m.height));
  m.width = static_cast<int>(kv.get_int("width", m.width));
  m.channels = static_cast<int>(kv.get_int("channels", m.channels));
  m.unroll = static_cast<int>(kv.get_int("unroll", m.unroll));
  m.window = static_cast<int>(kv.get_int("window", m.window));
  m.scales = kv.get_int_list("scales", m.scales);
  m.scales_ru1 = kv.get_int_list("scales_ru1", {});
  m.scales_ru2 = kv.get_int_list("scales_ru2", {});
  m.scales_ru3 = kv.get_int_list("scales_ru3", {});
  m.heads_per_scale = static_cast<int>(kv.get_int("heads_per_scale", m.heads_per_scale));
  m.mlp_ratio = kv.get_double("mlp_ratio", m.mlp_ratio);
  m.rfb_depth = static_cast<int>(kv.get_int("rfb_depth", m.rfb_depth));
  m.use_ru2 = kv.get_bool("use_ru2", m.use_ru2);
  m.use_ru3 = kv.get_bool("use_ru3", m.use_ru3);
  m.use_rm = kv.get_bool("use_rm", m.use_rm);
  m.use_rptl = kv.get_bool("use_rptl", m.use_rptl);
  return m;
}

KeyValueConfig train_config_to_kv(const TrainConfig& t) {
  KeyValueConfig kv = model_config_to_kv(t.model);
  kv.set("dataset_dir", t.dataset_dir);
  kv.set("out_dir", t.out_dir);
  kv.set_int("steps", t.steps);
  kv.set_int("epochs", t.epochs);
  kv.set_int("batch", t.batch);
  kv.set_double("lr", t.lr);
  kv.set_double("grad_clip", t.grad_clip);
  kv.set("seed", std::to_string(t.seed));
  return kv;
}

TrainConfig train_config_from_kv(const KeyValueConfig& kv) {
  TrainConfig t;
  t.model = model_config_from_kv(kv);
  t.dataset_dir = kv.get_or("dataset_dir", "");
  t.out_dir = kv.get_or("out_dir", "");
  t.steps = static_cast<int>(kv.get_int("steps", t.steps));
  t.epochs = static_cast<int>(kv.get_int("epochs", t.epochs));
  t.batch = static_cast<int>(kv.get_int("batch", t.batch));
  t.lr = kv.get_double("lr", t.lr);
  t.grad_clip = kv.get_double("grad_clip", t.grad_clip);
  t.seed = kv.get_u64("seed", t.seed);
  return t;
}

TrainResult train(const TrainConfig& cfg) {
  const std::string where = std::string(kWhere) + "::train";
  require(cfg.batch >= 1, ErrorKind::Config, where, "batch size must be positive");
  require(cfg.steps >= 0, ErrorKind::Config, where, "step count must be non-negative");
  require(cfg.lr >= 0.0, ErrorKind::Config, where, "learning rate must be non-negative");
  cfg.model.validate();

  std::vector<Sample> samples = load_all_samples(cfg.dataset_dir);
  require(!samples.empty(), ErrorKind::Domain, where, "dataset is empty");
  for (const auto& s : samples)
    require(s.ground_truth.height == cfg.model.height && s.ground_truth.width == cfg.model.width,
            ErrorKind::Shape, where, "dataset geometry does not match the model config");
  const int n = static_cast<int>(samples.size());

  TrainResult result;
  result.model = init_model<float>(cfg.model, cfg.seed);
  AdamState adam = make_adam_state(result.model.store, cfg.lr);

  std::vector<Tensor> gt;
  gt.reserve(samples.size());
  for (const auto& s : samples) gt.push_back(image_to_tensor(s.ground_truth));

  // Deterministic batch schedule from a stream independent of the init draws.
  Rng batch_rng(mix_seed(cfg.seed, 0x7261696e));
  std::vector<std::vector<int>> schedule;
  if (cfg.epochs > 0) {
    for (int e = 0; e < cfg.epochs; ++e) {
      std::vector<int> order(n);
      std::iota(order.begin(), order.end(), 0);
      for (int i = n - 1; i > 0; --i)
        std::swap(order[i], order[batch_rng.next_below(static_cast<std::uint64_t>(i) + 1)]);
      for (int at = 0; at < n; at += cfg.batch) {
        std::vector<int> chunk(order.begin() + at,
                               order.begin() + std::min(n, at + cfg.batch));
        schedule.push_back(std::move(chunk));
      }
    }
  } else {
    for (int s = 0; s < cfg.steps; ++s) {
      std::vector<int> chunk(cfg.batch);
      for (auto& idx : chunk)
        idx = static_cast<int>(batch_rng.next_below(static_cast<std::uint64_t>(n)));
      schedule.push_back(std::move(chunk));
    }
  }

  const auto start = std::chrono::steady_clock::now();
  for (std::size_t step = 0; step < schedule.size(); ++step) {
    float loss_value = 0.0f;
    try {
      Tensor loss;
      for (int idx : schedule[step]) {
        auto fwd = model_forward(result.model, samples[idx].kspace, samples[idx].mask,
                                 cfg.model.unroll);
        Tensor sample_loss = l1_loss(fwd.output, gt[idx]);
        loss = loss.defined() ? add(loss, sample_loss) : sample_loss;
      }
      loss = scale(loss, 1.0f / static_cast<float>(schedule[step].size()));
      loss_value = loss.item();
      loss.backward();
    } catch (const Error& e) {
      fail(ErrorKind::Domain, where,
           "aborted at step " + std::to_string(step + 1) + ": " + e.what());
    }
    result.model.store.clip_global_norm(cfg.grad_clip);
    adam_step(result.model.store, adam);
    result.model.store.zero_grads();

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back({static_cast<int>(step + 1), loss_value, seconds});
  }

  if (!cfg.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    require(!ec, ErrorKind::Io, where, "cannot create '" + cfg.out_dir + "'");

    std::ofstream log(cfg.out_dir + "/loss_log.csv", std::ios::trunc);
    require(log.good(), ErrorKind::Io, where, "cannot write loss log");
    log << "step,loss,seconds\n";
    for (const auto& row : result.log) {
      char sec[32];
      std::snprintf(sec, sizeof(sec), "%.3f", row.seconds);
      log << row.step << "," << format_float9(row.loss) << "," << sec << "\n";
    }

    result.checkpoint_path = cfg.out_dir + "/checkpoint.rfk";
    save_checkpoint(result.checkpoint_path, result.model.store, &adam);
    model_config_to_kv(cfg.model).write_file(cfg.out_dir + "/model_config.txt");
    train_config_to_kv(cfg).write_file(cfg.out_dir + "/effective_config.txt");
  }
  return result;
}

MetricsReport evaluate(const Model& model, const std::string& dataset_dir, int unroll) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<Sample> samples = load_all_samples(dataset_dir);
  require(!samples.empty(), ErrorKind::Domain, std::string(kWhere) + "::evaluate",
          "dataset is empty");

  MetricsReport report;
  for (const auto& s : samples) {
    auto fwd = model_forward(model, s.kspace, s.mask, unroll);
    ComplexImage recon = tensor_to_image(fwd.output);
    ComplexImage zf = zero_fill(s.kspace, s.mask);

    std::vector<double> gt_mag = magnitude(s.ground_truth);
    std::vector<double> recon_mag = magnitude(recon);
    std::vector<double> zf_mag = magnitude(zf);
    const double data_range = *std::max_element(gt_mag.begin(), gt_mag.end());

    SampleMetrics m;
    m.id = s.id;
    m.psnr = psnr(recon_mag, gt_mag, data_range);
    m.ssim = ssim(recon_mag, gt_mag, s.ground_truth.height, s.ground_truth.width, data_range);
    BandMetrics bands = kspace_band_metrics(recon, s.ground_truth);
    m.low_psnr = bands.low_psnr;
    m.high_psnr = bands.high_psnr;
    m.zero_filled_psnr = psnr(zf_mag, gt_mag, data_range);
    m.zero_filled_ssim =
        ssim(zf_mag, gt_mag, s.ground_truth.height, s.ground_truth.width, data_range);
    report.samples.push_back(m);
  }

  auto aggregate = [](auto getter, const std::vector<SampleMetrics>& rows, double& mean,
                      double* stddev) {
    std::vector<double> vals;
    for (const auto& r : rows) {
      auto v = getter(r);
      if (v.has_value()) vals.push_back(*v);
    }
    if (vals.empty()) {
      mean = 0.0;
      if (stddev) *stddev = 0.0;
      return;
    }
    mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
    if (stddev) {
      double acc = 0;
      for (double v : vals) acc += (v - mean) * (v - mean);
      *stddev = std::sqrt(acc / vals.size());
    }
  };
  auto psnr_of = [](const PsnrResult& p) -> std::optional<double> {
    return p.identical ? std::nullopt : std::optional<double>(p.db);
  };

  aggregate([&](const SampleMetrics& r) { return psnr_of(r.psnr); }, report.samples,
            report.psnr_mean, &report.psnr_std);
  aggregate([](const SampleMetrics& r) { return std::optional<double>(r.ssim); }, report.samples,
            report.ssim_mean, &report.ssim_std);
  aggregate([&](const SampleMetrics& r) { return psnr_of(r.low_psnr); }, report.samples,
            report.low_psnr_mean, nullptr);
  aggregate([&](const SampleMetrics& r) { return psnr_of(r.high_psnr); }, report.samples,
            report.high_psnr_mean, nullptr);
  aggregate([&](const SampleMetrics& r) { return psnr_of(r.zero_filled_psnr); }, report.samples,
            report.zero_filled_psnr_mean, nullptr);
  aggregate([](const SampleMetrics& r) { return std::optional<double>(r.zero_filled_ssim); },
            report.samples, report.zero_filled_ssim_mean, nullptr);
  for (const auto& r : report.samples)
    if (r.psnr.identical) ++report.identical_count;

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.config_echo = model_config_to_kv(model.config).serialize();
  return report;
}

std::string metrics_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "id,psnr_db,ssim,low_psnr_db,high_psnr_db,zf_psnr_db,zf_ssim\n";
  for (const auto& r : report.samples)
    out << r.id << "," << r.psnr.str() << "," << format_double(r.ssim) << "," << r.low_psnr.str()
        << "," << r.high_psnr.str() << "," << r.zero_filled_psnr.str() << ","
        << format_double(r.zero_filled_ssim) << "\n";
  return out.str();
}

std::string metrics_summary(const MetricsReport& report) {
  std::ostringstream out;
  out << "samples = " << report.samples.size() << "\n";
  out << "psnr_mean_db = " << format_double(report.psnr_mean) << "\n";
  out << "psnr_std_db = " << format_double(report.psnr_std) << "\n";
  out << "ssim_mean = " << format_double(report.ssim_mean) << "\n";
  out << "ssim_std = " << format_double(report.ssim_std) << "\n";
  out << "low_band_psnr_mean_db = " << format_double(report.low_psnr_mean) << "\n";
  out << "high_band_psnr_mean_db = " << format_double(report.high_psnr_mean) << "\n";
  out << "zero_filled_psnr_mean_db = " << format_double(report.zero_filled_psnr_mean) << "\n";
  out << "zero_filled_ssim_mean = " << format_double(report.zero_filled_ssim_mean) << "\n";
  out << "identical_samples = " << report.identical_count << "\n";
  return out.str();
}

std::vector<AblationVariant> ablation_ladder() {
  return {
      {"RU1", false, false, false, false},
      {"RU1+RU2", true, false, false, false},
      {"RU1+RU2+RU3", true, true, false, false},
      {"RU1+RU2+RU3+RM", true, true, true, false},
      {"RU1+RU2+RU3+RM+RPTL", true, true, true, true},
  };
}

AblationReport ablation_run(const TrainConfig& base, const std::vector<AblationVariant>& variants,
                            const std::vector<std::uint64_t>& seeds) {
  require(!variants.empty() && !seeds.empty(), ErrorKind::Config,
          std::string(kWhere) + "::ablation_run", "variants and seeds must be non-empty");
  AblationReport report;
  for (const auto& variant : variants) {
    AblationRow row;
    row.variant = variant;
    TrainConfig cfg = base;
    cfg.out_dir.clear();
    cfg.model.use_ru2 = variant.ru2;
    cfg.model.use_ru3 = variant.ru3;
    cfg.model.use_rm = variant.rm;
    cfg.model.use_rptl = variant.rptl;
    row.param_count = count_params(init_model<float>(cfg.model, seeds.front()));
    for (std::uint64_t seed : seeds) {
      cfg.seed = seed;
      TrainResult trained = train(cfg);
      MetricsReport metrics = evaluate(trained.model, base.dataset_dir, cfg.model.unroll);
      row.psnr_per_seed.push_back(metrics.psnr_mean);
      row.ssim_per_seed.push_back(metrics.ssim_mean);
    }
    row.psnr_median = median(row.psnr_per_seed);
    row.ssim_median = median(row.ssim_per_seed);
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string ablation_csv(const AblationReport& report) {
  std::ostringstream out;
  out << "variant,ru2,ru3,rm,rptl,params,psnr_median_db,ssim_median,psnr_per_seed,ssim_per_seed\n";
  for (const auto& r : report.rows) {
    out << r.variant.name << "," << r.variant.ru2 << "," << r.variant.ru3 << "," << r.variant.rm
        << "," << r.variant.rptl << "," << r.param_count << "," << format_double(r.psnr_median)
        << "," << format_double(r.ssim_median) << ",";
    for (std::size_t i = 0; i < r.psnr_per_seed.size(); ++i)
      out << (i ? ";" : "") << format_double(r.psnr_per_seed[i]);
    out << ",";
    for (std::size_t i = 0; i < r.ssim_per_seed.size(); ++i)
      out << (i ? ";" : "") << format_double(r.ssim_per_seed[i]);
    out << "\n";
  }
  return out.str();
}

std::vector<UnrollRow> unroll_sweep(const TrainConfig& base, const std::vector<int>& unrolls) {
  require(!unrolls.empty(), ErrorKind::Config, std::string(kWhere) + "::unroll_sweep",
          "unroll list must be non-empty");
  std::vector<UnrollRow> rows;
  for (int t : unrolls) {
    TrainConfig cfg = base;
    cfg.out_dir.clear();
    cfg.model.unroll = t;
    const auto start = std::chrono::steady_clock::now();
    TrainResult trained = train(cfg);
    UnrollRow row;
    row.unroll = t;
    row.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    MetricsReport metrics = evaluate(trained.model, base.dataset_dir, t);
    row.psnr_mean = metrics.psnr_mean;
    row.ssim_mean = metrics.ssim_mean;
    rows.push_back(row);
  }
  return rows;
}

std::string unroll_csv(const std::vector<UnrollRow>& rows) {
  std::ostringstream out;
  out << "unroll,psnr_mean_db,ssim_mean,train_seconds\n";
  for (const auto& r : rows) {
    char sec[32];
    std::snprintf(sec, sizeof(sec), "%.3f", r.train_seconds);
    out << r.unroll << "," << format_double(r.psnr_mean) << "," << format_double(r.ssim_mean)
        << "," << sec << "\n";
  }
  return out.str();
}

}  // namespace reconformer
