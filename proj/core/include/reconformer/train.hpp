#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reconformer/config.hpp"
#include "reconformer/dataset.hpp"
#include "reconformer/metrics.hpp"
#include "reconformer/model.hpp"

namespace reconformer {

struct TrainConfig {
  std::string dataset_dir;
  std::string out_dir;
  ModelConfig model;
  int steps = 200;  // desk-scale default
  int epochs = 0;   // > 0: shuffled sequential passes instead of sampled steps
  int batch = 4;
  double lr = 2e-4;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
};

KeyValueConfig model_config_to_kv(const ModelConfig& m);
ModelConfig model_config_from_kv(const KeyValueConfig& kv);
KeyValueConfig train_config_to_kv(const TrainConfig& t);
TrainConfig train_config_from_kv(const KeyValueConfig& kv);

struct TrainLogRow {
  int step = 0;
  float loss = 0.0f;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::string checkpoint_path;  // empty when out_dir is empty
  Model model;
};

// Minimizes the mean two-channel l1 error of the unrolled reconstruction with
// Adam (global-norm gradient clipping). Bitwise deterministic for a fixed
// (config, seed): batches are drawn from Rng(seed) — with replacement in
// steps mode, shuffled passes in epochs mode. When out_dir is set, writes
// loss_log.csv, checkpoint.rfk, model_config.txt, and effective_config.txt.
TrainResult train(const TrainConfig& cfg);

struct SampleMetrics {
  int id = 0;
  PsnrResult psnr;
  double ssim = 0.0;
  PsnrResult low_psnr, high_psnr;
  PsnrResult zero_filled_psnr;
  double zero_filled_ssim = 0.0;
};

struct MetricsReport {
  std::vector<SampleMetrics> samples;
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;
  double low_psnr_mean = 0.0, high_psnr_mean = 0.0;
  double zero_filled_psnr_mean = 0.0, zero_filled_ssim_mean = 0.0;
  int identical_count = 0;  // samples excluded from PSNR aggregates
  double wall_seconds = 0.0;
  std::string config_echo;
};

// Reconstructs every sample, scores magnitudes (data_range = per-sample
// ground-truth magnitude max) plus the low/high frequency bands, and the
// zero-filled baseline alongside.
MetricsReport evaluate(const Model& model, const std::string& dataset_dir, int unroll);

std::string metrics_csv(const MetricsReport& report);
std::string metrics_summary(const MetricsReport& report);

// Table-2-shaped ladder: RU1 only -> +RU2 -> +RU3 -> +RM -> +RPTL.
struct AblationVariant {
  std::string name;
  bool ru2 = false, ru3 = false, rm = false, rptl = false;
};
std::vector<AblationVariant> ablation_ladder();

struct AblationRow {
  AblationVariant variant;
  std::size_t param_count = 0;
  std::vector<double> psnr_per_seed, ssim_per_seed;
  double psnr_median = 0.0, ssim_median = 0.0;
};
struct AblationReport {
  std::vector<AblationRow> rows;
};

// Trains each variant from scratch with the same budget and seed list, then
// evaluates on the training set.
AblationReport ablation_run(const TrainConfig& base, const std::vector<AblationVariant>& variants,
                            const std::vector<std::uint64_t>& seeds);
std::string ablation_csv(const AblationReport& report);

struct UnrollRow {
  int unroll = 0;
  double psnr_mean = 0.0, ssim_mean = 0.0;
  double train_seconds = 0.0;
};

// Trains a fresh model per unroll length with an identical per-step budget.
std::vector<UnrollRow> unroll_sweep(const TrainConfig& base, const std::vector<int>& unrolls);
std::string unroll_csv(const std::vector<UnrollRow>& rows);

}  // namespace reconformer
