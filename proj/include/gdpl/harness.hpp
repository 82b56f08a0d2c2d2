#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gdpl/dataset.hpp"
#include "gdpl/encoders.hpp"
#include "gdpl/gdpl.hpp"
#include "gdpl/optim.hpp"

namespace gdpl {

// ----------------------------------------------------------------- backbone

struct PretrainConfig {
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  ClipConfig clip;
  MaeConfig mae;
  DomainProvenance provenance = DomainProvenance::MaeLite;
  std::size_t clip_per_class = 20;  // natural-style images per catalogue class
  std::size_t mae_per_class = 8;    // unlabeled shifted-domain images per class
  std::size_t domain_id = 1;
};

/// CLIP-lite on natural-style images of every catalogue class, then a domain
/// encoder (MAE-lite on shifted-domain images, or seeded random). Everything
/// returned is frozen.
Backbone pretrain_backbone(const PretrainConfig& config);

/// Stores vision, text and domain weights as checkpoint groups in `dir`.
void save_backbone(const std::filesystem::path& dir, const Backbone& backbone);
/// Rebuilds a backbone of the given shape and fills it from `dir`. Throws
/// CheckpointIoError when the checkpoints are missing.
Backbone load_backbone(const std::filesystem::path& dir, const EncoderConfig& config);

// ------------------------------------------------------------------ episode

struct EpisodeConfig {
  std::uint64_t seed = 0;
  std::size_t n_base = 8;
  std::size_t n_novel = 4;
  std::size_t shots = 16;
  std::size_t test_per_class = 40;
  std::size_t epochs = 10;
  std::size_t batch_train = 4;
  std::size_t batch_eval = 24;
  std::size_t domain_id = 1;
  std::size_t first_class = 0;
  GdplConfig gdpl;
  SgdConfig sgd;
};

/// Throws std::invalid_argument on an unusable configuration.
void validate(const EpisodeConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean training loss; epoch 0 is the loss at initialization
  double acc_base = 0.0;
  double acc_novel = 0.0;
  double hm = 0.0;
  double mean_cos = 0.0;
  std::vector<double> layer_cos;  // Q_t, Q_v^1..Q_v^k
};

struct EpisodeReport {
  EpisodeConfig config;
  std::vector<EpochRecord> epochs;
  double acc_base = 0.0;
  double acc_novel = 0.0;
  double hm = 0.0;
  double zero_shot_base = 0.0;
  double zero_shot_novel = 0.0;
  double zero_shot_hm = 0.0;
  std::uint64_t data_seed = 0;
  std::uint64_t init_seed = 0;
  std::uint64_t noise_seed = 0;
  double seconds = 0.0;
};

struct EpisodeData {
  SyntheticDataset dataset;
  BaseNovelSplit split;
  ImageBatch images;  // every dataset image, prepared once
};

/// Benchmark domain for an episode; depends only on the seed and class layout.
EpisodeData make_episode_data(const Backbone& backbone, const EpisodeConfig& config);

struct EpisodeResult {
  GdplModel model;
  EpisodeReport report;
};

/// SGD over prompt-side parameters only, with an evaluation before training
/// and after every epoch.
EpisodeResult train_episode(const Backbone& backbone, const EpisodeConfig& config);
EpisodeResult train_episode(const Backbone& backbone, const EpisodeConfig& config, const EpisodeData& data);

// --------------------------------------------------------------- evaluation

/// Top-1 accuracy in percent over `indices`, candidates `classes`. Throws
/// std::invalid_argument on an empty split.
double evaluate(const GdplModel& model, const ImageBatch& images, const std::vector<std::size_t>& labels,
                const std::vector<std::size_t>& indices, const std::vector<std::size_t>& classes,
                std::size_t batch_size);

/// Same protocol for the unprompted frozen dual encoder.
double evaluate_zero_shot(const Backbone& backbone, const SyntheticDataset& data,
                          const std::vector<std::size_t>& indices, const std::vector<std::size_t>& classes,
                          std::size_t batch_size, double temperature = 0.07);

/// 2ab / (a + b). Throws std::invalid_argument when a + b == 0 or either lies
/// outside [0, 100].
double harmonic_mean(double acc_base, double acc_novel);

/// Mean |cos| per quaternion layer between its two nonzero slot inputs on a
/// probe batch (inference mode).
std::vector<double> track_orthogonality(const GdplModel& model, const ImageBatch& probe);

struct CrossDatasetResult {
  std::vector<double> gdpl;        // per target, accuracy on its base split
  std::vector<double> zero_shot;   // frozen dual encoder on the same split
};

/// Applies evaluate() unchanged to the base split of each target domain.
/// Throws std::invalid_argument when a target uses classes outside the
/// shared vocabulary.
CrossDatasetResult cross_dataset_eval(const GdplModel& model, const std::vector<SyntheticDataset>& targets,
                                      const EpisodeConfig& config);

struct SeedSummary {
  double mean_acc_base = 0.0;
  double mean_acc_novel = 0.0;
  double mean_of_hm = 0.0;      // average of per-run HM
  double hm_of_means = 0.0;     // HM of the averaged accuracies
};

SeedSummary summarize(const std::vector<EpisodeReport>& reports);

// -------------------------------------------------------------- persistence

std::string metrics_csv(const EpisodeReport& report);
std::string report_json(const EpisodeReport& report);
std::string config_snapshot(const EpisodeConfig& config);
/// Single-series line chart.
std::string svg_curve(const std::string& title, const std::vector<double>& values);

/// Writes config.snapshot, metrics.csv, report.json, curves/*.svg and the
/// prompt-side checkpoints into `dir`.
void write_run(const std::filesystem::path& dir, const EpisodeResult& result);

/// Reads report.json back (fields used by the CLI report command).
EpisodeReport read_report(const std::filesystem::path& path);

/// Saves and restores the prompt state and LoRA adapter.
void save_prompts(const std::filesystem::path& dir, const GdplModel& model);
void load_prompts(const std::filesystem::path& dir, GdplModel& model);

}  // namespace gdpl
