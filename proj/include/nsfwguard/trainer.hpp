#pragma once

// Seeded mini-batch SGD over a manifest split, best-validation checkpoint
// retention, and the accuracy/precision/recall/F1 suite with NSFW as the
// positive class.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nsfwguard/corpus.hpp"
#include "nsfwguard/defense.hpp"
#include "nsfwguard/model.hpp"

namespace nsfwguard {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  double threshold = kDefaultThreshold;

  /// Throws ConfigError.
  void validate() const;
};

struct MetricReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

/// Confusion counts and derived metrics; undefined ratios are reported as 0.
/// Throws ShapeError on a length mismatch and EmptyDataset on empty input.
MetricReport metrics_from_predictions(std::span<const Label> predicted,
                                      std::span<const Label> actual);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double best_val_loss = 0.0;  // running minimum of val_loss
};

struct TrainResult {
  Model model;  // parameters from the epoch with the lowest validation loss
  std::vector<EpochRecord> curve;
  int best_epoch = 0;
};

/// Loads prompt and image for each id; image_ref is resolved against `root`.
std::vector<Example> load_examples(const Manifest& manifest, std::span<const std::string> ids,
                                   const std::filesystem::path& root);

/// Training on in-memory examples. `init` seeds the parameters for fine-tuning;
/// otherwise they are drawn from config.seed. Throws EmptyDataset.
TrainResult train_examples(std::span<const Example> train_set, std::span<const Example> val_set,
                           const TrainConfig& config, const ModelConfig& model_config,
                           const Model* init = nullptr);

/// Throws ValidationError when `split` does not partition the manifest.
TrainResult train(const Manifest& manifest, const Split& split, const TrainConfig& config,
                  const ModelConfig& model_config, const std::filesystem::path& root,
                  const Model* init = nullptr);

MetricReport evaluate_metrics(const Model& model, std::span<const Example> examples,
                              double threshold = kDefaultThreshold);
MetricReport evaluate_metrics(const Defense& defense, std::span<const Example> examples);

/// CSV with header `epoch,train_loss,val_loss,val_accuracy`.
std::string format_loss_curve(const std::vector<EpochRecord>& curve);
void write_loss_curve(const std::vector<EpochRecord>& curve, const std::filesystem::path& path);

std::string format_metrics(const MetricReport& report);

}  // namespace nsfwguard
