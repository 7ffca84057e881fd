#include "nsfwguard/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "binary_io.hpp"
#include "nsfwguard/error.hpp"
#include "nsfwguard/hash.hpp"
#include "nsfwguard/kernels.hpp"
#include "parallel.hpp"

namespace nsfwguard {
namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void sgd_step(ModelParams& params, const ModelParams& grads, double lr) {
  auto dst = params.named_tensors();
  auto src = grads.named_tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    kernels::axpy(-lr, src[i].second->values(), dst[i].second->values());
  }
}

std::vector<double> probabilities(const Model& model, std::span<const Example> examples) {
  std::vector<double> out(examples.size());
  detail::parallel_for(examples.size(), [&](std::size_t i) {
    out[i] = model.prob_nsfw(examples[i].prompt, examples[i].image);
  });
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
}

MetricReport metrics_from_predictions(std::span<const Label> predicted,
                                      std::span<const Label> actual) {
  if (predicted.size() != actual.size()) {
    throw ShapeError("prediction and label counts differ");
  }
  if (predicted.empty()) throw EmptyDataset("no samples to evaluate");
  MetricReport r;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == Label::kNsfw;
    const bool a = actual[i] == Label::kNsfw;
    if (p && a) ++r.tp;
    else if (p) ++r.fp;
    else if (a) ++r.fn;
    else ++r.tn;
  }
  r.accuracy = ratio(r.tp + r.tn, r.total());
  r.precision = ratio(r.tp, r.tp + r.fp);
  r.recall = ratio(r.tp, r.tp + r.fn);
  if (r.precision + r.recall > 0.0) {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  }
  return r;
}

std::vector<Example> load_examples(const Manifest& manifest, std::span<const std::string> ids,
                                   const std::filesystem::path& root) {
  std::vector<Example> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const LabeledSample* s = manifest.find(id);
    if (!s) throw ValidationError(id, "id not present in manifest");
    out.push_back({s->id, s->prompt, read_image(root / s->image_ref), s->label});
  }
  return out;
}

TrainResult train_examples(std::span<const Example> train_set, std::span<const Example> val_set,
                           const TrainConfig& config, const ModelConfig& model_config,
                           const Model* init) {
  config.validate();
  model_config.validate();
  if (train_set.empty()) throw EmptyDataset("training set is empty");
  if (val_set.empty()) throw EmptyDataset("validation set is empty");

  Model model = init ? *init : Model::initialize(model_config, derive_seed(config.seed, 0x1417));
  if (model.config() != model_config) throw ConfigError("initial model has a different config");

  TrainResult result;
  result.model = model;
  double best = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_set.size());
  std::vector<Example> batch;
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(config.seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
      ModelParams grads = ModelParams::zeros(model_config);
      const double loss = model.loss_and_gradients(batch, grads);
      epoch_loss += loss * static_cast<double>(end - start);
      sgd_step(model.mutable_params(), grads, config.learning_rate);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(train_set.size());
    rec.val_loss = model.loss(val_set);
    rec.val_accuracy = evaluate_metrics(model, val_set, config.threshold).accuracy;
    if (rec.val_loss < best) {
      best = rec.val_loss;
      result.model = model;
      result.best_epoch = epoch;
    }
    rec.best_val_loss = best;
    result.curve.push_back(rec);
  }
  return result;
}

TrainResult train(const Manifest& manifest, const Split& split, const TrainConfig& config,
                  const ModelConfig& model_config, const std::filesystem::path& root,
                  const Model* init) {
  check_split(manifest, split);
  const auto train_set = load_examples(manifest, split.train_ids, root);
  const auto val_set = load_examples(manifest, split.val_ids, root);
  return train_examples(train_set, val_set, config, model_config, init);
}

MetricReport evaluate_metrics(const Model& model, std::span<const Example> examples,
                              double threshold) {
  if (examples.empty()) throw EmptyDataset("no samples to evaluate");
  const auto probs = probabilities(model, examples);
  std::vector<Label> predicted, actual;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    predicted.push_back(is_nsfw(probs[i], threshold) ? Label::kNsfw : Label::kSafe);
    actual.push_back(examples[i].label);
  }
  return metrics_from_predictions(predicted, actual);
}

MetricReport evaluate_metrics(const Defense& defense, std::span<const Example> examples) {
  if (examples.empty()) throw EmptyDataset("no samples to evaluate");
  std::vector<Label> predicted(examples.size()), actual;
  detail::parallel_for(examples.size(), [&](std::size_t i) {
    predicted[i] = defense.flags(examples[i].prompt, examples[i].image) ? Label::kNsfw : Label::kSafe;
  });
  for (const auto& ex : examples) actual.push_back(ex.label);
  return metrics_from_predictions(predicted, actual);
}

std::string format_loss_curve(const std::vector<EpochRecord>& curve) {
  std::string out = "epoch,train_loss,val_loss,val_accuracy\n";
  for (const auto& r : curve) {
    out += std::to_string(r.epoch) + "," + fixed(r.train_loss, 6) + "," + fixed(r.val_loss, 6) +
           "," + fixed(r.val_accuracy, 4) + "\n";
  }
  return out;
}

void write_loss_curve(const std::vector<EpochRecord>& curve, const std::filesystem::path& path) {
  detail::write_file(path, format_loss_curve(curve));
}

std::string format_metrics(const MetricReport& r) {
  return "accuracy " + fixed(100.0 * r.accuracy, 2) + "%  precision " +
         fixed(100.0 * r.precision, 2) + "%  recall " + fixed(100.0 * r.recall, 2) + "%  f1 " +
         fixed(100.0 * r.f1, 2) + "%  (TP " + std::to_string(r.tp) + ", FP " +
         std::to_string(r.fp) + ", FN " + std::to_string(r.fn) + ", TN " + std::to_string(r.tn) +
         ")";
}

}  // namespace nsfwguard
