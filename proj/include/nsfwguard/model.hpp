#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nsfwguard/corpus.hpp"
#include "nsfwguard/encoders.hpp"
#include "nsfwguard/fusion.hpp"
#include "nsfwguard/image.hpp"

namespace nsfwguard {

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t heads = 4;
  std::size_t image_size = 32;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ModelParams {
  EncoderParams encoder;
  AttentionParams fusion;

  static ModelParams zeros(const ModelConfig& config);

  /// Every trainable tensor with its checkpoint name, in checkpoint order.
  std::vector<std::pair<std::string_view, Matrix*>> named_tensors();
  std::vector<std::pair<std::string_view, const Matrix*>> named_tensors() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// One (prompt, image, label) training or evaluation item held in memory.
struct Example {
  std::string id;
  std::string prompt;
  ImageTensor image;
  Label label = Label::kSafe;
};

/// Encoders + fusion block. Immutable inference is safe to share across threads.
class Model {
 public:
  Model() = default;
  Model(ModelConfig config, ModelParams params);

  static Model initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  const ModelParams& params() const noexcept { return params_; }
  ModelParams& mutable_params() noexcept { return params_; }

  FusionOutput forward(std::string_view prompt, const ImageTensor& image) const;
  double prob_nsfw(std::string_view prompt, const ImageTensor& image) const;

  /// Mean cross-entropy over the batch; gradients are added into `grads`.
  /// Throws EmptyBatch.
  double loss_and_gradients(std::span<const Example> batch, ModelParams& grads) const;
  double loss(std::span<const Example> batch) const;

  /// d(cross-entropy against `label`)/d(pixel), ImageTensor::values() layout.
  std::vector<double> input_gradient(std::string_view prompt, const ImageTensor& image,
                                     Label label) const;

  friend bool operator==(const Model&, const Model&) = default;

 private:
  ModelConfig config_;
  ModelParams params_;
};

// Checkpoint file: "NSFWGUARD-CKPT v1\n", then per tensor a "name rows cols\n"
// line followed by rows*cols little-endian float32 values (row-major). The
// "meta.config" tensor stores vocab_size, d, heads, max_len, patch, image_size.
std::string serialize_checkpoint(const Model& model);
Model parse_checkpoint(const std::string& bytes);
void write_checkpoint(const Model& model, const std::filesystem::path& path);
Model read_checkpoint(const std::filesystem::path& path);

/// "ckpt-" followed by the FNV-1a of the serialized checkpoint.
std::string model_version(const Model& model);

}  // namespace nsfwguard
