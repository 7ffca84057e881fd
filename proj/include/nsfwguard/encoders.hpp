#pragma once

// Toy stand-ins for the CLIP text and vision towers: a hashed tokenizer with a
// trainable embedding table plus sinusoidal positions on the text side, and
// per-patch colour statistics mapped to d on the image side. Both sides then
// go through their own affine projection (project_embed). Real encoders can be
// swapped in by producing the same L×d matrices.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nsfwguard/image.hpp"
#include "nsfwguard/tensor.hpp"

namespace nsfwguard {

inline constexpr std::uint32_t kBosId = 0;
inline constexpr std::uint32_t kEosId = 1;

struct EncoderConfig {
  std::size_t vocab_size = 4096;
  std::size_t d = 32;
  std::size_t max_len = 64;
  std::size_t patch = 8;
  std::uint64_t seed = 0;

  /// Throws ConfigError on vocab_size < 3, odd or < 2 d, max_len < 2, patch == 0.
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct TokenSequence {
  std::vector<std::uint32_t> ids;  // BOS ... EOS
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Lowercased word pieces: whitespace separates, every ASCII punctuation
/// character is a piece of its own, bytes >= 0x80 count as word characters.
std::vector<std::string> split_pieces(std::string_view text);

std::uint32_t token_id(std::string_view piece, std::size_t vocab_size);

TokenSequence tokenize(std::string_view prompt, const EncoderConfig& config);

/// pe(pos, 2i) = sin(pos / 10000^(2i/d)), pe(pos, 2i+1) = cos(pos / 10000^(2i/d)).
Matrix sinusoidal_positions(std::size_t length, std::size_t d);

/// embedding_table[id] + sinusoidal_position(pos), one row per token.
Matrix encode_text(const TokenSequence& tokens, const Matrix& embedding_table);

inline constexpr std::size_t kPatchFeatureDim = 2 * ImageTensor::kChannels;
inline constexpr double kStdEpsilon = 1e-10;

/// One row per patch (raster order): channel means then channel standard
/// deviations. Throws ShapeError when the image is not divisible by `patch`.
Matrix patch_features(const ImageTensor& image, std::size_t patch);

/// patch_features(image) · patch_w + patch_b; (h/patch · w/patch) × d.
Matrix encode_image(const ImageTensor& image, std::size_t patch, const Matrix& patch_w,
                    const Matrix& patch_b);

/// Row-wise affine map seq · w + b. Throws ShapeError on mismatch.
Matrix project_embed(const Matrix& seq, const Matrix& w, const Matrix& b);

struct ProjectionGrads {
  Matrix d_w;
  Matrix d_b;
  Matrix d_input;
};

/// Gradients of project_embed given the upstream gradient `d_out`.
ProjectionGrads project_embed_backward(const Matrix& seq, const Matrix& w, const Matrix& d_out);

/// Pixel gradient of patch_features given d(loss)/d(features); same layout as
/// ImageTensor::values().
std::vector<double> patch_features_backward(const ImageTensor& image, std::size_t patch,
                                            const Matrix& d_features);

/// Trainable encoder state. The learnable CLS row is added to the mean of the
/// projected text rows and prepended at position 0.
struct EncoderParams {
  Matrix token_embedding;  // vocab_size × d
  Matrix text_proj_w;      // d × d
  Matrix text_proj_b;      // 1 × d
  Matrix cls;              // 1 × d
  Matrix patch_w;          // 6 × d
  Matrix patch_b;          // 1 × d
  Matrix image_proj_w;     // d × d
  Matrix image_proj_b;     // 1 × d

  static EncoderParams zeros(const EncoderConfig& config);
  static EncoderParams initialize(const EncoderConfig& config, std::uint64_t seed);

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

/// H_t with the CLS row: (L + 1) × d.
Matrix text_states(const TokenSequence& tokens, const EncoderParams& params);
/// H_i: patches × d.
Matrix image_states(const ImageTensor& image, std::size_t patch, const EncoderParams& params);

}  // namespace nsfwguard
