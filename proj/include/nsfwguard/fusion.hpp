#pragma once

// Multi-head cross-attention from text queries onto image keys/values,
// post-residual layer normalisation and a two-way linear head read from the
// fused row 0 (the CLS position).

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "nsfwguard/corpus.hpp"
#include "nsfwguard/tensor.hpp"

namespace nsfwguard {

inline constexpr double kLayerNormEpsilon = 1e-5;
inline constexpr double kDefaultThreshold = 0.5;

struct AttentionParams {
  Matrix wq;  // d × d
  Matrix wk;  // d × d
  Matrix wv;  // d × d
  std::size_t heads = 1;
  Matrix gamma;   // 1 × d
  Matrix beta;    // 1 × d
  Matrix head_w;  // d × 2, column 1 is the NSFW logit
  Matrix head_b;  // 1 × 2

  std::size_t dim() const noexcept { return wq.rows(); }
  std::size_t head_dim() const noexcept { return dim() / heads; }

  /// Throws ShapeError on inconsistent shapes or d mod heads != 0.
  void validate() const;

  static AttentionParams zeros(std::size_t d, std::size_t heads);
  static AttentionParams initialize(std::size_t d, std::size_t heads, std::uint64_t seed);

  friend bool operator==(const AttentionParams&, const AttentionParams&) = default;
};

struct FusionOutput {
  std::vector<Matrix> attention;  // per head, L_text × L_image, rows sum to 1
  Matrix attended;                // concatenated head outputs before the residual
  Matrix fused;                   // LN(H_t + attended) * gamma + beta
  std::array<double, 2> logits{};
  double prob_nsfw = 0.0;
};

/// Attention, residual and normalisation; logits are left at zero.
/// Throws ShapeError on column mismatch and NumericError on non-finite input.
FusionOutput cross_attention(const Matrix& text, const Matrix& image, const AttentionParams& params);

/// cross_attention followed by the head on fused row 0.
FusionOutput classify(const Matrix& text, const Matrix& image, const AttentionParams& params);

/// NSFW iff prob >= threshold (inclusive).
constexpr bool is_nsfw(double prob, double threshold) { return prob >= threshold; }

/// softmax(logits)[1], computed stably.
double nsfw_probability(const std::array<double, 2>& logits);

/// Binary cross-entropy of the two-way softmax against `label`, plus
/// d(loss)/d(logits).
double cross_entropy(const std::array<double, 2>& logits, Label label,
                     std::array<double, 2>* d_logits = nullptr);

/// Intermediates kept for the backward pass.
struct FusionTrace {
  Matrix q, k, v;
  Matrix normalized;            // (R - mean) / std per row
  std::vector<double> inv_std;  // per row
  FusionOutput out;
};

FusionTrace fusion_forward(const Matrix& text, const Matrix& image, const AttentionParams& params);

/// Accumulates parameter gradients into `grads` and input gradients into
/// `d_text` / `d_image` (which must be pre-sized and are added to).
void fusion_backward(const Matrix& text, const Matrix& image, const AttentionParams& params,
                     const FusionTrace& trace, const std::array<double, 2>& d_logits,
                     AttentionParams& grads, Matrix& d_text, Matrix& d_image);

struct FusionExample {
  Matrix text;   // H_t including the CLS row
  Matrix image;  // H_i
  Label label = Label::kSafe;
};

struct FusionGradients {
  double loss = 0.0;
  AttentionParams params;        // same shapes as the inputs' params
  std::vector<Matrix> d_text;    // per example
  std::vector<Matrix> d_image;   // per example
};

/// Mean cross-entropy over the batch and its gradients w.r.t. every
/// attention/head parameter and both input sequences. Throws EmptyBatch.
FusionGradients loss_and_gradients(std::span<const FusionExample> batch,
                                   const AttentionParams& params);

}  // namespace nsfwguard
