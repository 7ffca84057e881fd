#pragma once

// The classifier surface attacks and benchmarks talk to. Any detector that can
// score a (prompt, image) pair is a Defense; gradient access is optional.

#include <array>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "nsfwguard/fusion.hpp"
#include "nsfwguard/image.hpp"

namespace nsfwguard {

class Model;

class Defense {
 public:
  virtual ~Defense() = default;

  virtual std::string name() const = 0;
  virtual double prob_nsfw(std::string_view prompt, const ImageTensor& image) const = 0;
  virtual double threshold() const { return kDefaultThreshold; }

  bool flags(std::string_view prompt, const ImageTensor& image) const {
    return is_nsfw(prob_nsfw(prompt, image), threshold());
  }

  virtual bool has_gradient() const { return false; }
  /// d(-log prob_nsfw)/d(pixel). Throws PreconditionError without gradient access.
  virtual std::vector<double> nsfw_loss_gradient(std::string_view prompt,
                                                 const ImageTensor& image) const;
};

/// The trained multimodal classifier.
class ModelDefense final : public Defense {
 public:
  ModelDefense(std::shared_ptr<const Model> model, std::string name,
               double threshold = kDefaultThreshold);

  std::string name() const override { return name_; }
  double prob_nsfw(std::string_view prompt, const ImageTensor& image) const override;
  double threshold() const override { return threshold_; }
  bool has_gradient() const override { return true; }
  std::vector<double> nsfw_loss_gradient(std::string_view prompt,
                                         const ImageTensor& image) const override;

  const Model& model() const noexcept { return *model_; }

 private:
  std::shared_ptr<const Model> model_;
  std::string name_;
  double threshold_;
};

/// Prompt-only keyword filter: prob = 1 - 2^-(number of flagged tokens), so a
/// single keyword already reaches the 0.5 threshold.
class KeywordDefense final : public Defense {
 public:
  explicit KeywordDefense(std::set<std::string> keywords, std::string name = "keyword");

  std::string name() const override { return name_; }
  double prob_nsfw(std::string_view prompt, const ImageTensor& image) const override;
  std::size_t count_hits(std::string_view prompt) const;

 private:
  std::set<std::string> keywords_;
  std::string name_;
};

class ConstantDefense final : public Defense {
 public:
  explicit ConstantDefense(double prob, std::string name = "constant");
  std::string name() const override { return name_; }
  double prob_nsfw(std::string_view, const ImageTensor&) const override { return prob_; }
  bool has_gradient() const override { return true; }
  std::vector<double> nsfw_loss_gradient(std::string_view, const ImageTensor& image) const override;

 private:
  double prob_;
  std::string name_;
};

/// Image-only detector: prob = sigmoid(gain * (Σ_c weight_c · mean_c − bias)),
/// where mean_c is the image-wide mean of channel c.
class ChannelMeanDefense final : public Defense {
 public:
  ChannelMeanDefense(std::array<double, 3> weights, double gain, double bias,
                     std::string name = "channel-mean", bool expose_gradient = true);

  std::string name() const override { return name_; }
  double prob_nsfw(std::string_view prompt, const ImageTensor& image) const override;
  bool has_gradient() const override { return expose_gradient_; }
  std::vector<double> nsfw_loss_gradient(std::string_view prompt,
                                         const ImageTensor& image) const override;

 private:
  double score(const ImageTensor& image) const;

  std::array<double, 3> weights_;
  double gain_;
  double bias_;
  std::string name_;
  bool expose_gradient_;
};

/// Flags when either member flags: prob = max of the two. Gradients come from
/// whichever member attains the max.
class EitherDefense final : public Defense {
 public:
  EitherDefense(std::shared_ptr<const Defense> first, std::shared_ptr<const Defense> second,
                std::string name = "either");

  std::string name() const override { return name_; }
  double prob_nsfw(std::string_view prompt, const ImageTensor& image) const override;
  bool has_gradient() const override;
  std::vector<double> nsfw_loss_gradient(std::string_view prompt,
                                         const ImageTensor& image) const override;

 private:
  std::shared_ptr<const Defense> first_;
  std::shared_ptr<const Defense> second_;
  std::string name_;
};

}  // namespace nsfwguard
