#include "nsfwguard/defense.hpp"

#include <algorithm>
#include <cmath>

#include "nsfwguard/encoders.hpp"
#include "nsfwguard/error.hpp"
#include "nsfwguard/model.hpp"

namespace nsfwguard {
namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

std::vector<double> Defense::nsfw_loss_gradient(std::string_view, const ImageTensor&) const {
  throw PreconditionError("defense '" + name() + "' does not expose gradients");
}

ModelDefense::ModelDefense(std::shared_ptr<const Model> model, std::string name, double threshold)
    : model_(std::move(model)), name_(std::move(name)), threshold_(threshold) {
  if (!model_) throw PreconditionError("ModelDefense needs a model");
}

double ModelDefense::prob_nsfw(std::string_view prompt, const ImageTensor& image) const {
  return model_->prob_nsfw(prompt, image);
}

std::vector<double> ModelDefense::nsfw_loss_gradient(std::string_view prompt,
                                                     const ImageTensor& image) const {
  return model_->input_gradient(prompt, image, Label::kNsfw);
}

KeywordDefense::KeywordDefense(std::set<std::string> keywords, std::string name)
    : keywords_(std::move(keywords)), name_(std::move(name)) {}

std::size_t KeywordDefense::count_hits(std::string_view prompt) const {
  std::size_t hits = 0;
  for (const auto& piece : split_pieces(prompt)) hits += keywords_.contains(piece) ? 1 : 0;
  return hits;
}

double KeywordDefense::prob_nsfw(std::string_view prompt, const ImageTensor&) const {
  return 1.0 - std::ldexp(1.0, -static_cast<int>(std::min<std::size_t>(count_hits(prompt), 1000)));
}

ConstantDefense::ConstantDefense(double prob, std::string name)
    : prob_(prob), name_(std::move(name)) {}

std::vector<double> ConstantDefense::nsfw_loss_gradient(std::string_view,
                                                        const ImageTensor& image) const {
  return std::vector<double>(image.size(), 0.0);
}

ChannelMeanDefense::ChannelMeanDefense(std::array<double, 3> weights, double gain, double bias,
                                       std::string name, bool expose_gradient)
    : weights_(weights), gain_(gain), bias_(bias), name_(std::move(name)),
      expose_gradient_(expose_gradient) {}

double ChannelMeanDefense::score(const ImageTensor& image) const {
  std::array<double, 3> sums{};
  const auto& v = image.values();
  for (std::size_t i = 0; i < v.size(); ++i) sums[i % 3] += v[i];
  const double pixels = static_cast<double>(image.height() * image.width());
  double s = 0.0;
  for (int c = 0; c < 3; ++c) s += weights_[c] * sums[c] / pixels;
  return gain_ * (s - bias_);
}

double ChannelMeanDefense::prob_nsfw(std::string_view, const ImageTensor& image) const {
  return sigmoid(score(image));
}

std::vector<double> ChannelMeanDefense::nsfw_loss_gradient(std::string_view,
                                                           const ImageTensor& image) const {
  if (!expose_gradient_) return Defense::nsfw_loss_gradient({}, image);
  // -log sigmoid(s) has derivative -(1 - sigmoid(s)) in s.
  const double p = sigmoid(score(image));
  const double pixels = static_cast<double>(image.height() * image.width());
  std::vector<double> g(image.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = -(1.0 - p) * gain_ * weights_[i % 3] / pixels;
  return g;
}

EitherDefense::EitherDefense(std::shared_ptr<const Defense> first,
                             std::shared_ptr<const Defense> second, std::string name)
    : first_(std::move(first)), second_(std::move(second)), name_(std::move(name)) {}

double EitherDefense::prob_nsfw(std::string_view prompt, const ImageTensor& image) const {
  return std::max(first_->prob_nsfw(prompt, image), second_->prob_nsfw(prompt, image));
}

bool EitherDefense::has_gradient() const {
  return first_->has_gradient() || second_->has_gradient();
}

std::vector<double> EitherDefense::nsfw_loss_gradient(std::string_view prompt,
                                                      const ImageTensor& image) const {
  const bool first_wins = first_->prob_nsfw(prompt, image) >= second_->prob_nsfw(prompt, image);
  const Defense& winner = first_wins ? *first_ : *second_;
  if (!winner.has_gradient()) return std::vector<double>(image.size(), 0.0);
  return winner.nsfw_loss_gradient(prompt, image);
}

}  // namespace nsfwguard
