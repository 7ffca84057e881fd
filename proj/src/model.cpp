#include "nsfwguard/model.hpp"

#include "nsfwguard/error.hpp"
#include "nsfwguard/hash.hpp"
#include "nsfwguard/kernels.hpp"

namespace nsfwguard {
namespace {

struct Pass {
  TokenSequence tokens;
  Matrix token_in;      // E[ids] + PE
  Matrix text;          // H_t with CLS row
  Matrix patches;       // patch statistics
  Matrix patch_embed;   // patches · W_p + b_p
  Matrix image;         // H_i
  FusionTrace trace;
};

Pass run_forward(const Model& model, std::string_view prompt, const ImageTensor& image) {
  const auto& cfg = model.config();
  const auto& p = model.params();
  if (image.height() != cfg.image_size || image.width() != cfg.image_size) {
    throw ShapeError("model expects " + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.image_size) + " images, got " +
                     std::to_string(image.height()) + "x" + std::to_string(image.width()));
  }
  Pass pass;
  pass.tokens = tokenize(prompt, cfg.encoder);
  pass.token_in = encode_text(pass.tokens, p.encoder.token_embedding);
  const Matrix projected = project_embed(pass.token_in, p.encoder.text_proj_w, p.encoder.text_proj_b);
  const std::size_t d = projected.cols();
  pass.text = Matrix(projected.rows() + 1, d);
  const auto& k = kernels::active();
  const double inv_len = 1.0 / static_cast<double>(projected.rows());
  std::copy(p.encoder.cls.values().begin(), p.encoder.cls.values().end(), pass.text.row(0).begin());
  for (std::size_t r = 0; r < projected.rows(); ++r) {
    k.axpy(inv_len, projected.row(r).data(), pass.text.row(0).data(), d);
    std::copy(projected.row(r).begin(), projected.row(r).end(), pass.text.row(r + 1).begin());
  }
  pass.patches = patch_features(image, cfg.encoder.patch);
  pass.patch_embed = project_embed(pass.patches, p.encoder.patch_w, p.encoder.patch_b);
  pass.image = project_embed(pass.patch_embed, p.encoder.image_proj_w, p.encoder.image_proj_b);
  pass.trace = fusion_forward(pass.text, pass.image, p.fusion);
  return pass;
}

// Backpropagates d_text / d_image through the encoders. Returns d(patches).
Matrix encoder_backward(const Model& model, const Pass& pass, const Matrix& d_text,
                        const Matrix& d_image, EncoderParams* grads) {
  const auto& p = model.params().encoder;
  const std::size_t d = d_text.cols();
  const std::size_t len = pass.token_in.rows();
  const auto& k = kernels::active();

  Matrix d_projected(len, d);
  const double inv_len = 1.0 / static_cast<double>(len);
  for (std::size_t r = 0; r < len; ++r) {
    std::copy(d_text.row(r + 1).begin(), d_text.row(r + 1).end(), d_projected.row(r).begin());
    k.axpy(inv_len, d_text.row(0).data(), d_projected.row(r).data(), d);
  }

  const Matrix d_patch_embed = matmul_nt(d_image, p.image_proj_w);
  const Matrix d_patches = matmul_nt(d_patch_embed, p.patch_w);
  if (grads) {
    k.axpy(1.0, d_text.row(0).data(), grads->cls.row(0).data(), d);
    accumulate_tn(pass.token_in, d_projected, grads->text_proj_w);
    accumulate_col_sums(d_projected, grads->text_proj_b);
    const Matrix d_token_in = matmul_nt(d_projected, p.text_proj_w);
    for (std::size_t r = 0; r < len; ++r) {
      k.axpy(1.0, d_token_in.row(r).data(), grads->token_embedding.row(pass.tokens.ids[r]).data(), d);
    }
    accumulate_tn(pass.patch_embed, d_image, grads->image_proj_w);
    accumulate_col_sums(d_image, grads->image_proj_b);
    accumulate_tn(pass.patches, d_patch_embed, grads->patch_w);
    accumulate_col_sums(d_patch_embed, grads->patch_b);
  }
  return d_patches;
}

}  // namespace

void ModelConfig::validate() const {
  encoder.validate();
  if (heads == 0 || encoder.d % heads != 0) {
    throw ConfigError("d = " + std::to_string(encoder.d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (image_size == 0 || image_size % encoder.patch != 0) {
    throw ConfigError("patch must divide image_size");
  }
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  return ModelParams{EncoderParams::zeros(config.encoder),
                     AttentionParams::zeros(config.encoder.d, config.heads)};
}

std::vector<std::pair<std::string_view, Matrix*>> ModelParams::named_tensors() {
  return {{"text.embed", &encoder.token_embedding},
          {"text.proj_w", &encoder.text_proj_w},
          {"text.proj_b", &encoder.text_proj_b},
          {"text.cls", &encoder.cls},
          {"image.patch_w", &encoder.patch_w},
          {"image.patch_b", &encoder.patch_b},
          {"image.proj_w", &encoder.image_proj_w},
          {"image.proj_b", &encoder.image_proj_b},
          {"fusion.wq", &fusion.wq},
          {"fusion.wk", &fusion.wk},
          {"fusion.wv", &fusion.wv},
          {"fusion.gamma", &fusion.gamma},
          {"fusion.beta", &fusion.beta},
          {"head.w", &fusion.head_w},
          {"head.b", &fusion.head_b}};
}

std::vector<std::pair<std::string_view, const Matrix*>> ModelParams::named_tensors() const {
  auto named = const_cast<ModelParams*>(this)->named_tensors();
  std::vector<std::pair<std::string_view, const Matrix*>> out;
  out.reserve(named.size());
  for (auto& [name, m] : named) out.emplace_back(name, m);
  return out;
}

Model::Model(ModelConfig config, ModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  params_.fusion.validate();
}

Model Model::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  return Model(config, ModelParams{EncoderParams::initialize(config.encoder, seed),
                                   AttentionParams::initialize(config.encoder.d, config.heads,
                                                               derive_seed(seed, 0xf05e))});
}

FusionOutput Model::forward(std::string_view prompt, const ImageTensor& image) const {
  return run_forward(*this, prompt, image).trace.out;
}

double Model::prob_nsfw(std::string_view prompt, const ImageTensor& image) const {
  return forward(prompt, image).prob_nsfw;
}

double Model::loss_and_gradients(std::span<const Example> batch, ModelParams& grads) const {
  if (batch.empty()) throw EmptyBatch("loss_and_gradients needs at least one example");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& ex : batch) {
    const Pass pass = run_forward(*this, ex.prompt, ex.image);
    std::array<double, 2> d_logits{};
    total += cross_entropy(pass.trace.out.logits, ex.label, &d_logits) * inv_n;
    d_logits[0] *= inv_n;
    d_logits[1] *= inv_n;
    Matrix d_text(pass.text.rows(), pass.text.cols());
    Matrix d_image(pass.image.rows(), pass.image.cols());
    fusion_backward(pass.text, pass.image, params_.fusion, pass.trace, d_logits, grads.fusion,
                    d_text, d_image);
    encoder_backward(*this, pass, d_text, d_image, &grads.encoder);
  }
  return total;
}

double Model::loss(std::span<const Example> batch) const {
  if (batch.empty()) throw EmptyBatch("loss needs at least one example");
  double total = 0.0;
  for (const auto& ex : batch) total += cross_entropy(forward(ex.prompt, ex.image).logits, ex.label);
  return total / static_cast<double>(batch.size());
}

std::vector<double> Model::input_gradient(std::string_view prompt, const ImageTensor& image,
                                          Label label) const {
  const Pass pass = run_forward(*this, prompt, image);
  std::array<double, 2> d_logits{};
  cross_entropy(pass.trace.out.logits, label, &d_logits);
  AttentionParams scratch = AttentionParams::zeros(config_.encoder.d, config_.heads);
  Matrix d_text(pass.text.rows(), pass.text.cols());
  Matrix d_image(pass.image.rows(), pass.image.cols());
  fusion_backward(pass.text, pass.image, params_.fusion, pass.trace, d_logits, scratch, d_text,
                  d_image);
  const Matrix d_patches = encoder_backward(*this, pass, d_text, d_image, nullptr);
  return patch_features_backward(image, config_.encoder.patch, d_patches);
}

}  // namespace nsfwguard
