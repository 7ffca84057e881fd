#include "nsfwguard/encoders.hpp"

#include <cctype>
#include <cmath>
#include <random>

#include "nsfwguard/error.hpp"
#include "nsfwguard/hash.hpp"
#include "nsfwguard/kernels.hpp"

namespace nsfwguard {

void EncoderConfig::validate() const {
  if (vocab_size < 3) throw ConfigError("vocab_size must be at least 3");
  if (d < 2 || d % 2 != 0) throw ConfigError("model dimension d must be even and >= 2");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  if (patch == 0) throw ConfigError("patch must be positive");
}

std::vector<std::string> split_pieces(std::string_view text) {
  std::vector<std::string> pieces;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) pieces.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && std::isspace(u)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u)) {
      flush();
      pieces.emplace_back(1, ch);
    } else if (u < 0x80) {
      word += static_cast<char>(std::tolower(u));
    } else {
      word += ch;
    }
  }
  flush();
  return pieces;
}

std::uint32_t token_id(std::string_view piece, std::size_t vocab_size) {
  return static_cast<std::uint32_t>(fnv1a64(piece) % (vocab_size - 2) + 2);
}

TokenSequence tokenize(std::string_view prompt, const EncoderConfig& config) {
  TokenSequence seq;
  seq.ids.push_back(kBosId);
  for (const auto& piece : split_pieces(prompt)) {
    if (seq.ids.size() >= config.max_len - 1) break;
    seq.ids.push_back(token_id(piece, config.vocab_size));
  }
  seq.ids.push_back(kEosId);
  return seq;
}

Matrix sinusoidal_positions(std::size_t length, std::size_t d) {
  Matrix pe(length, d);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe(pos, i) = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < d) pe(pos, i + 1) = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return pe;
}

Matrix encode_text(const TokenSequence& tokens, const Matrix& embedding_table) {
  const std::size_t d = embedding_table.cols();
  Matrix out = sinusoidal_positions(tokens.ids.size(), d);
  const auto& k = kernels::active();
  for (std::size_t pos = 0; pos < tokens.ids.size(); ++pos) {
    const auto id = tokens.ids[pos];
    if (id >= embedding_table.rows()) {
      throw RangeError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(embedding_table.rows()));
    }
    k.axpy(1.0, embedding_table.row(id).data(), out.row(pos).data(), d);
  }
  return out;
}

Matrix patch_features(const ImageTensor& image, std::size_t patch) {
  if (patch == 0 || image.height() % patch != 0 || image.width() % patch != 0 ||
      image.height() == 0) {
    throw ShapeError("image " + std::to_string(image.height()) + "x" +
                     std::to_string(image.width()) + " is not divisible by patch " +
                     std::to_string(patch));
  }
  const std::size_t ph = image.height() / patch;
  const std::size_t pw = image.width() / patch;
  const double n = static_cast<double>(patch * patch);
  Matrix out(ph * pw, kPatchFeatureDim);
  for (std::size_t py = 0; py < ph; ++py) {
    for (std::size_t px = 0; px < pw; ++px) {
      const std::size_t r = py * pw + px;
      for (std::size_t c = 0; c < ImageTensor::kChannels; ++c) {
        double sum = 0.0;
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x) sum += image.at(py * patch + y, px * patch + x, c);
        const double mean = sum / n;
        double var = 0.0;
        for (std::size_t y = 0; y < patch; ++y) {
          for (std::size_t x = 0; x < patch; ++x) {
            const double dv = image.at(py * patch + y, px * patch + x, c) - mean;
            var += dv * dv;
          }
        }
        out(r, c) = mean;
        out(r, ImageTensor::kChannels + c) = std::sqrt(var / n + kStdEpsilon);
      }
    }
  }
  return out;
}

std::vector<double> patch_features_backward(const ImageTensor& image, std::size_t patch,
                                            const Matrix& d_features) {
  const Matrix feats = patch_features(image, patch);
  if (d_features.rows() != feats.rows() || d_features.cols() != feats.cols()) {
    throw ShapeError("patch feature gradient has the wrong shape");
  }
  const std::size_t pw = image.width() / patch;
  const double n = static_cast<double>(patch * patch);
  std::vector<double> grad(image.size(), 0.0);
  for (std::size_t r = 0; r < feats.rows(); ++r) {
    const std::size_t py = r / pw;
    const std::size_t px = r % pw;
    for (std::size_t c = 0; c < ImageTensor::kChannels; ++c) {
      const double mean = feats(r, c);
      const double sd = feats(r, ImageTensor::kChannels + c);
      const double g_mean = d_features(r, c) / n;
      const double g_sd = d_features(r, ImageTensor::kChannels + c) / (n * sd);
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          const std::size_t yy = py * patch + y;
          const std::size_t xx = px * patch + x;
          const double v = image.at(yy, xx, c);
          grad[(yy * image.width() + xx) * ImageTensor::kChannels + c] +=
              g_mean + g_sd * (v - mean);
        }
      }
    }
  }
  return grad;
}

Matrix encode_image(const ImageTensor& image, std::size_t patch, const Matrix& patch_w,
                    const Matrix& patch_b) {
  return project_embed(patch_features(image, patch), patch_w, patch_b);
}

Matrix project_embed(const Matrix& seq, const Matrix& w, const Matrix& b) {
  if (seq.cols() != w.rows()) {
    throw ShapeError("projection expects " + std::to_string(w.rows()) + " input columns, got " +
                     std::to_string(seq.cols()));
  }
  Matrix out = matmul(seq, w);
  add_row_bias(out, b);
  return out;
}

ProjectionGrads project_embed_backward(const Matrix& seq, const Matrix& w, const Matrix& d_out) {
  if (d_out.rows() != seq.rows() || d_out.cols() != w.cols()) {
    throw ShapeError("projection gradient has the wrong shape");
  }
  ProjectionGrads g;
  g.d_w = matmul_tn(seq, d_out);
  g.d_b = Matrix(1, w.cols());
  accumulate_col_sums(d_out, g.d_b);
  g.d_input = matmul_nt(d_out, w);
  return g;
}

EncoderParams EncoderParams::zeros(const EncoderConfig& c) {
  return EncoderParams{Matrix(c.vocab_size, c.d), Matrix(c.d, c.d), Matrix(1, c.d),
                       Matrix(1, c.d),           Matrix(kPatchFeatureDim, c.d),
                       Matrix(1, c.d),           Matrix(c.d, c.d), Matrix(1, c.d)};
}

EncoderParams EncoderParams::initialize(const EncoderConfig& c, std::uint64_t seed) {
  c.validate();
  EncoderParams p = zeros(c);
  std::mt19937_64 rng(derive_seed(seed, 0xe4c0de));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Matrix& m, double scale) {
    for (double& v : m.values()) v = normal(rng) * scale;
  };
  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(c.d));
  fill(p.token_embedding, 0.5);
  fill(p.text_proj_w, proj_scale);
  fill(p.cls, 0.1);
  fill(p.patch_w, 1.0);
  fill(p.image_proj_w, proj_scale);
  return p;
}

Matrix text_states(const TokenSequence& tokens, const EncoderParams& params) {
  const Matrix projected =
      project_embed(encode_text(tokens, params.token_embedding), params.text_proj_w,
                    params.text_proj_b);
  const std::size_t d = projected.cols();
  Matrix out(projected.rows() + 1, d);
  const auto& k = kernels::active();
  const double inv_len = 1.0 / static_cast<double>(projected.rows());
  std::copy(params.cls.values().begin(), params.cls.values().end(), out.row(0).begin());
  for (std::size_t r = 0; r < projected.rows(); ++r) {
    k.axpy(inv_len, projected.row(r).data(), out.row(0).data(), d);
    std::copy(projected.row(r).begin(), projected.row(r).end(), out.row(r + 1).begin());
  }
  return out;
}

Matrix image_states(const ImageTensor& image, std::size_t patch, const EncoderParams& params) {
  return project_embed(encode_image(image, patch, params.patch_w, params.patch_b),
                       params.image_proj_w, params.image_proj_b);
}

}  // namespace nsfwguard
