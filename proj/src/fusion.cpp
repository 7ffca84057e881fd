#include "nsfwguard/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "nsfwguard/error.hpp"
#include "nsfwguard/hash.hpp"
#include "nsfwguard/kernels.hpp"

namespace nsfwguard {
namespace {

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(name) + " must be " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
}

void check_inputs(const Matrix& text, const Matrix& image, const AttentionParams& params) {
  params.validate();
  const std::size_t d = params.dim();
  if (text.cols() != d || image.cols() != d) {
    throw ShapeError("cross-attention inputs must have " + std::to_string(d) + " columns");
  }
  if (text.rows() == 0 || image.rows() == 0) throw ShapeError("cross-attention inputs are empty");
  if (!text.all_finite() || !image.all_finite()) {
    throw NumericError("non-finite value in cross-attention input");
  }
}

}  // namespace

void AttentionParams::validate() const {
  const std::size_t d = dim();
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw ShapeError("model dimension " + std::to_string(d) + " is not divisible by " +
                     std::to_string(heads) + " heads");
  }
  require_shape(wq, d, d, "W_Q");
  require_shape(wk, d, d, "W_K");
  require_shape(wv, d, d, "W_V");
  require_shape(gamma, 1, d, "gamma");
  require_shape(beta, 1, d, "beta");
  require_shape(head_w, d, 2, "head weight");
  require_shape(head_b, 1, 2, "head bias");
}

AttentionParams AttentionParams::zeros(std::size_t d, std::size_t heads) {
  return AttentionParams{Matrix(d, d), Matrix(d, d), Matrix(d, d), heads,
                         Matrix(1, d), Matrix(1, d), Matrix(d, 2), Matrix(1, 2)};
}

AttentionParams AttentionParams::initialize(std::size_t d, std::size_t heads, std::uint64_t seed) {
  AttentionParams p = zeros(d, heads);
  p.validate();
  std::mt19937_64 rng(derive_seed(seed, 0xa77e));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (Matrix* m : {&p.wq, &p.wk, &p.wv}) {
    for (double& v : m->values()) v = normal(rng) * scale;
  }
  for (double& v : p.head_w.values()) v = normal(rng) * scale;
  p.gamma.fill(1.0);
  return p;
}

double nsfw_probability(const std::array<double, 2>& logits) {
  // softmax(z)[1] = 1 / (1 + exp(z0 - z1))
  const double diff = logits[0] - logits[1];
  if (diff >= 0) {
    const double e = std::exp(-diff);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(diff));
}

double cross_entropy(const std::array<double, 2>& logits, Label label,
                     std::array<double, 2>* d_logits) {
  const double m = std::max(logits[0], logits[1]);
  const double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
  const std::size_t y = label == Label::kNsfw ? 1 : 0;
  if (d_logits) {
    const double p1 = nsfw_probability(logits);
    (*d_logits)[0] = (1.0 - p1) - (y == 0 ? 1.0 : 0.0);
    (*d_logits)[1] = p1 - (y == 1 ? 1.0 : 0.0);
  }
  return lse - logits[y];
}

FusionTrace fusion_forward(const Matrix& text, const Matrix& image, const AttentionParams& params) {
  check_inputs(text, image, params);
  const std::size_t d = params.dim();
  const std::size_t heads = params.heads;
  const std::size_t dh = params.head_dim();
  const std::size_t lt = text.rows();
  const std::size_t li = image.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& k = kernels::active();

  FusionTrace tr;
  tr.q = matmul(text, params.wq);
  tr.k = matmul(image, params.wk);
  tr.v = matmul(image, params.wv);

  FusionOutput& out = tr.out;
  out.attended = Matrix(lt, d);
  out.attention.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    Matrix a(lt, li);
    for (std::size_t i = 0; i < lt; ++i) {
      double row_max = -INFINITY;
      for (std::size_t j = 0; j < li; ++j) {
        a(i, j) = k.dot(tr.q.row(i).data() + off, tr.k.row(j).data() + off, dh) * scale;
        row_max = std::max(row_max, a(i, j));
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < li; ++j) {
        a(i, j) = std::exp(a(i, j) - row_max);
        sum += a(i, j);
      }
      for (std::size_t j = 0; j < li; ++j) {
        a(i, j) /= sum;
        k.axpy(a(i, j), tr.v.row(j).data() + off, out.attended.row(i).data() + off, dh);
      }
    }
    out.attention.push_back(std::move(a));
  }

  // Residual onto H_t, then one layer normalisation with gamma/beta.
  out.fused = Matrix(lt, d);
  tr.normalized = Matrix(lt, d);
  tr.inv_std.assign(lt, 0.0);
  for (std::size_t i = 0; i < lt; ++i) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += text(i, c) + out.attended(i, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double r = text(i, c) + out.attended(i, c) - mean;
      var += r * r;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    tr.inv_std[i] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double xhat = (text(i, c) + out.attended(i, c) - mean) * inv;
      tr.normalized(i, c) = xhat;
      out.fused(i, c) = xhat * params.gamma(0, c) + params.beta(0, c);
    }
  }

  for (std::size_t o = 0; o < 2; ++o) {
    double z = params.head_b(0, o);
    for (std::size_t c = 0; c < d; ++c) z += out.fused(0, c) * params.head_w(c, o);
    out.logits[o] = z;
  }
  out.prob_nsfw = nsfw_probability(out.logits);
  return tr;
}

FusionOutput cross_attention(const Matrix& text, const Matrix& image,
                             const AttentionParams& params) {
  FusionOutput out = fusion_forward(text, image, params).out;
  out.logits = {0.0, 0.0};
  out.prob_nsfw = 0.5;
  return out;
}

FusionOutput classify(const Matrix& text, const Matrix& image, const AttentionParams& params) {
  return fusion_forward(text, image, params).out;
}

void fusion_backward(const Matrix& text, const Matrix& image, const AttentionParams& params,
                     const FusionTrace& tr, const std::array<double, 2>& d_logits,
                     AttentionParams& grads, Matrix& d_text, Matrix& d_image) {
  const std::size_t d = params.dim();
  const std::size_t dh = params.head_dim();
  const std::size_t lt = text.rows();
  const std::size_t li = image.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& out = tr.out;

  // Head: only fused row 0 feeds the logits.
  Matrix d_fused(lt, d);
  for (std::size_t o = 0; o < 2; ++o) {
    grads.head_b(0, o) += d_logits[o];
    for (std::size_t c = 0; c < d; ++c) {
      grads.head_w(c, o) += out.fused(0, c) * d_logits[o];
      d_fused(0, c) += params.head_w(c, o) * d_logits[o];
    }
  }

  // Layer norm.
  Matrix d_resid(lt, d);
  for (std::size_t i = 0; i < lt; ++i) {
    double mean_g = 0.0;
    double mean_gx = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double dy = d_fused(i, c);
      grads.gamma(0, c) += dy * tr.normalized(i, c);
      grads.beta(0, c) += dy;
      const double g = dy * params.gamma(0, c);
      mean_g += g;
      mean_gx += g * tr.normalized(i, c);
    }
    mean_g /= static_cast<double>(d);
    mean_gx /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) {
      const double g = d_fused(i, c) * params.gamma(0, c);
      d_resid(i, c) = tr.inv_std[i] * (g - mean_g - tr.normalized(i, c) * mean_gx);
    }
  }

  // Residual: d_text gets d_resid directly; d_resid is also dO.
  Matrix dq(lt, d), dk(li, d), dv(li, d);
  std::vector<double> d_att(li);
  for (std::size_t h = 0; h < params.heads; ++h) {
    const std::size_t off = h * dh;
    const Matrix& a = out.attention[h];
    for (std::size_t i = 0; i < lt; ++i) {
      double dot_ad = 0.0;
      for (std::size_t j = 0; j < li; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) {
          s += d_resid(i, off + c) * tr.v(j, off + c);
          dv(j, off + c) += a(i, j) * d_resid(i, off + c);
        }
        d_att[j] = s;
        dot_ad += a(i, j) * s;
      }
      for (std::size_t j = 0; j < li; ++j) {
        const double ds = a(i, j) * (d_att[j] - dot_ad) * scale;
        if (ds == 0.0) continue;
        for (std::size_t c = 0; c < dh; ++c) {
          dq(i, off + c) += ds * tr.k(j, off + c);
          dk(j, off + c) += ds * tr.q(i, off + c);
        }
      }
    }
  }

  accumulate_tn(text, dq, grads.wq);
  accumulate_tn(image, dk, grads.wk);
  accumulate_tn(image, dv, grads.wv);

  const Matrix dt = matmul_nt(dq, params.wq);
  const Matrix di_k = matmul_nt(dk, params.wk);
  const Matrix di_v = matmul_nt(dv, params.wv);
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < lt; ++i) {
    k.axpy(1.0, d_resid.row(i).data(), d_text.row(i).data(), d);
    k.axpy(1.0, dt.row(i).data(), d_text.row(i).data(), d);
  }
  for (std::size_t j = 0; j < li; ++j) {
    k.axpy(1.0, di_k.row(j).data(), d_image.row(j).data(), d);
    k.axpy(1.0, di_v.row(j).data(), d_image.row(j).data(), d);
  }
}

FusionGradients loss_and_gradients(std::span<const FusionExample> batch,
                                   const AttentionParams& params) {
  if (batch.empty()) throw EmptyBatch("loss_and_gradients needs at least one example");
  params.validate();
  FusionGradients g;
  g.params = AttentionParams::zeros(params.dim(), params.heads);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const FusionTrace tr = fusion_forward(ex.text, ex.image, params);
    std::array<double, 2> d_logits{};
    g.loss += cross_entropy(tr.out.logits, ex.label, &d_logits) * inv_n;
    d_logits[0] *= inv_n;
    d_logits[1] *= inv_n;
    Matrix d_text(ex.text.rows(), ex.text.cols());
    Matrix d_image(ex.image.rows(), ex.image.cols());
    fusion_backward(ex.text, ex.image, params, tr, d_logits, g.params, d_text, d_image);
    g.d_text.push_back(std::move(d_text));
    g.d_image.push_back(std::move(d_image));
  }
  return g;
}

}  // namespace nsfwguard
