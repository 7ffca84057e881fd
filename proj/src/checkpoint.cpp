#include <charconv>
#include <cmath>

#include "binary_io.hpp"
#include "nsfwguard/error.hpp"
#include "nsfwguard/hash.hpp"
#include "nsfwguard/model.hpp"

namespace nsfwguard {
namespace {

constexpr std::string_view kCheckpointMagic = "NSFWGUARD-CKPT v1";
constexpr std::string_view kConfigTensor = "meta.config";

void append_tensor(std::string& out, std::string_view name, const Matrix& m) {
  out += name;
  out += ' ' + std::to_string(m.rows()) + ' ' + std::to_string(m.cols()) + '\n';
  for (double v : m.values()) detail::append_f32_le(out, static_cast<float>(v));
}

struct RawTensor {
  std::string name;
  Matrix values;
};

std::vector<RawTensor> parse_tensors(const std::string& bytes) {
  auto nl = bytes.find('\n');
  if (nl == std::string::npos || std::string_view(bytes).substr(0, nl) != kCheckpointMagic) {
    throw ParseError(1, "missing checkpoint header");
  }
  std::vector<RawTensor> out;
  std::size_t pos = nl + 1;
  std::size_t line = 1;
  while (pos < bytes.size()) {
    ++line;
    auto end = bytes.find('\n', pos);
    if (end == std::string::npos) throw ParseError(line, "truncated tensor header");
    std::string_view header(bytes.data() + pos, end - pos);
    auto sp1 = header.find(' ');
    auto sp2 = header.rfind(' ');
    if (sp1 == std::string_view::npos || sp1 == sp2) throw ParseError(line, "bad tensor header");
    std::size_t rows = 0, cols = 0;
    auto r1 = std::from_chars(header.data() + sp1 + 1, header.data() + sp2, rows);
    auto r2 = std::from_chars(header.data() + sp2 + 1, header.data() + header.size(), cols);
    if (r1.ec != std::errc() || r2.ec != std::errc() || r1.ptr != header.data() + sp2 ||
        r2.ptr != header.data() + header.size()) {
      throw ParseError(line, "bad tensor dimensions");
    }
    pos = end + 1;
    const std::size_t count = rows * cols;
    if (rows > (1u << 24) || cols > (1u << 24) || bytes.size() - pos < count * 4) {
      throw ParseError(line, "tensor payload truncated");
    }
    RawTensor t{std::string(header.substr(0, sp1)), Matrix(rows, cols)};
    for (std::size_t i = 0; i < count; ++i) {
      t.values.values()[i] = detail::read_f32_le(bytes.data() + pos + 4 * i);
    }
    if (!t.values.all_finite()) throw ParseError(line, "non-finite value in tensor " + t.name);
    pos += count * 4;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  const auto& c = model.config();
  std::string out(kCheckpointMagic);
  out += '\n';
  Matrix meta{{static_cast<double>(c.encoder.vocab_size), static_cast<double>(c.encoder.d),
               static_cast<double>(c.heads), static_cast<double>(c.encoder.max_len),
               static_cast<double>(c.encoder.patch), static_cast<double>(c.image_size)}};
  append_tensor(out, kConfigTensor, meta);
  for (const auto& [name, m] : model.params().named_tensors()) append_tensor(out, name, *m);
  return out;
}

Model parse_checkpoint(const std::string& bytes) {
  auto tensors = parse_tensors(bytes);
  if (tensors.empty() || tensors.front().name != kConfigTensor ||
      tensors.front().values.size() != 6) {
    throw ParseError(2, "checkpoint must start with a 1x6 meta.config tensor");
  }
  const auto& meta = tensors.front().values.values();
  ModelConfig config;
  config.encoder.vocab_size = static_cast<std::size_t>(meta[0]);
  config.encoder.d = static_cast<std::size_t>(meta[1]);
  config.heads = static_cast<std::size_t>(meta[2]);
  config.encoder.max_len = static_cast<std::size_t>(meta[3]);
  config.encoder.patch = static_cast<std::size_t>(meta[4]);
  config.image_size = static_cast<std::size_t>(meta[5]);
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw ParseError(2, std::string("invalid model config: ") + e.what());
  }

  ModelParams params = ModelParams::zeros(config);
  auto named = params.named_tensors();
  if (tensors.size() != named.size() + 1) throw ParseError(0, "unexpected tensor count");
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& raw = tensors[i + 1];
    Matrix& dst = *named[i].second;
    if (raw.name != named[i].first || raw.values.rows() != dst.rows() ||
        raw.values.cols() != dst.cols()) {
      throw ParseError(0, "expected tensor " + std::string(named[i].first) + " with shape " +
                              std::to_string(dst.rows()) + "x" + std::to_string(dst.cols()));
    }
    dst = raw.values;
  }
  return Model(config, std::move(params));
}

void write_checkpoint(const Model& model, const std::filesystem::path& path) {
  detail::write_file(path, serialize_checkpoint(model));
}

Model read_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(detail::read_file(path));
}

std::string model_version(const Model& model) {
  return "ckpt-" + hex64(fnv1a64(serialize_checkpoint(model)));
}

}  // namespace nsfwguard
