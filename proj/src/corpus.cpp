#include "nsfwguard/corpus.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <unordered_set>

#include "binary_io.hpp"
#include "nsfwguard/error.hpp"
#include "nsfwguard/hash.hpp"

namespace nsfwguard {
namespace {

constexpr std::string_view kManifestMagic = "NSFWGUARD-MANIFEST v1";

bool has_control(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; });
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string_view to_string(Label label) { return label == Label::kSafe ? "SAFE" : "NSFW"; }

std::string_view to_string(Source source) {
  switch (source) {
    case Source::kSafeCorpus:
      return "SAFE_CORPUS";
    case Source::kGenerated:
      return "GENERATED";
    case Source::kScraped:
      return "SCRAPED";
    case Source::kPerturbed:
      return "PERTURBED";
  }
  return "?";
}

std::string_view to_string(Modality modality) {
  switch (modality) {
    case Modality::kText:
      return "TEXT";
    case Modality::kImage:
      return "IMAGE";
    case Modality::kBoth:
      return "BOTH";
  }
  return "?";
}

std::optional<Label> parse_label(std::string_view token) {
  if (token == "SAFE") return Label::kSafe;
  if (token == "NSFW") return Label::kNsfw;
  return std::nullopt;
}

std::optional<Source> parse_source(std::string_view token) {
  for (Source s : {Source::kSafeCorpus, Source::kGenerated, Source::kScraped, Source::kPerturbed}) {
    if (token == to_string(s)) return s;
  }
  return std::nullopt;
}

std::optional<Modality> parse_modality(std::string_view token) {
  for (Modality m : {Modality::kText, Modality::kImage, Modality::kBoth}) {
    if (token == to_string(m)) return m;
  }
  return std::nullopt;
}

Composition tally(const std::vector<LabeledSample>& samples) {
  Composition out;
  for (const auto& s : samples) ++out[s.source];
  return out;
}

Manifest::Manifest(std::vector<LabeledSample> samples)
    : samples_(std::move(samples)), composition_(tally(samples_)) {}

void Manifest::add(LabeledSample sample) {
  ++composition_[sample.source];
  samples_.push_back(std::move(sample));
}

const LabeledSample* Manifest::find(std::string_view id) const {
  auto it = std::find_if(samples_.begin(), samples_.end(), [&](const auto& s) { return s.id == id; });
  return it == samples_.end() ? nullptr : &*it;
}

void check_manifest(const Manifest& manifest) {
  std::unordered_set<std::string_view> seen;
  for (const auto& s : manifest.samples()) {
    if (s.id.empty()) throw ValidationError("<empty>", "sample id is empty");
    if (!seen.insert(s.id).second) throw ValidationError(s.id, "duplicate sample id");
    if (has_control(s.id) || s.id.find('=') != std::string::npos) {
      throw ValidationError(s.id, "id contains a reserved character");
    }
    if (s.image_ref.empty() || has_control(s.image_ref)) {
      throw ValidationError(s.id, "image_ref is empty or contains a control character");
    }
    if (s.prompt.empty()) throw ValidationError(s.id, "prompt is empty");
    if ((s.source == Source::kPerturbed) != s.perturbed_modality.has_value()) {
      throw ValidationError(s.id, "perturbed_modality must be set iff source is PERTURBED");
    }
  }
  if (tally(manifest.samples()) != manifest.composition()) {
    throw ValidationError("<manifest>", "cached composition disagrees with samples");
  }
}

std::string percent_encode(std::string_view text) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    if (c == '%' || c == '\t' || c == '\n' || c == '\r') {
      auto u = static_cast<unsigned char>(c);
      out += '%';
      out += kHex[u >> 4];
      out += kHex[u & 0xf];
    } else {
      out += c;
    }
  }
  return out;
}

std::optional<std::string> percent_decode(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '%') {
      out += text[i];
      continue;
    }
    if (i + 2 >= text.size()) return std::nullopt;
    int hi = hex_value(text[i + 1]);
    int lo = hex_value(text[i + 2]);
    if (hi < 0 || lo < 0) return std::nullopt;
    out += static_cast<char>(hi * 16 + lo);
    i += 2;
  }
  return out;
}

std::string serialize_manifest(const Manifest& manifest) {
  check_manifest(manifest);
  std::string out(kManifestMagic);
  out += '\n';
  for (const auto& s : manifest.samples()) {
    out += "id=" + s.id;
    out += "\tlabel=";
    out += to_string(s.label);
    out += "\tsource=";
    out += to_string(s.source);
    out += "\tperturbed=";
    out += s.perturbed_modality ? to_string(*s.perturbed_modality) : std::string_view("-");
    out += "\timage=" + s.image_ref;
    out += "\tprompt=" + percent_encode(s.prompt);
    out += '\n';
  }
  return out;
}

Manifest parse_manifest(std::string_view text) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  std::vector<LabeledSample> samples;
  static constexpr std::array<std::string_view, 6> kKeys = {"id", "label", "source",
                                                            "perturbed", "image", "prompt"};
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) throw ParseError(line_no + 1, "missing trailing newline");
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!header_seen) {
      if (line != kManifestMagic) throw ParseError(line_no, "expected manifest header");
      header_seen = true;
      continue;
    }
    auto fields = split_tabs(line);
    if (fields.size() != kKeys.size()) throw ParseError(line_no, "expected 6 tab-separated fields");
    std::array<std::string_view, 6> values;
    for (std::size_t i = 0; i < kKeys.size(); ++i) {
      auto eq = fields[i].find('=');
      if (eq == std::string_view::npos || fields[i].substr(0, eq) != kKeys[i]) {
        throw ParseError(line_no, "expected field '" + std::string(kKeys[i]) + "='");
      }
      values[i] = fields[i].substr(eq + 1);
    }
    LabeledSample s;
    s.id = std::string(values[0]);
    auto label = parse_label(values[1]);
    if (!label) throw ParseError(line_no, "unknown label '" + std::string(values[1]) + "'");
    s.label = *label;
    auto source = parse_source(values[2]);
    if (!source) throw ParseError(line_no, "unknown source '" + std::string(values[2]) + "'");
    s.source = *source;
    if (values[3] != "-") {
      auto modality = parse_modality(values[3]);
      if (!modality) throw ParseError(line_no, "unknown modality '" + std::string(values[3]) + "'");
      s.perturbed_modality = *modality;
    }
    s.image_ref = std::string(values[4]);
    auto prompt = percent_decode(values[5]);
    if (!prompt) throw ParseError(line_no, "bad percent-encoding in prompt");
    s.prompt = std::move(*prompt);
    samples.push_back(std::move(s));
  }
  if (!header_seen) throw ParseError(1, "empty manifest file");
  Manifest manifest(std::move(samples));
  try {
    check_manifest(manifest);
  } catch (const ValidationError& e) {
    std::size_t bad_line = 0;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      if (manifest.samples()[i].id == e.subject()) bad_line = i + 2;
    }
    throw ParseError(bad_line, e.what());
  }
  return manifest;
}

std::filesystem::path write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  detail::write_file(path, serialize_manifest(manifest));
  return path;
}

Manifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(detail::read_file(path));
}

std::vector<std::string> validate_sample(const LabeledSample& sample,
                                         const std::filesystem::path& root) {
  std::vector<std::string> violations;
  if (sample.id.empty()) violations.emplace_back("id is empty");
  if (has_control(sample.id)) violations.emplace_back("id contains a control character");
  if (sample.prompt.empty()) violations.emplace_back("prompt is empty");
  if (sample.source == Source::kPerturbed && !sample.perturbed_modality) {
    violations.emplace_back("source is PERTURBED but perturbed_modality is absent");
  }
  if (sample.source != Source::kPerturbed && sample.perturbed_modality) {
    violations.emplace_back("perturbed_modality set on a non-PERTURBED sample");
  }
  if (sample.label != Label::kSafe && sample.label != Label::kNsfw) {
    violations.emplace_back("label is neither SAFE nor NSFW");
  }
  std::error_code ec;
  if (sample.image_ref.empty() || !std::filesystem::is_regular_file(root / sample.image_ref, ec)) {
    violations.emplace_back("image_ref '" + sample.image_ref + "' does not resolve to a file");
  }
  return violations;
}

Split split_dataset(const Manifest& manifest, std::uint64_t seed) {
  if (manifest.empty()) throw EmptyDataset("cannot split an empty manifest");
  const std::size_t total = manifest.size();
  const std::size_t target_train = total * 7 / 10;

  std::array<std::vector<std::size_t>, 2> groups;
  for (std::size_t i = 0; i < total; ++i) {
    groups[manifest.samples()[i].label == Label::kNsfw ? 1 : 0].push_back(i);
  }
  std::array<std::size_t, 2> take{};
  std::array<std::size_t, 2> remainder{};
  std::size_t assigned = 0;
  for (int c = 0; c < 2; ++c) {
    take[c] = groups[c].size() * 7 / 10;
    remainder[c] = groups[c].size() * 7 % 10;
    assigned += take[c];
  }
  // Largest remainder tops the total up to floor(0.7·N); ties go to SAFE.
  while (assigned < target_train) {
    int best = remainder[0] >= remainder[1] ? 0 : 1;
    ++take[best];
    remainder[best] = 0;
    ++assigned;
  }

  std::vector<bool> in_train(total, false);
  for (int c = 0; c < 2; ++c) {
    std::mt19937_64 rng(derive_seed(seed, 0x5b117, static_cast<std::uint64_t>(c)));
    auto order = groups[c];
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < take[c]; ++i) in_train[order[i]] = true;
  }

  Split split;
  split.seed = seed;
  for (std::size_t i = 0; i < total; ++i) {
    (in_train[i] ? split.train_ids : split.val_ids).push_back(manifest.samples()[i].id);
  }
  return split;
}

void check_split(const Manifest& manifest, const Split& split) {
  std::unordered_set<std::string_view> ids;
  for (const auto& s : manifest.samples()) ids.insert(s.id);
  std::unordered_set<std::string_view> seen;
  for (const auto* part : {&split.train_ids, &split.val_ids}) {
    for (const auto& id : *part) {
      if (!ids.contains(id)) throw ValidationError(id, "split id not in manifest");
      if (!seen.insert(id).second) throw ValidationError(id, "id appears twice in split");
    }
  }
  if (seen.size() != ids.size()) {
    throw ValidationError("<split>", "split does not cover every manifest id");
  }
}

}  // namespace nsfwguard
