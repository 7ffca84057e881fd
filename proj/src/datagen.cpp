#include "nsfwguard/datagen.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>
#include <unordered_set>

#include "base64.hpp"
#include "binary_io.hpp"
#include "nsfwguard/encoders.hpp"
#include "nsfwguard/error.hpp"
#include "nsfwguard/hash.hpp"

namespace nsfwguard {
namespace {

constexpr std::array<Source, 4> kSourceOrder = {Source::kSafeCorpus, Source::kGenerated,
                                                Source::kScraped, Source::kPerturbed};

std::string padded(std::string_view prefix, std::size_t i) {
  std::string n = std::to_string(i);
  if (n.size() < 5) n.insert(0, 5 - n.size(), '0');
  return std::string(prefix) + "-" + n;
}

std::vector<std::string> split_spaces(std::string_view s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    while (pos < s.size() && s[pos] == ' ') ++pos;
    std::size_t end = s.find(' ', pos);
    if (end == std::string_view::npos) end = s.size();
    if (end > pos) out.emplace_back(s.substr(pos, end - pos));
    pos = end;
  }
  return out;
}

void check_ratios(const SourceRatios& ratios) {
  double sum = 0.0;
  for (const auto& [source, r] : ratios) {
    if (!(r >= 0.0)) throw ValidationError("ratios", "negative ratio for " + std::string(to_string(source)));
    sum += r;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw ValidationError("ratios", "ratios must sum to 1");
}

// One sample through sentence → prompt → image; the image file lands in root.
LabeledSample render_sample(const GeneratorBackend& backend, const Vocabulary& vocab,
                            const DatagenConfig& config, std::uint64_t seed, std::string id,
                            Label label, Source source, const std::filesystem::path& root) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> words(
      config.min_words, std::min(config.max_words, vocab.size()));
  const auto mask = random_mask(vocab, words(rng), derive_seed(seed, 1));
  LabeledSample s;
  s.prompt = synthesize_prompt(backend, sample_sentence(vocab, mask));
  s.id = std::move(id);
  s.label = label;
  s.source = source;
  s.image_ref = "images/" + s.id + ".img";
  write_image(generate_image(backend, s.prompt, config.image_size), root / s.image_ref);
  return s;
}

}  // namespace

std::string sample_sentence(const Vocabulary& vocab, const SelectionMask& mask) {
  if (mask.bits.size() != vocab.size()) {
    throw ShapeError("mask length " + std::to_string(mask.bits.size()) +
                     " does not match vocabulary size " + std::to_string(vocab.size()));
  }
  std::string out;
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    if (!mask.bits[i]) continue;
    if (!out.empty()) out += ' ';
    out += vocab.entries()[i];
  }
  if (out.empty()) throw EmptySelection("selection mask has no bit set");
  return out;
}

SelectionMask random_mask(const Vocabulary& vocab, std::size_t k, std::uint64_t seed) {
  if (k < 1 || k > vocab.size()) {
    throw RangeError("k = " + std::to_string(k) + " outside [1, " + std::to_string(vocab.size()) + "]");
  }
  std::vector<std::size_t> index(vocab.size());
  std::iota(index.begin(), index.end(), 0);
  std::vector<std::size_t> picked;
  std::mt19937_64 rng(derive_seed(seed, 0x3a5c));
  std::sample(index.begin(), index.end(), std::back_inserter(picked), k, rng);
  SelectionMask mask{std::vector<std::uint8_t>(vocab.size(), 0)};
  for (auto i : picked) mask.bits[i] = 1;
  return mask;
}

StubBackend::StubBackend(std::uint64_t seed, std::map<std::string, Rgb> palette,
                         double concept_strength)
    : seed_(seed), palette_(std::move(palette)), concept_strength_(concept_strength) {}

std::string StubBackend::synthesize_prompt(std::string_view instruction) const {
  std::string_view body = instruction;
  if (body.starts_with(kInstructionPrefix)) body.remove_prefix(kInstructionPrefix.size());
  const auto words = split_spaces(body);
  std::string out = "Description of image featuring ";
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += " and ";
    out += words[i];
  }
  out += " in a scene.";
  return out;
}

ImageTensor StubBackend::generate_image(std::string_view prompt, std::size_t size) const {
  std::mt19937_64 rng(fnv1a64(prompt) ^ mix64(seed_));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  struct Wave {
    double fx, fy, phase;
  };
  std::array<std::array<Wave, 3>, 3> waves;
  for (auto& channel : waves) {
    for (auto& w : channel) w = {0.05 + 0.45 * u(rng), 0.05 + 0.45 * u(rng), 6.2831853 * u(rng)};
  }

  Rgb tint{0.0, 0.0, 0.0};
  std::size_t concepts = 0;
  for (const auto& piece : split_pieces(prompt)) {
    auto it = palette_.find(piece);
    if (it == palette_.end()) continue;
    for (int c = 0; c < 3; ++c) tint[c] += it->second[c];
    ++concepts;
  }
  double strength = 0.0;
  if (concepts) {
    for (auto& t : tint) t /= static_cast<double>(concepts);
    strength = std::clamp(concept_strength_ * (0.6 + 0.8 * u(rng)), 0.0, 1.0);
  }

  ImageTensor image(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        double v = 0.0;
        for (const auto& w : waves[c]) v += std::sin(w.fx * x + w.fy * y + w.phase);
        v = 0.5 + 0.12 * v + 0.1 * (u(rng) - 0.5);
        v = (1.0 - strength) * v + strength * tint[c];
        image.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return image;
}

HttpBackend::HttpBackend(std::string base_url, std::string llm_path, std::string image_path)
    : base_url_(std::move(base_url)), llm_path_(std::move(llm_path)),
      image_path_(std::move(image_path)) {}

std::string HttpBackend::synthesize_prompt(std::string_view instruction) const {
  httplib::Client client(base_url_);
  client.set_read_timeout(60, 0);
  nlohmann::json body{{"prompt", std::string(instruction)}};
  auto res = client.Post(llm_path_, body.dump(), "application/json");
  if (!res) throw BackendError(name(), "LLM request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw BackendError(name(), "LLM returned HTTP " + std::to_string(res->status));
  auto json = nlohmann::json::parse(res->body, nullptr, false);
  if (json.is_discarded() || !json.contains("text") || !json["text"].is_string()) {
    throw BackendError(name(), "LLM response lacks a \"text\" string");
  }
  return json["text"].get<std::string>();
}

ImageTensor HttpBackend::generate_image(std::string_view prompt, std::size_t size) const {
  httplib::Client client(base_url_);
  client.set_read_timeout(300, 0);
  nlohmann::json body{{"prompt", std::string(prompt)}, {"size", size}};
  auto res = client.Post(image_path_, body.dump(), "application/json");
  if (!res) throw BackendError(name(), "T2I request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw BackendError(name(), "T2I returned HTTP " + std::to_string(res->status));
  auto json = nlohmann::json::parse(res->body, nullptr, false);
  if (json.is_discarded() || !json.contains("image_b64") || !json["image_b64"].is_string()) {
    throw BackendError(name(), "T2I response lacks an \"image_b64\" string");
  }
  auto bytes = detail::base64_decode(json["image_b64"].get<std::string>());
  if (!bytes) throw BackendError(name(), "T2I returned malformed base64");
  try {
    return decode_image_file(*bytes);
  } catch (const ParseError& e) {
    throw BackendError(name(), std::string("T2I returned a malformed image: ") + e.what());
  }
}

std::string synthesize_prompt(const GeneratorBackend& backend, std::string_view sentence) {
  if (sentence.empty()) throw PreconditionError("sentence must be non-empty");
  std::string instruction(kInstructionPrefix);
  instruction += sentence;
  std::string out;
  try {
    out = backend.synthesize_prompt(instruction);
  } catch (const BackendError&) {
    throw;
  } catch (const std::exception& e) {
    throw BackendError(backend.name(), e.what());
  }
  if (out.empty()) throw BackendError(backend.name(), "empty prompt returned (refusal?)");
  return out;
}

ImageTensor generate_image(const GeneratorBackend& backend, std::string_view prompt,
                           std::size_t size) {
  if (prompt.empty()) throw PreconditionError("prompt must be non-empty");
  if (size < 8) throw RangeError("image size must be at least 8");
  ImageTensor image;
  try {
    image = backend.generate_image(prompt, size);
  } catch (const BackendError&) {
    throw;
  } catch (const std::exception& e) {
    throw BackendError(backend.name(), e.what());
  }
  if (!image.valid()) throw BackendError(backend.name(), "image values outside [0,1]");
  return image;
}

SourceRatios default_ratios() {
  return {{Source::kSafeCorpus, 0.5}, {Source::kGenerated, 0.48}, {Source::kPerturbed, 0.02}};
}

std::map<Source, std::size_t> apportion(const SourceRatios& ratios, std::size_t total) {
  check_ratios(ratios);
  std::map<Source, std::size_t> counts;
  std::vector<std::pair<double, Source>> remainders;
  std::size_t assigned = 0;
  for (Source s : kSourceOrder) {
    auto it = ratios.find(s);
    if (it == ratios.end()) continue;
    const double exact = it->second * static_cast<double>(total);
    const auto base = static_cast<std::size_t>(std::floor(exact + 1e-9));
    counts[s] = base;
    assigned += base;
    remainders.emplace_back(std::max(0.0, exact - static_cast<double>(base)), s);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total && !remainders.empty(); ++i, ++assigned) {
    ++counts[remainders[i % remainders.size()].second];
  }
  return counts;
}

Manifest assemble_dataset(const Manifest& safe_source,
                          const std::vector<LabeledSample>& nsfw_pipeline_out,
                          const std::vector<LabeledSample>& perturbed, const SourceRatios& ratios,
                          std::size_t total) {
  const auto counts = apportion(ratios, total);
  Manifest out;
  for (Source source : kSourceOrder) {
    auto it = counts.find(source);
    if (it == counts.end() || it->second == 0) continue;
    std::vector<const LabeledSample*> pool;
    auto collect = [&](const std::vector<LabeledSample>& from) {
      for (const auto& s : from)
        if (s.source == source) pool.push_back(&s);
    };
    if (source == Source::kSafeCorpus) collect(safe_source.samples());
    else if (source == Source::kPerturbed) collect(perturbed);
    else collect(nsfw_pipeline_out);
    if (pool.size() < it->second) throw CompositionError(std::string(to_string(source)));
    for (std::size_t i = 0; i < it->second; ++i) out.add(*pool[i]);
  }
  check_manifest(out);
  return out;
}

std::vector<std::string> read_scraped_prompts(const std::filesystem::path& path) {
  std::istringstream in(detail::read_file(path));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::shared_ptr<const Defense> make_surrogate_defense(const Vocabulary& nsfw_vocab) {
  auto keyword = std::make_shared<KeywordDefense>(nsfw_vocab.as_set());
  auto warm = std::make_shared<ChannelMeanDefense>(std::array<double, 3>{1.0, 0.0, -1.0}, 10.0,
                                                   0.0, "warm-cast");
  return std::make_shared<EitherDefense>(keyword, warm, "surrogate");
}

std::vector<LabeledSample> make_perturbed_samples(const std::vector<LabeledSample>& pool,
                                                  const std::filesystem::path& root,
                                                  std::size_t count, const Defense& defense,
                                                  const PerturbationBudget& budget,
                                                  std::uint64_t seed,
                                                  std::optional<Modality> only,
                                                  std::string_view id_prefix) {
  std::vector<LabeledSample> out;
  if (count == 0) return out;
  if (pool.empty()) throw CompositionError(std::string(to_string(Source::kPerturbed)));
  std::mt19937_64 rng(derive_seed(seed, 0x9e7));
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (std::size_t i = 0; i < count; ++i) {
    const LabeledSample& base = pool[pick(rng)];
    const ImageTensor image = read_image(root / base.image_ref);
    const Modality modality = only ? *only : (i % 2 == 0 ? Modality::kText : Modality::kImage);
    const std::uint64_t attack_seed = derive_seed(seed, 0xa77, i);
    AttackResult r;
    switch (modality) {
      case Modality::kText:
        r = perturb_prompt(base.prompt, image, budget, defense, attack_seed);
        break;
      case Modality::kImage:
        r = perturb_image(image, budget, defense, base.prompt, PgdOptions{true, attack_seed});
        break;
      case Modality::kBoth:
        r = joint_attack(base.prompt, image, budget, defense, attack_seed, default_substitutions(),
                         true);
        break;
    }
    LabeledSample s;
    s.id = padded(id_prefix, i);
    s.prompt = r.adversarial_prompt.value_or(base.prompt);
    s.label = Label::kNsfw;
    s.source = Source::kPerturbed;
    s.perturbed_modality = modality;
    s.image_ref = "images/" + s.id + ".img";
    write_image(r.adversarial_image.value_or(image), root / s.image_ref);
    out.push_back(std::move(s));
  }
  return out;
}

Manifest run_datagen(const DatagenConfig& config, const GeneratorBackend& backend,
                     const Vocabulary& nsfw_vocab, const Vocabulary& safe_vocab,
                     const Defense& perturb_target, const std::filesystem::path& out_dir) {
  if (config.min_words < 1 || config.min_words > config.max_words) {
    throw ValidationError("min_words", "word-count range is empty");
  }
  const auto counts = apportion(config.ratios, config.total);
  auto count_of = [&](Source s) {
    auto it = counts.find(s);
    return it == counts.end() ? std::size_t{0} : it->second;
  };

  Manifest safe;
  for (std::size_t i = 0; i < count_of(Source::kSafeCorpus); ++i) {
    safe.add(render_sample(backend, safe_vocab, config, derive_seed(config.seed, 1, i),
                           padded("safe", i), Label::kSafe, Source::kSafeCorpus, out_dir));
  }

  std::vector<LabeledSample> nsfw;
  for (std::size_t i = 0; i < count_of(Source::kGenerated); ++i) {
    nsfw.push_back(render_sample(backend, nsfw_vocab, config, derive_seed(config.seed, 2, i),
                                 padded("gen", i), Label::kNsfw, Source::kGenerated, out_dir));
  }
  const std::size_t scraped = std::min(count_of(Source::kScraped), config.scraped_prompts.size());
  for (std::size_t i = 0; i < scraped; ++i) {
    LabeledSample s;
    s.id = padded("scr", i);
    s.prompt = config.scraped_prompts[i];
    s.label = Label::kNsfw;
    s.source = Source::kScraped;
    s.image_ref = "images/" + s.id + ".img";
    write_image(generate_image(backend, s.prompt, config.image_size), out_dir / s.image_ref);
    nsfw.push_back(std::move(s));
  }

  const auto perturbed =
      make_perturbed_samples(nsfw, out_dir, count_of(Source::kPerturbed), perturb_target,
                             config.budget, derive_seed(config.seed, 3));
  Manifest manifest = assemble_dataset(safe, nsfw, perturbed, config.ratios, config.total);
  for (const auto& s : manifest.samples()) {
    auto violations = validate_sample(s, out_dir);
    if (!violations.empty()) throw ValidationError(s.id, violations.front());
  }
  write_manifest(manifest, out_dir / "manifest.txt");
  return manifest;
}

}  // namespace nsfwguard
