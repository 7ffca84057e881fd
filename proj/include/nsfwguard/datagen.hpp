#pragma once

// Dataset generation: vocabulary-driven sentence assembly, instruction-prefixed
// prompt synthesis, text-to-image rendering and dataset assembly at fixed
// per-source ratios. Generators sit behind GeneratorBackend so the stub used in
// tests and a remote HTTP service are interchangeable.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "nsfwguard/attacks.hpp"
#include "nsfwguard/corpus.hpp"
#include "nsfwguard/image.hpp"

namespace nsfwguard {

using Rgb = std::array<double, 3>;

class Vocabulary {
 public:
  Vocabulary() = default;
  /// Throws ValidationError on an empty list or duplicate words.
  Vocabulary(std::vector<std::string> entries, std::map<std::string, std::string> categories);

  const std::vector<std::string>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  /// Category tag of `word`, empty when untagged.
  std::string category(std::string_view word) const;
  std::set<std::string> as_set() const;

 private:
  std::vector<std::string> entries_;
  std::map<std::string, std::string, std::less<>> categories_;
};

/// Neutral placeholder tokens arranged under the harmful-content category
/// names; carries no offensive text.
const Vocabulary& placeholder_nsfw_vocabulary();
/// Everyday scene nouns used for the safe side of the desk-scale corpus.
const Vocabulary& placeholder_safe_vocabulary();

/// "word<TAB>category" per line; '#' starts a comment.
Vocabulary load_vocabulary(const std::filesystem::path& path);

/// Tint the stub renderer blends in for each known word.
std::map<std::string, Rgb> default_palette();

struct SelectionMask {
  std::vector<std::uint8_t> bits;
};

/// Vocabulary entries whose bit is set, space-joined in vocabulary order.
/// Throws ShapeError on a length mismatch and EmptySelection on an all-zero mask.
std::string sample_sentence(const Vocabulary& vocab, const SelectionMask& mask);

/// Exactly k bits set, uniformly without replacement. Throws RangeError.
SelectionMask random_mask(const Vocabulary& vocab, std::size_t k, std::uint64_t seed);

class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  virtual std::string name() const = 0;
  virtual bool deterministic() const = 0;
  virtual std::string synthesize_prompt(std::string_view instruction) const = 0;
  virtual ImageTensor generate_image(std::string_view prompt, std::size_t size) const = 0;
};

/// Deterministic offline backend. The "LLM" fills a fixed template; the "T2I
/// model" renders a procedural texture seeded by the prompt hash and blends in
/// the palette tint of every known concept word in the prompt.
class StubBackend final : public GeneratorBackend {
 public:
  explicit StubBackend(std::uint64_t seed = 0, std::map<std::string, Rgb> palette = {},
                       double concept_strength = 0.5);

  std::string name() const override { return "stub"; }
  bool deterministic() const override { return true; }
  std::string synthesize_prompt(std::string_view instruction) const override;
  ImageTensor generate_image(std::string_view prompt, std::size_t size) const override;

 private:
  std::uint64_t seed_;
  std::map<std::string, Rgb> palette_;
  double concept_strength_;
};

/// Remote generators over HTTP/1.1 JSON. The LLM endpoint receives
/// {"prompt": ...} and returns {"text": ...}; the image endpoint receives
/// {"prompt": ..., "size": n} and returns {"image_b64": <image tensor file>}.
class HttpBackend final : public GeneratorBackend {
 public:
  HttpBackend(std::string base_url, std::string llm_path = "/v1/llm",
              std::string image_path = "/v1/t2i");

  std::string name() const override { return "http:" + base_url_; }
  bool deterministic() const override { return false; }
  std::string synthesize_prompt(std::string_view instruction) const override;
  ImageTensor generate_image(std::string_view prompt, std::size_t size) const override;

 private:
  std::string base_url_;
  std::string llm_path_;
  std::string image_path_;
};

inline constexpr std::string_view kInstructionPrefix = "Description of image ";

/// backend.synthesize_prompt(kInstructionPrefix + sentence). Failures and
/// empty outputs become BackendError carrying the backend name.
std::string synthesize_prompt(const GeneratorBackend& backend, std::string_view sentence);

/// Throws PreconditionError on an empty prompt and RangeError on size < 8.
ImageTensor generate_image(const GeneratorBackend& backend, std::string_view prompt,
                           std::size_t size);

using SourceRatios = std::map<Source, double>;

/// 50% safe, 48% generated, 2% perturbed.
SourceRatios default_ratios();

/// Per-source counts summing to `total` (largest remainder).
std::map<Source, std::size_t> apportion(const SourceRatios& ratios, std::size_t total);

/// Merges the sources at the requested fractions, taking each source's samples
/// in order. Throws CompositionError naming a short source, ValidationError on
/// duplicate ids or bad ratios.
Manifest assemble_dataset(const Manifest& safe_source,
                          const std::vector<LabeledSample>& nsfw_pipeline_out,
                          const std::vector<LabeledSample>& perturbed, const SourceRatios& ratios,
                          std::size_t total);

/// Scraped-prompt import: one UTF-8 prompt per line, blank lines skipped.
std::vector<std::string> read_scraped_prompts(const std::filesystem::path& path);

struct DatagenConfig {
  std::size_t total = 100;
  std::uint64_t seed = 0;
  std::size_t image_size = 32;
  SourceRatios ratios = default_ratios();
  std::size_t min_words = 2;
  std::size_t max_words = 5;
  std::vector<std::string> scraped_prompts;
  PerturbationBudget budget;
};

/// Surrogate used to perturb samples when no trained model is available:
/// flags on a vocabulary keyword or on a warm colour cast.
std::shared_ptr<const Defense> make_surrogate_defense(const Vocabulary& nsfw_vocab);

/// Budgeted perturbations of random NSFW pool members (text, image, text, ...
/// alternating) attacked against `defense`. Writes images under root/images.
std::vector<LabeledSample> make_perturbed_samples(const std::vector<LabeledSample>& pool,
                                                  const std::filesystem::path& root,
                                                  std::size_t count, const Defense& defense,
                                                  const PerturbationBudget& budget,
                                                  std::uint64_t seed,
                                                  std::optional<Modality> only = std::nullopt,
                                                  std::string_view id_prefix = "prt");

/// Full pipeline into `out_dir` (manifest.txt + images/). Returns the manifest.
Manifest run_datagen(const DatagenConfig& config, const GeneratorBackend& backend,
                     const Vocabulary& nsfw_vocab, const Vocabulary& safe_vocab,
                     const Defense& perturb_target, const std::filesystem::path& out_dir);

}  // namespace nsfwguard
