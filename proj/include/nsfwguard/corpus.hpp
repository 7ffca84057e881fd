#pragma once

// Dataset records, the line-delimited manifest format and the seeded,
// label-stratified 70/30 train/validation split.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nsfwguard {

enum class Label { kSafe, kNsfw };
enum class Source { kSafeCorpus, kGenerated, kScraped, kPerturbed };
enum class Modality { kText, kImage, kBoth };

std::string_view to_string(Label label);
std::string_view to_string(Source source);
std::string_view to_string(Modality modality);
std::optional<Label> parse_label(std::string_view token);
std::optional<Source> parse_source(std::string_view token);
std::optional<Modality> parse_modality(std::string_view token);

struct LabeledSample {
  std::string id;
  std::string prompt;
  std::string image_ref;  // relative to the manifest's directory
  Label label = Label::kSafe;
  Source source = Source::kSafeCorpus;
  std::optional<Modality> perturbed_modality;  // present iff source == kPerturbed

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

/// Per-source counts; only sources that occur are present.
using Composition = std::map<Source, std::size_t>;

class Manifest {
 public:
  static constexpr int kVersion = 1;

  Manifest() = default;
  explicit Manifest(std::vector<LabeledSample> samples);

  int version() const noexcept { return version_; }
  const std::vector<LabeledSample>& samples() const noexcept { return samples_; }
  const Composition& composition() const noexcept { return composition_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }

  void add(LabeledSample sample);
  const LabeledSample* find(std::string_view id) const;

  friend bool operator==(const Manifest& a, const Manifest& b) {
    return a.version_ == b.version_ && a.samples_ == b.samples_;
  }

 private:
  int version_ = kVersion;
  std::vector<LabeledSample> samples_;
  Composition composition_;
};

Composition tally(const std::vector<LabeledSample>& samples);

/// Structural invariants that need no filesystem: unique ids, non-empty
/// prompts, modality iff perturbed, no control characters in id/image_ref.
/// Throws ValidationError naming the first offending sample id.
void check_manifest(const Manifest& manifest);

std::string serialize_manifest(const Manifest& manifest);
/// Throws ParseError carrying the 1-based line number.
Manifest parse_manifest(std::string_view text);

std::filesystem::path write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

/// Every violated invariant of `sample`, empty when the sample is well-formed.
/// `root` is the directory image_ref is resolved against.
std::vector<std::string> validate_sample(const LabeledSample& sample,
                                         const std::filesystem::path& root);

struct Split {
  std::vector<std::string> train_ids;  // manifest order
  std::vector<std::string> val_ids;    // manifest order
  std::uint64_t seed = 0;

  friend bool operator==(const Split&, const Split&) = default;
};

inline constexpr double kTrainFraction = 0.7;

/// |train| = floor(0.7·N), stratified by label, remainder to validation.
Split split_dataset(const Manifest& manifest, std::uint64_t seed);

/// Throws ValidationError unless `split` partitions exactly the manifest ids.
void check_split(const Manifest& manifest, const Split& split);

std::string percent_encode(std::string_view text);
std::optional<std::string> percent_decode(std::string_view text);

}  // namespace nsfwguard
