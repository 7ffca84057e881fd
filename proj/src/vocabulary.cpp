#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "binary_io.hpp"
#include "nsfwguard/datagen.hpp"
#include "nsfwguard/error.hpp"
#include "nsfwguard/hash.hpp"

namespace nsfwguard {
namespace {

struct Tagged {
  const char* word;
  const char* category;
};

// Invented tokens; the category names follow the harmful-content taxonomy the
// real vocabulary is organised by.
constexpr Tagged kNsfwPlaceholders[] = {
    {"velvetine", "sexual"},          {"scarlex", "sexual"},
    {"redword", "sexual"},            {"fluxwell", "bodily_fluids"},
    {"dampora", "bodily_fluids"},     {"seepra", "bodily_fluids"},
    {"orivane", "sexual_orientation"}, {"pallidor", "sexual_orientation"},
    {"quenmar", "sexual_orientation"}, {"mindrel", "mental_disability"},
    {"cogwane", "mental_disability"}, {"dullise", "mental_disability"},
    {"limbrace", "physical_disability"}, {"stridex", "physical_disability"},
    {"crutchel", "physical_disability"}, {"tribaso", "racial_ethnic"},
    {"kinvare", "racial_ethnic"},     {"ethrola", "racial_ethnic"},
    {"bulkore", "physical_attributes"}, {"gauntel", "physical_attributes"},
    {"scarvin", "physical_attributes"}, {"hogrelo", "animal_references"},
    {"curwick", "animal_references"}, {"vermaxe", "animal_references"},
    {"hereton", "religious_offense"}, {"blasvel", "religious_offense"},
    {"idolese", "religious_offense"}, {"faxiona", "political"},
    {"reblocs", "political"},         {"ralgaro", "political"},
};

constexpr const char* kSafeWords[] = {
    "cat",    "dog",     "tree",   "river",  "mountain", "bicycle", "garden",
    "beach",  "city",    "lamp",   "bridge", "forest",   "boat",    "flower",
    "kitchen", "train",  "cloud",  "horse",  "market",   "library", "teapot",
    "meadow", "harbor",  "violin", "candle", "orchard",  "canyon",  "glacier",
};

double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> entries,
                       std::map<std::string, std::string> categories)
    : entries_(std::move(entries)) {
  if (entries_.empty()) throw ValidationError("vocabulary", "vocabulary is empty");
  std::unordered_set<std::string_view> seen;
  for (const auto& w : entries_) {
    if (w.empty()) throw ValidationError("vocabulary", "empty vocabulary entry");
    if (!seen.insert(w).second) throw ValidationError(w, "duplicate vocabulary entry");
  }
  categories_.insert(categories.begin(), categories.end());
}

std::string Vocabulary::category(std::string_view word) const {
  auto it = categories_.find(word);
  return it == categories_.end() ? std::string() : it->second;
}

std::set<std::string> Vocabulary::as_set() const { return {entries_.begin(), entries_.end()}; }

const Vocabulary& placeholder_nsfw_vocabulary() {
  static const Vocabulary vocab = [] {
    std::vector<std::string> entries;
    std::map<std::string, std::string> categories;
    for (const auto& t : kNsfwPlaceholders) {
      entries.emplace_back(t.word);
      categories[t.word] = t.category;
    }
    return Vocabulary(std::move(entries), std::move(categories));
  }();
  return vocab;
}

const Vocabulary& placeholder_safe_vocabulary() {
  static const Vocabulary vocab = [] {
    std::vector<std::string> entries;
    std::map<std::string, std::string> categories;
    for (const char* w : kSafeWords) {
      entries.emplace_back(w);
      categories[w] = "scene";
    }
    return Vocabulary(std::move(entries), std::move(categories));
  }();
  return vocab;
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::istringstream in(detail::read_file(path));
  std::vector<std::string> entries;
  std::map<std::string, std::string> categories;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto tab = line.find('\t');
    std::string word = line.substr(0, tab);
    if (word.empty()) throw ParseError(line_no, "empty vocabulary word");
    entries.push_back(word);
    if (tab != std::string::npos) categories[word] = line.substr(tab + 1);
  }
  return Vocabulary(std::move(entries), std::move(categories));
}

std::map<std::string, Rgb> default_palette() {
  std::map<std::string, Rgb> palette;
  for (const auto& w : placeholder_nsfw_vocabulary().entries()) {
    const std::uint64_t h = fnv1a64(w);
    palette[w] = {0.75 + 0.2 * unit(mix64(h)), 0.15 + 0.2 * unit(mix64(h + 1)),
                  0.05 + 0.2 * unit(mix64(h + 2))};
  }
  for (const auto& w : placeholder_safe_vocabulary().entries()) {
    const std::uint64_t h = fnv1a64(w);
    palette[w] = {0.05 + 0.2 * unit(mix64(h)), 0.35 + 0.3 * unit(mix64(h + 1)),
                  0.65 + 0.3 * unit(mix64(h + 2))};
  }
  return palette;
}

}  // namespace nsfwguard
