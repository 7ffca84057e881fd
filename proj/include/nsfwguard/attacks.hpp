#pragma once

// Budgeted perturbations against any Defense: greedy character substitution on
// the prompt (edit-count budget), sign-gradient PGD on the image (L∞ budget)
// and an alternating joint attack that interleaves the two.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nsfwguard/defense.hpp"
#include "nsfwguard/image.hpp"

namespace nsfwguard {

struct PerturbationBudget {
  int epsilon_text = 3;                   // character edits
  double epsilon_image = 8.0 / 255.0;     // L∞ radius
  int pgd_steps = 10;
  double pgd_step_size = 2.0 / 255.0;
  std::size_t candidate_pool = 32;        // edits scored per greedy step

  /// Throws RangeError when a field is out of its domain.
  void validate() const;
};

/// One rewrite rule. An empty `from` means "insert `to` inside a word".
struct Substitution {
  std::string from;
  std::string to;
  friend bool operator==(const Substitution&, const Substitution&) = default;
};

/// o→0, a→@, i→1, e→3, s→$, then space insertion.
const std::vector<Substitution>& default_substitutions();

/// `subst-v1.txt`: "# ..." comments, otherwise "from<TAB>to" per line. "INS" in
/// the from-column marks an insertion; "\s" denotes a space, "\t" a tab and
/// "\\" a backslash.
std::vector<Substitution> parse_substitutions(std::string_view text);
std::vector<Substitution> load_substitutions(const std::filesystem::path& path);
std::string format_substitutions(const std::vector<Substitution>& table);

/// A single edit at a byte offset of the prompt.
struct Edit {
  std::size_t rule = 0;
  std::size_t position = 0;
};

/// Every applicable edit, rule-major then by position.
std::vector<Edit> enumerate_edits(std::string_view prompt, const std::vector<Substitution>& table);
std::string apply_edit(std::string_view prompt, const Edit& edit,
                       const std::vector<Substitution>& table);

struct AttackResult {
  std::optional<std::string> adversarial_prompt;
  std::optional<ImageTensor> adversarial_image;
  bool success = false;       // the defense says SAFE on the returned input
  std::size_t queries = 0;    // defense evaluations, gradient calls included
  // Edit count for text attacks, L∞ distance for image and joint attacks.
  double delta_norm = 0.0;
  int text_edits = 0;
  double image_linf = 0.0;
  bool gradient_free = false; // image attack fell back to 2-pixel probes
};

/// Greedy black-box search; each step applies the scored edit with the lowest
/// prob_nsfw and the search stops at the first decision flip.
AttackResult perturb_prompt(std::string_view prompt, const ImageTensor& image,
                            const PerturbationBudget& budget, const Defense& defense,
                            std::uint64_t seed,
                            const std::vector<Substitution>& table = default_substitutions());

struct PgdOptions {
  bool random_start = false;
  std::uint64_t seed = 0;
};

/// Sign-gradient PGD on the defense's NSFW loss with projection onto the L∞
/// ball and [0,1]. Defenses without gradients get finite differences over two
/// random pixels per step.
AttackResult perturb_image(const ImageTensor& image, const PerturbationBudget& budget,
                           const Defense& defense, std::string_view paired_prompt,
                           const PgdOptions& options = {});

/// Alternates one greedy edit and one PGD step until both budgets are spent or
/// the decision flips.
AttackResult joint_attack(std::string_view prompt, const ImageTensor& image,
                          const PerturbationBudget& budget, const Defense& defense,
                          std::uint64_t seed,
                          const std::vector<Substitution>& table = default_substitutions(),
                          bool random_start = false);

}  // namespace nsfwguard
