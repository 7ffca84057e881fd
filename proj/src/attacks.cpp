#include "nsfwguard/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "binary_io.hpp"
#include "nsfwguard/error.hpp"
#include "nsfwguard/hash.hpp"
#include "nsfwguard/kernels.hpp"

namespace nsfwguard {
namespace {

constexpr double kProbeStep = 1e-3;

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

std::string unescape(std::string_view s, std::size_t line) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (i + 1 >= s.size()) throw ParseError(line, "dangling escape");
    char e = s[++i];
    if (e == 's') out += ' ';
    else if (e == 't') out += '\t';
    else if (e == '\\') out += '\\';
    else throw ParseError(line, std::string("unknown escape \\") + e);
  }
  return out;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == ' ') out += "\\s";
    else if (c == '\t') out += "\\t";
    else if (c == '\\') out += "\\\\";
    else out += c;
  }
  return out;
}

float linf(const ImageTensor& a, const ImageTensor& b) {
  return kernels::active().max_abs_diff(a.values().data(), b.values().data(), a.size());
}

// Greedy search state shared by perturb_prompt and joint_attack.
class GreedyText {
 public:
  GreedyText(std::string prompt, const PerturbationBudget& budget, const Defense& defense,
             std::uint64_t seed, const std::vector<Substitution>& table)
      : prompt_(std::move(prompt)), budget_(budget), defense_(defense), table_(table),
        rng_(derive_seed(seed, 0x7e47)) {}

  bool can_step() const { return edits_ < budget_.epsilon_text && !exhausted_; }

  // Applies one edit; returns the new prob_nsfw, or nullopt when no edit applies.
  std::optional<double> step(const ImageTensor& image, std::size_t& queries) {
    auto edits = enumerate_edits(prompt_, table_);
    if (edits.empty()) {
      exhausted_ = true;
      return std::nullopt;
    }
    if (edits.size() > budget_.candidate_pool) {
      std::vector<Edit> pool;
      pool.reserve(budget_.candidate_pool);
      std::sample(edits.begin(), edits.end(), std::back_inserter(pool), budget_.candidate_pool,
                  rng_);
      edits = std::move(pool);
    }
    std::string best;
    double best_prob = INFINITY;
    for (const auto& e : edits) {
      std::string candidate = apply_edit(prompt_, e, table_);
      const double p = defense_.prob_nsfw(candidate, image);
      ++queries;
      if (p < best_prob) {
        best_prob = p;
        best = std::move(candidate);
      }
    }
    prompt_ = std::move(best);
    ++edits_;
    return best_prob;
  }

  const std::string& prompt() const { return prompt_; }
  int edits() const { return edits_; }

 private:
  std::string prompt_;
  const PerturbationBudget& budget_;
  const Defense& defense_;
  const std::vector<Substitution>& table_;
  std::mt19937_64 rng_;
  int edits_ = 0;
  bool exhausted_ = false;
};

// PGD state shared by perturb_image and joint_attack.
class Pgd {
 public:
  Pgd(const ImageTensor& image, const PerturbationBudget& budget, const Defense& defense,
      const PgdOptions& options)
      : origin_(image), current_(image), budget_(budget), defense_(defense),
        rng_(derive_seed(options.seed, 0x96d)) {
    gradient_free_ = !defense.has_gradient();
    if (options.random_start && budget.epsilon_image > 0) {
      std::uniform_real_distribution<float> u(-static_cast<float>(budget.epsilon_image),
                                              static_cast<float>(budget.epsilon_image));
      auto& v = current_.values();
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = std::clamp(origin_.values()[i] + u(rng_), 0.0f, 1.0f);
      }
      // Keeps the projection exact for origins outside the representable ball.
      std::vector<float> zero(v.size(), 0.0f);
      kernels::active().pgd_step(v.data(), zero.data(), origin_.values().data(), 0.0f,
                                 static_cast<float>(budget.epsilon_image), v.size());
    }
  }

  bool can_step() const { return steps_ < budget_.pgd_steps; }

  void step(std::string_view prompt, std::size_t& queries) {
    std::vector<float> grad(current_.size(), 0.0f);
    if (!gradient_free_) {
      const auto g = defense_.nsfw_loss_gradient(prompt, current_);
      ++queries;
      for (std::size_t i = 0; i < g.size(); ++i) grad[i] = static_cast<float>(g[i]);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, current_.size() - 1);
      for (int probe = 0; probe < 2; ++probe) {
        const std::size_t i = pick(rng_);
        grad[i] = static_cast<float>(probe_loss(prompt, i, queries));
      }
    }
    kernels::active().pgd_step(current_.values().data(), grad.data(), origin_.values().data(),
                               static_cast<float>(budget_.pgd_step_size),
                               static_cast<float>(budget_.epsilon_image), current_.size());
    ++steps_;
  }

  const ImageTensor& image() const { return current_; }
  const ImageTensor& origin() const { return origin_; }
  bool gradient_free() const { return gradient_free_; }

 private:
  double probe_loss(std::string_view prompt, std::size_t i, std::size_t& queries) {
    auto& v = current_.values();
    const float saved = v[i];
    auto loss_at = [&](float x) {
      v[i] = x;
      const double p = defense_.prob_nsfw(prompt, current_);
      ++queries;
      return -std::log(std::max(p, 1e-12));
    };
    const double up = loss_at(std::min(1.0f, saved + static_cast<float>(kProbeStep)));
    const double down = loss_at(std::max(0.0f, saved - static_cast<float>(kProbeStep)));
    v[i] = saved;
    return up - down;
  }

  ImageTensor origin_;
  ImageTensor current_;
  const PerturbationBudget& budget_;
  const Defense& defense_;
  std::mt19937_64 rng_;
  int steps_ = 0;
  bool gradient_free_ = false;
};

}  // namespace

void PerturbationBudget::validate() const {
  if (epsilon_text < 0) throw RangeError("epsilon_text must be non-negative");
  if (!(epsilon_image >= 0.0 && epsilon_image <= 1.0)) {
    throw RangeError("epsilon_image must lie in [0, 1]");
  }
  if (pgd_steps < 1) throw RangeError("pgd_steps must be at least 1");
  if (!(pgd_step_size > 0.0)) throw RangeError("pgd_step_size must be positive");
  if (candidate_pool == 0) throw RangeError("candidate_pool must be positive");
}

const std::vector<Substitution>& default_substitutions() {
  static const std::vector<Substitution> table = {
      {"o", "0"}, {"a", "@"}, {"i", "1"}, {"e", "3"}, {"s", "$"}, {"", " "}};
  return table;
}

std::vector<Substitution> parse_substitutions(std::string_view text) {
  std::vector<Substitution> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? nl : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) {
      throw ParseError(line_no, "expected from<TAB>to");
    }
    Substitution s;
    auto from = line.substr(0, tab);
    s.from = from == "INS" ? std::string() : unescape(from, line_no);
    s.to = unescape(line.substr(tab + 1), line_no);
    if (s.to.empty()) throw ParseError(line_no, "empty replacement");
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Substitution> load_substitutions(const std::filesystem::path& path) {
  return parse_substitutions(detail::read_file(path));
}

std::string format_substitutions(const std::vector<Substitution>& table) {
  std::string out = "# subst-v1: from<TAB>to; INS = insertion, \\s = space\n";
  for (const auto& s : table) {
    out += s.from.empty() ? std::string("INS") : escape(s.from);
    out += '\t';
    out += escape(s.to);
    out += '\n';
  }
  return out;
}

std::vector<Edit> enumerate_edits(std::string_view prompt, const std::vector<Substitution>& table) {
  std::vector<Edit> out;
  for (std::size_t r = 0; r < table.size(); ++r) {
    const auto& rule = table[r];
    if (rule.from.empty()) {
      // Insertion strictly inside a word.
      for (std::size_t p = 1; p < prompt.size(); ++p) {
        if (!is_space(prompt[p - 1]) && !is_space(prompt[p])) out.push_back({r, p});
      }
      continue;
    }
    for (std::size_t p = prompt.find(rule.from); p != std::string_view::npos;
         p = prompt.find(rule.from, p + 1)) {
      out.push_back({r, p});
    }
  }
  return out;
}

std::string apply_edit(std::string_view prompt, const Edit& edit,
                       const std::vector<Substitution>& table) {
  const auto& rule = table.at(edit.rule);
  std::string out(prompt.substr(0, edit.position));
  out += rule.to;
  out += prompt.substr(edit.position + rule.from.size());
  return out;
}

AttackResult perturb_prompt(std::string_view prompt, const ImageTensor& image,
                            const PerturbationBudget& budget, const Defense& defense,
                            std::uint64_t seed, const std::vector<Substitution>& table) {
  if (prompt.empty()) throw PreconditionError("cannot perturb an empty prompt");
  budget.validate();
  AttackResult result;
  double prob = defense.prob_nsfw(prompt, image);
  result.queries = 1;
  GreedyText search(std::string(prompt), budget, defense, seed, table);
  while (is_nsfw(prob, defense.threshold()) && search.can_step()) {
    auto p = search.step(image, result.queries);
    if (!p) break;
    prob = *p;
  }
  result.adversarial_prompt = search.prompt();
  result.success = !is_nsfw(prob, defense.threshold());
  result.text_edits = search.edits();
  result.delta_norm = search.edits();
  return result;
}

AttackResult perturb_image(const ImageTensor& image, const PerturbationBudget& budget,
                           const Defense& defense, std::string_view paired_prompt,
                           const PgdOptions& options) {
  budget.validate();
  AttackResult result;
  Pgd pgd(image, budget, defense, options);
  double prob = defense.prob_nsfw(paired_prompt, pgd.image());
  result.queries = 1;
  while (is_nsfw(prob, defense.threshold()) && pgd.can_step()) {
    pgd.step(paired_prompt, result.queries);
    prob = defense.prob_nsfw(paired_prompt, pgd.image());
    ++result.queries;
  }
  result.adversarial_image = pgd.image();
  result.success = !is_nsfw(prob, defense.threshold());
  result.gradient_free = pgd.gradient_free();
  result.image_linf = linf(pgd.image(), image);
  result.delta_norm = result.image_linf;
  return result;
}

AttackResult joint_attack(std::string_view prompt, const ImageTensor& image,
                          const PerturbationBudget& budget, const Defense& defense,
                          std::uint64_t seed, const std::vector<Substitution>& table,
                          bool random_start) {
  if (prompt.empty()) throw PreconditionError("cannot perturb an empty prompt");
  budget.validate();
  AttackResult result;
  GreedyText text(std::string(prompt), budget, defense, seed, table);
  Pgd pgd(image, budget, defense, PgdOptions{random_start, derive_seed(seed, 0x10147)});
  double prob = defense.prob_nsfw(prompt, pgd.image());
  result.queries = 1;
  const double threshold = defense.threshold();
  while (is_nsfw(prob, threshold) && (text.can_step() || pgd.can_step())) {
    if (text.can_step()) {
      if (auto p = text.step(pgd.image(), result.queries)) {
        prob = *p;
        if (!is_nsfw(prob, threshold)) break;
      }
    }
    if (pgd.can_step()) {
      pgd.step(text.prompt(), result.queries);
      prob = defense.prob_nsfw(text.prompt(), pgd.image());
      ++result.queries;
    }
  }
  // Success is re-checked on the returned pair.
  result.adversarial_prompt = text.prompt();
  result.adversarial_image = pgd.image();
  result.success = !defense.flags(text.prompt(), pgd.image());
  ++result.queries;
  result.text_edits = text.edits();
  result.image_linf = linf(pgd.image(), image);
  result.delta_norm = result.image_linf;
  result.gradient_free = pgd.gradient_free();
  return result;
}

}  // namespace nsfwguard
