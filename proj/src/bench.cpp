#include "nsfwguard/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <tuple>

#include "binary_io.hpp"
#include "nsfwguard/error.hpp"
#include "nsfwguard/hash.hpp"
#include "parallel.hpp"

namespace nsfwguard {
namespace {

constexpr std::size_t kMaxK = 4;

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string pad(std::string s, std::size_t width, bool right = false) {
  if (s.size() >= width) return s;
  return right ? std::string(width - s.size(), ' ') + s : s + std::string(width - s.size(), ' ');
}

double asr_at(const std::vector<std::size_t>& first, std::size_t k) {
  const auto hits = std::count_if(first.begin(), first.end(), [k](std::size_t f) { return f < k; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(first.size());
}

}  // namespace

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kText: return "text-greedy";
    case AttackKind::kImage: return "image-pgd";
    case AttackKind::kJoint: return "joint";
  }
  return "?";
}

std::optional<AttackKind> parse_attack_kind(std::string_view token) {
  for (auto k : {AttackKind::kText, AttackKind::kImage, AttackKind::kJoint}) {
    if (token == to_string(k)) return k;
  }
  if (token == "text") return AttackKind::kText;
  if (token == "image") return AttackKind::kImage;
  return std::nullopt;
}

AttackResult run_attack(AttackKind kind, const Example& instance, const PerturbationBudget& budget,
                        const Defense& defense, std::uint64_t seed, std::size_t instance_index,
                        std::size_t candidate) {
  const std::uint64_t s = derive_seed(seed, instance_index, candidate);
  const bool random_start = candidate > 0;
  switch (kind) {
    case AttackKind::kText:
      return perturb_prompt(instance.prompt, instance.image, budget, defense, s);
    case AttackKind::kImage:
      return perturb_image(instance.image, budget, defense, instance.prompt,
                           PgdOptions{random_start, s});
    case AttackKind::kJoint:
      return joint_attack(instance.prompt, instance.image, budget, defense, s,
                          default_substitutions(), random_start);
  }
  throw PreconditionError("unknown attack kind");
}

std::vector<std::size_t> first_success(std::span<const Example> instances, std::size_t max_k,
                                       AttackKind kind, const Defense& defense,
                                       const PerturbationBudget& budget, std::uint64_t seed) {
  std::vector<std::size_t> first(instances.size(), max_k);
  detail::parallel_for(instances.size(), [&](std::size_t i) {
    for (std::size_t j = 0; j < max_k; ++j) {
      if (run_attack(kind, instances[i], budget, defense, seed, i, j).success) {
        first[i] = j;
        return;
      }
    }
  });
  return first;
}

double compute_asr(std::span<const Example> instances, std::size_t k, AttackKind kind,
                   const Defense& defense, const PerturbationBudget& budget, std::uint64_t seed) {
  if (k == 0) throw RangeError("k must be >= 1");
  if (instances.empty()) throw EmptyDataset("no attack instances");
  budget.validate();
  return asr_at(first_success(instances, k, kind, defense, budget, seed), k);
}

BenchReport run_benchmark(std::span<const Example> examples,
                          const std::vector<std::shared_ptr<const Defense>>& defenses,
                          const std::vector<AttackKind>& attacks, const PerturbationBudget& budget,
                          std::uint64_t seed, const BenchOptions& options) {
  budget.validate();
  std::vector<Example> instances;
  for (const auto& ex : examples) {
    if (ex.label != Label::kNsfw) continue;
    if (options.max_instances && instances.size() >= options.max_instances) break;
    instances.push_back(ex);
  }
  if (instances.empty()) throw EmptyDataset("benchmark needs NSFW samples");

  BenchReport report;
  for (AttackKind kind : attacks) {
    for (const auto& defense : defenses) {
      const auto first = first_success(instances, kMaxK, kind, *defense, budget, seed);
      report.rows.push_back({std::string(to_string(kind)), defense->name(), asr_at(first, 1),
                             asr_at(first, kMaxK), instances.size()});
    }
  }
  std::sort(report.rows.begin(), report.rows.end(), [](const BenchRow& a, const BenchRow& b) {
    return std::tie(a.attack, a.defense) < std::tie(b.attack, b.defense);
  });

  if (options.with_metrics) {
    for (const auto& defense : defenses) {
      report.metrics.emplace_back(defense->name(), evaluate_metrics(*defense, examples));
    }
    std::stable_sort(report.metrics.begin(), report.metrics.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  return report;
}

BenchReport run_benchmark(const Manifest& manifest, const std::filesystem::path& root,
                          const std::vector<std::shared_ptr<const Defense>>& defenses,
                          const std::vector<AttackKind>& attacks, const PerturbationBudget& budget,
                          std::uint64_t seed, const BenchOptions& options) {
  std::vector<std::string> ids;
  for (const auto& s : manifest.samples()) ids.push_back(s.id);
  const auto examples = load_examples(manifest, ids, root);
  return run_benchmark(examples, defenses, attacks, budget, seed, options);
}

std::string format_report_csv(const BenchReport& report) {
  std::string out = "attack,defense,asr_1,asr_4,n\n";
  for (const auto& r : report.rows) {
    out += r.attack + "," + r.defense + "," + percent(r.asr_1) + "," + percent(r.asr_4) + "," +
           std::to_string(r.n) + "\n";
  }
  return out;
}

std::string format_report_table(const BenchReport& report) {
  std::size_t wa = 6, wd = 7;
  for (const auto& r : report.rows) {
    wa = std::max(wa, r.attack.size());
    wd = std::max(wd, r.defense.size());
  }
  std::string out = pad("attack", wa) + "  " + pad("defense", wd) + "  " + pad("ASR-1", 7, true) +
                    "  " + pad("ASR-4", 7, true) + "  " + pad("n", 5, true) + "\n";
  out += std::string(wa + wd + 29, '-') + "\n";
  for (const auto& r : report.rows) {
    out += pad(r.attack, wa) + "  " + pad(r.defense, wd) + "  " + pad(percent(r.asr_1), 7, true) +
           "  " + pad(percent(r.asr_4), 7, true) + "  " + pad(std::to_string(r.n), 5, true) + "\n";
  }
  if (!report.metrics.empty()) {
    out += "\n";
    for (const auto& [name, m] : report.metrics) out += pad(name, wd) + "  " + format_metrics(m) + "\n";
  }
  return out;
}

std::filesystem::path emit_report(const BenchReport& report, const std::filesystem::path& path) {
  auto csv = path;
  csv.replace_extension(".csv");
  auto txt = path;
  txt.replace_extension(".txt");
  detail::write_file(csv, format_report_csv(report));
  detail::write_file(txt, format_report_table(report));
  return csv;
}

}  // namespace nsfwguard
