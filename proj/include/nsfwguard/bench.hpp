#pragma once

// Attack-success-rate harness. Each NSFW instance gets up to k adversarial
// candidates from nested per-candidate seeds; it counts as a success at k when
// any of its first k candidates is classified SAFE.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nsfwguard/attacks.hpp"
#include "nsfwguard/corpus.hpp"
#include "nsfwguard/model.hpp"
#include "nsfwguard/trainer.hpp"

namespace nsfwguard {

enum class AttackKind { kText, kImage, kJoint };

/// "text-greedy", "image-pgd", "joint".
std::string_view to_string(AttackKind kind);
std::optional<AttackKind> parse_attack_kind(std::string_view token);

/// Candidate j of an instance: seed derive_seed(seed, instance, j); candidate
/// 0 starts from the clean input, later ones from a random point in the ball.
AttackResult run_attack(AttackKind kind, const Example& instance, const PerturbationBudget& budget,
                        const Defense& defense, std::uint64_t seed, std::size_t instance_index,
                        std::size_t candidate);

/// Index of the first successful candidate below `max_k` for each instance,
/// or max_k when none succeeds.
std::vector<std::size_t> first_success(std::span<const Example> instances, std::size_t max_k,
                                       AttackKind kind, const Defense& defense,
                                       const PerturbationBudget& budget, std::uint64_t seed);

/// ASR-k in percent. Throws EmptyDataset and RangeError on k == 0.
double compute_asr(std::span<const Example> instances, std::size_t k, AttackKind kind,
                   const Defense& defense, const PerturbationBudget& budget, std::uint64_t seed);

struct BenchRow {
  std::string attack;
  std::string defense;
  double asr_1 = 0.0;
  double asr_4 = 0.0;
  std::size_t n = 0;
  friend bool operator==(const BenchRow&, const BenchRow&) = default;
};

struct BenchReport {
  std::vector<BenchRow> rows;  // sorted by (attack, defense)
  std::vector<std::pair<std::string, MetricReport>> metrics;  // per defense, by name
};

struct BenchOptions {
  std::size_t max_instances = 0;  // 0 keeps every NSFW sample
  bool with_metrics = true;
};

/// Cross product of attacks and defenses over the NSFW examples. Metrics,
/// when requested, are computed over all of `examples`.
BenchReport run_benchmark(std::span<const Example> examples,
                          const std::vector<std::shared_ptr<const Defense>>& defenses,
                          const std::vector<AttackKind>& attacks, const PerturbationBudget& budget,
                          std::uint64_t seed, const BenchOptions& options = {});

BenchReport run_benchmark(const Manifest& manifest, const std::filesystem::path& root,
                          const std::vector<std::shared_ptr<const Defense>>& defenses,
                          const std::vector<AttackKind>& attacks, const PerturbationBudget& budget,
                          std::uint64_t seed, const BenchOptions& options = {});

std::string format_report_csv(const BenchReport& report);
std::string format_report_table(const BenchReport& report);

/// Writes `<path>.csv` and `<path>.txt` (any extension on `path` is replaced)
/// and returns the CSV path. Throws IoError.
std::filesystem::path emit_report(const BenchReport& report, const std::filesystem::path& path);

}  // namespace nsfwguard
