#pragma once

// Shared helpers for the unit and acceptance suites: scratch directories, the
// desk-scale stub dataset and a finite-difference gradient checker.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "nsfwguard/attacks.hpp"
#include "nsfwguard/corpus.hpp"
#include "nsfwguard/datagen.hpp"
#include "nsfwguard/model.hpp"
#include "nsfwguard/trainer.hpp"

namespace nsfwguard::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

inline constexpr std::uint64_t kFixtureSeed = 11;
inline constexpr double kFixtureConceptStrength = 0.15;

/// Balanced stub dataset: half SAFE_CORPUS, half GENERATED.
struct DeskFixture {
  std::filesystem::path root;
  Manifest manifest;
  Split split;
  std::vector<Example> train;
  std::vector<Example> val;
};

DeskFixture build_fixture(const std::filesystem::path& root, std::size_t total = 200,
                          std::uint64_t seed = kFixtureSeed,
                          double concept_strength = kFixtureConceptStrength);

ModelConfig fixture_model_config();
TrainConfig fixture_train_config();

/// Largest relative error max over entries of |a - n| / max(|a|, |n|, 1e-5)
/// between `analytic` and central differences of `loss` around `values`.
double max_relative_error(std::vector<double>& values, const std::vector<double>& analytic,
                          const std::function<double()>& loss, double h = 1e-6);

struct GradcheckReport {
  double worst = 0.0;        // largest relative error over every entry checked
  std::string worst_tensor;  // where it occurred
  std::size_t entries = 0;
};

/// Fusion block alone at d = 4, h = 2 with 3-row text and image sequences.
GradcheckReport gradcheck_fusion(std::uint64_t seed);

/// Whole model (encoders, fusion, head) at d = 4, h = 2, vocab 16 on a
/// two-example batch whose prompts tokenize to at most 3 ids.
GradcheckReport gradcheck_model(std::uint64_t seed);

inline constexpr double kGradcheckStep = 1e-4;

/// A random attack against one of a few cheap closed-form defenses.
struct RandomAttackCase {
  std::shared_ptr<const Defense> defense;
  std::string prompt;
  ImageTensor image;
  PerturbationBudget budget;
  int kind = 0;  // 0 text, 1 image, 2 joint
};

RandomAttackCase random_attack_case(std::mt19937_64& rng);

/// Runs the case with seeds drawn from `rng`.
AttackResult run_case(const RandomAttackCase& c, std::mt19937_64& rng);

/// Empty when the result respects the budget, stays in [0,1] and a claimed
/// success really is classified SAFE; otherwise the first violation.
std::string budget_violation(const RandomAttackCase& c, const AttackResult& r);

/// Slack for float32 pixel storage when comparing L-inf distances.
inline constexpr double kPixelTol = 1e-6;

}  // namespace nsfwguard::testing
