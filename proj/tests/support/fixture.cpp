#include "fixture.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <set>
#include <utility>
#include <unistd.h>

#include "nsfwguard/defense.hpp"
#include "nsfwguard/fusion.hpp"
#include "nsfwguard/hash.hpp"

namespace nsfwguard::testing {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("nsfwguard-" + tag + "-" + std::to_string(::getpid()) + "-" +
           std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

DeskFixture build_fixture(const std::filesystem::path& root, std::size_t total, std::uint64_t seed,
                          double concept_strength) {
  DatagenConfig config;
  config.total = total;
  config.seed = seed;
  config.ratios = {{Source::kSafeCorpus, 0.5}, {Source::kGenerated, 0.5}};
  const StubBackend backend(seed, default_palette(), concept_strength);
  const auto& nsfw = placeholder_nsfw_vocabulary();
  const auto surrogate = make_surrogate_defense(nsfw);

  DeskFixture f;
  f.root = root;
  f.manifest = run_datagen(config, backend, nsfw, placeholder_safe_vocabulary(), *surrogate, root);
  f.split = split_dataset(f.manifest, seed);
  f.train = load_examples(f.manifest, f.split.train_ids, root);
  f.val = load_examples(f.manifest, f.split.val_ids, root);
  return f;
}

ModelConfig fixture_model_config() { return ModelConfig{}; }

TrainConfig fixture_train_config() {
  TrainConfig c;
  c.epochs = 30;
  c.batch_size = 8;
  c.learning_rate = 0.05;
  c.seed = kFixtureSeed;
  return c;
}

double max_relative_error(std::vector<double>& values, const std::vector<double>& analytic,
                          const std::function<double()>& loss, double h) {
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss();
    values[i] = saved - h;
    const double down = loss();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-5});
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  return worst;
}

namespace {

void note(GradcheckReport& report, std::string_view name, double err, std::size_t n) {
  report.entries += n;
  if (report.worst_tensor.empty() || err > report.worst) {
    report.worst = err;
    report.worst_tensor = std::string(name);
  }
}

double check_matrix(Matrix& m, const Matrix& analytic, const std::function<double()>& loss) {
  std::vector<double> values(m.values().begin(), m.values().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = m.values()[i];
    m.values()[i] = saved + kGradcheckStep;
    const double up = loss();
    m.values()[i] = saved - kGradcheckStep;
    const double down = loss();
    m.values()[i] = saved;
    const double numeric = (up - down) / (2.0 * kGradcheckStep);
    const double a = analytic.values()[i];
    worst = std::max(worst, std::fabs(a - numeric) /
                                std::max({std::fabs(a), std::fabs(numeric), 1e-5}));
  }
  return worst;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(r, c);
  for (auto& v : m.values()) v = dist(rng);
  return m;
}

}  // namespace

GradcheckReport gradcheck_fusion(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AttentionParams params = AttentionParams::initialize(4, 2, seed);
  std::normal_distribution<double> dist(0.0, 0.3);
  for (Matrix* m : {&params.gamma, &params.beta, &params.head_b}) {
    for (auto& v : m->values()) v += dist(rng);
  }
  std::vector<FusionExample> batch{{random_matrix(3, 4, rng), random_matrix(3, 4, rng), Label::kNsfw},
                                   {random_matrix(3, 4, rng), random_matrix(3, 4, rng), Label::kSafe}};
  const FusionGradients g = loss_and_gradients(batch, params);
  auto loss = [&] { return loss_and_gradients(batch, params).loss; };

  GradcheckReport report;
  const std::pair<const char*, std::pair<Matrix*, const Matrix*>> tensors[] = {
      {"fusion.wq", {&params.wq, &g.params.wq}},       {"fusion.wk", {&params.wk, &g.params.wk}},
      {"fusion.wv", {&params.wv, &g.params.wv}},       {"fusion.gamma", {&params.gamma, &g.params.gamma}},
      {"fusion.beta", {&params.beta, &g.params.beta}}, {"head.w", {&params.head_w, &g.params.head_w}},
      {"head.b", {&params.head_b, &g.params.head_b}}};
  for (const auto& [name, pair] : tensors) {
    note(report, name, check_matrix(*pair.first, *pair.second, loss), pair.first->size());
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    note(report, "input.text", check_matrix(batch[i].text, g.d_text[i], loss), batch[i].text.size());
    note(report, "input.image", check_matrix(batch[i].image, g.d_image[i], loss), batch[i].image.size());
  }
  return report;
}

GradcheckReport gradcheck_model(std::uint64_t seed) {
  ModelConfig config;
  config.encoder.vocab_size = 16;
  config.encoder.d = 4;
  config.encoder.max_len = 3;
  config.encoder.patch = 4;
  config.heads = 2;
  config.image_size = 8;
  Model model = Model::initialize(config, seed);

  std::mt19937_64 rng(derive_seed(seed, 0x6c));
  std::uniform_real_distribution<float> pixel(0.05f, 0.95f);
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (auto& [name, m] : model.mutable_params().named_tensors()) {
    if (name == "fusion.gamma" || name == "fusion.beta" || name == "head.b") {
      for (auto& v : m->values()) v += jitter(rng);
    }
  }
  std::vector<Example> batch;
  for (const auto& [prompt, label] : {std::pair<const char*, Label>{"alpha beta", Label::kNsfw},
                                      std::pair<const char*, Label>{"gamma", Label::kSafe}}) {
    ImageTensor im(8, 8);
    for (auto& v : im.values()) v = pixel(rng);
    batch.push_back({prompt, prompt, im, label});
  }

  ModelParams grads = ModelParams::zeros(config);
  model.loss_and_gradients(batch, grads);
  auto loss = [&] { return model.loss(batch); };

  GradcheckReport report;
  auto params = model.mutable_params().named_tensors();
  auto analytic = std::as_const(grads).named_tensors();
  for (std::size_t i = 0; i < params.size(); ++i) {
    note(report, params[i].first, check_matrix(*params[i].second, *analytic[i].second, loss),
         params[i].second->size());
  }
  return report;
}

namespace {

double linf(const ImageTensor& a, const ImageTensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(static_cast<double>(a.values()[i]) - b.values()[i]));
  }
  return m;
}

}  // namespace

RandomAttackCase random_attack_case(std::mt19937_64& rng) {
  static const std::vector<std::string> words{"redword", "blue", "sky", "soil", "ocean", "aside"};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RandomAttackCase c;
  const int n = 1 + static_cast<int>(rng() % 4);
  for (int i = 0; i < n; ++i) c.prompt += (i ? " " : "") + words[rng() % words.size()];
  c.image = ImageTensor(8, 8);
  for (auto& v : c.image.values()) v = static_cast<float>(u(rng));
  c.budget.epsilon_text = static_cast<int>(rng() % 5);
  c.budget.epsilon_image = u(rng) * 0.1;
  c.budget.pgd_steps = 1 + static_cast<int>(rng() % 6);
  c.budget.pgd_step_size = 0.001 + u(rng) * 0.05;
  c.budget.candidate_pool = 1 + rng() % 40;
  auto keyword = std::make_shared<KeywordDefense>(std::set<std::string>{"redword", "soil"});
  const double w = 1.0 / 3.0;
  auto pixel = std::make_shared<ChannelMeanDefense>(std::array<double, 3>{w, w, w}, 5.0 + 50.0 * u(rng),
                                                    0.3 + 0.4 * u(rng), "pixel", rng() % 2 == 0);
  switch (rng() % 4) {
    case 0: c.defense = keyword; break;
    case 1: c.defense = pixel; break;
    case 2: c.defense = std::make_shared<EitherDefense>(keyword, pixel); break;
    default: c.defense = std::make_shared<ConstantDefense>(u(rng)); break;
  }
  c.kind = static_cast<int>(rng() % 3);
  return c;
}

AttackResult run_case(const RandomAttackCase& c, std::mt19937_64& rng) {
  switch (c.kind) {
    case 0: return perturb_prompt(c.prompt, c.image, c.budget, *c.defense, rng());
    case 1: return perturb_image(c.image, c.budget, *c.defense, c.prompt, {rng() % 2 == 0, rng()});
    default:
      return joint_attack(c.prompt, c.image, c.budget, *c.defense, rng(), default_substitutions(), rng() % 2 == 0);
  }
}

std::string budget_violation(const RandomAttackCase& c, const AttackResult& r) {
  if (r.text_edits > c.budget.epsilon_text) return "text edits over budget";
  if (r.image_linf > c.budget.epsilon_image + kPixelTol) return "reported L-inf over budget";
  if (r.adversarial_image) {
    if (!r.adversarial_image->valid()) return "pixel outside [0,1]";
    if (linf(*r.adversarial_image, c.image) > c.budget.epsilon_image + kPixelTol) return "image L-inf over budget";
  }
  if (r.success && c.defense->flags(r.adversarial_prompt.value_or(c.prompt), r.adversarial_image.value_or(c.image))) {
    return "success claimed on a flagged pair";
  }
  return {};
}

}  // namespace nsfwguard::testing
