// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

#include "base64.hpp"
#include "fixture.hpp"
#include "nsfwguard/bench.hpp"
#include "nsfwguard/cli.hpp"
#include "nsfwguard/defense.hpp"
#include "nsfwguard/fusion.hpp"
#include "nsfwguard/gateway.hpp"

namespace {

using namespace nsfwguard;
namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

int failures = 0;

void criterion(const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (limit_s > 0 && secs >= limit_s) {
    o.pass = false;
    o.detail += fmt("; over the %.0f s limit", limit_s);
  }
  failures += !o.pass;
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << fmt(" (%.2f s): ", secs) << o.detail << std::endl;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 3.0);
  Matrix m(r, c);
  for (auto& v : m.values()) v = dist(rng);
  return m;
}

Outcome attention_correctness() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  bool nonneg = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t heads = 1 + rng() % 4;
    const std::size_t d = heads * (1 + rng() % 4);
    const Matrix text = random_matrix(1 + rng() % 8, d, rng);
    const Matrix image = random_matrix(1 + rng() % 8, d, rng);
    const auto out = cross_attention(text, image, AttentionParams::initialize(d, heads, rng()));
    for (const auto& a : out.attention) {
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto row = a.row(r);
        worst = std::max(worst, std::fabs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0));
        nonneg &= std::all_of(row.begin(), row.end(), [](double v) { return v >= 0.0; });
      }
    }
  }
  AttentionParams p = AttentionParams::zeros(2, 1);
  p.wq = p.wk = p.wv = Matrix::identity(2);
  const auto hand = cross_attention(Matrix{{1, 0}}, Matrix{{1, 0}, {0, 1}}, p);
  const double a0 = hand.attention[0](0, 0), a1 = hand.attention[0](0, 1);
  const bool pass = worst <= 1e-6 && nonneg && std::fabs(a0 - 0.6698) < 1e-4 && std::fabs(a1 - 0.3302) < 1e-4;
  return {pass, fmt("max |row sum - 1| = %.2e over 1000 instances; d=2 case [%.4f, %.4f]", worst, a0, a1)};
}

Outcome gradient_suite() {
  double fusion_worst = 0.0, model_worst = 0.0;
  std::string where;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto f = testing::gradcheck_fusion(seed);
    const auto m = testing::gradcheck_model(seed);
    if (f.worst > fusion_worst) fusion_worst = f.worst;
    if (m.worst > model_worst) {
      model_worst = m.worst;
      where = m.worst_tensor;
    }
  }
  return {fusion_worst < 1e-3 && model_worst < 1e-3,
          fmt("worst rel. err fusion %.2e, model %.2e", fusion_worst, model_worst) + " (" + where + "), 20 seeds"};
}

Outcome sentence_oracle() {
  std::vector<std::string> words;
  for (int i = 0; i < 10; ++i) words.push_back("w" + std::to_string(i));
  const Vocabulary vocab(words, {});
  std::size_t checked = 0, wrong = 0;
  for (std::uint32_t m = 1; m < (1u << 10); ++m) {
    std::vector<std::uint8_t> bits(10);
    std::string expected;
    for (std::size_t i = 0; i < 10; ++i) {
      bits[i] = (m >> i) & 1u;
      if (bits[i]) expected += (expected.empty() ? "" : " ") + words[i];
    }
    wrong += sample_sentence(vocab, {bits}) != expected;
    ++checked;
  }
  return {checked == 1023 && wrong == 0, std::to_string(checked) + " masks, " + std::to_string(wrong) + " mismatches"};
}

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<BenchRow> pipeline_rows;

Outcome pipeline_determinism(const fs::path& scratch) {
  std::vector<std::array<std::string, 3>> files;
  for (const char* tag : {"run1", "run2"}) {
    const auto root = scratch / tag;
    const auto data = (root / "data").string();
    const auto ckpt = (root / "model.ckpt").string();
    if (cli({"datagen", "--out", data, "--total", "200", "--seed", "11", "--concept-strength", "0.15"}) ||
        cli({"train", "--data", data, "--out", ckpt, "--seed", "11", "--split-seed", "11"}) ||
        cli({"bench", "--data", data, "--out", (root / "report").string(), "--ckpt", "model=" + ckpt,
             "--keyword", "--seed", "5", "--split-seed", "11"})) {
      return {false, std::string("pipeline command failed in ") + tag};
    }
    files.push_back({slurp(root / "data" / "manifest.txt"), slurp(ckpt), slurp(root / "report.csv")});
  }
  std::istringstream csv(files[0][2]);
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    BenchRow row;
    std::istringstream fields(line);
    std::string asr1, asr4, n;
    std::getline(fields, row.attack, ',');
    std::getline(fields, row.defense, ',');
    std::getline(fields, asr1, ',');
    std::getline(fields, asr4, ',');
    row.asr_1 = std::stod(asr1);
    row.asr_4 = std::stod(asr4);
    pipeline_rows.push_back(row);
  }
  const char* names[] = {"manifest", "checkpoint", "report"};
  std::string detail;
  bool pass = true;
  for (int i = 0; i < 3; ++i) {
    const bool same = files[0][i] == files[1][i];
    pass &= same;
    detail += std::string(i ? ", " : "") + names[i] + (same ? " identical" : " DIFFER") + " (" +
              std::to_string(files[0][i].size()) + " bytes)";
  }
  return {pass, detail};
}

struct Trained {
  testing::DeskFixture fixture;
  std::shared_ptr<const Model> model;
  std::vector<Example> nsfw_val;
};
std::unique_ptr<Trained> trained;

Outcome separable_fixture(const fs::path& scratch) {
  auto t = std::make_unique<Trained>();
  t->fixture = testing::build_fixture(scratch / "fixture");
  const auto config = testing::fixture_train_config();
  auto result = train_examples(t->fixture.train, t->fixture.val, config, testing::fixture_model_config());
  t->model = std::make_shared<const Model>(std::move(result.model));

  const auto report = evaluate_metrics(*t->model, t->fixture.val, config.threshold);
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& e : t->fixture.val) {
    const bool flagged = t->model->prob_nsfw(e.prompt, e.image) >= config.threshold;
    const bool nsfw = e.label == Label::kNsfw;
    tp += flagged && nsfw;
    fp += flagged && !nsfw;
    fn += !flagged && nsfw;
    tn += !flagged && !nsfw;
    if (nsfw) t->nsfw_val.push_back(e);
  }
  const double n = static_cast<double>(tp + fp + fn + tn);
  const double precision = tp + fp ? tp / double(tp + fp) : 0.0;
  const double recall = tp + fn ? tp / double(tp + fn) : 0.0;
  const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  const bool oracle = report.tp == tp && report.fp == fp && report.fn == fn && report.tn == tn &&
                      report.accuracy == (tp + tn) / n && report.precision == precision &&
                      report.recall == recall && report.f1 == f1;
  const bool pass = report.accuracy >= 0.95 && oracle && result.curve.size() <= 30;
  trained = std::move(t);
  return {pass, fmt("val accuracy %.4f after %.0f epochs (best epoch %.0f)", report.accuracy,
                    static_cast<double>(result.curve.size()), static_cast<double>(result.best_epoch)) +
                    ", confusion oracle " + (oracle ? "matches" : "MISMATCH") + " (tp " + std::to_string(tp) +
                    " fp " + std::to_string(fp) + " fn " + std::to_string(fn) + " tn " + std::to_string(tn) + ")"};
}

constexpr std::uint64_t kBenchSeed = 5;
std::vector<std::pair<double, double>> asr_pairs;  // (asr_1, asr_4) of every benchmark run

std::pair<double, double> asr_1_4(const std::vector<Example>& instances, AttackKind kind, const Defense& defense) {
  const auto first = first_success(instances, 4, kind, defense, PerturbationBudget{}, kBenchSeed);
  double a1 = 0, a4 = 0;
  for (auto f : first) {
    a1 += f < 1;
    a4 += f < 4;
  }
  const std::pair<double, double> r{100.0 * a1 / first.size(), 100.0 * a4 / first.size()};
  asr_pairs.push_back(r);
  return r;
}

Outcome directional_reproduction() {
  if (!trained) return {false, "fixture model unavailable"};
  const auto& t = *trained;
  const auto plain = std::make_shared<ModelDefense>(t.model, "model");
  const KeywordDefense keyword(placeholder_nsfw_vocabulary().as_set());

  const auto model_text = asr_1_4(t.nsfw_val, AttackKind::kText, *plain);
  const auto keyword_text = asr_1_4(t.nsfw_val, AttackKind::kText, keyword);
  const bool a = keyword_text.first - model_text.first >= 20.0 && keyword_text.second - model_text.second >= 20.0;

  // Perturbed samples make up 20% of the augmented dataset. They attack the
  // plain model and come from training-side NSFW samples only.
  std::vector<LabeledSample> pool;
  for (const auto& id : t.fixture.split.train_ids) {
    const auto* s = t.fixture.manifest.find(id);
    if (s->label == Label::kNsfw) pool.push_back(*s);
  }
  const std::size_t count = t.fixture.manifest.size() / 4;
  const auto perturbed = make_perturbed_samples(pool, t.fixture.root, count, *plain, PerturbationBudget{}, 99,
                                                Modality::kBoth);
  auto train_set = t.fixture.train;
  for (const auto& s : perturbed) train_set.push_back({s.id, s.prompt, read_image(t.fixture.root / s.image_ref), s.label});
  const auto tuned = train_examples(train_set, t.fixture.val, testing::fixture_train_config(),
                                    testing::fixture_model_config(), t.model.get());
  const ModelDefense adversarial(std::make_shared<const Model>(tuned.model), "model-adv");

  const auto plain_joint = asr_1_4(t.nsfw_val, AttackKind::kJoint, *plain);
  const auto adv_joint = asr_1_4(t.nsfw_val, AttackKind::kJoint, adversarial);
  const bool b = adv_joint.first < plain_joint.first;
  return {a && b,
          fmt("(a) text-greedy ASR-1/ASR-4 keyword %.2f/%.2f vs model %.2f/%.2f", keyword_text.first,
              keyword_text.second, model_text.first, model_text.second) +
              fmt("; (b) joint ASR-1 plain %.2f -> adversarial %.2f (ASR-4 %.2f -> %.2f)", plain_joint.first,
                  adv_joint.first, plain_joint.second, adv_joint.second) +
              ", " + std::to_string(perturbed.size()) + " perturbed samples, n=" +
              std::to_string(t.nsfw_val.size())};
}

Outcome asr_semantics() {
  std::size_t runs = 0, bad = 0;
  for (const auto& [a1, a4] : asr_pairs) {
    ++runs;
    bad += a4 < a1;
  }
  for (const auto& row : pipeline_rows) {
    ++runs;
    bad += row.asr_4 < row.asr_1;
  }
  std::mt19937_64 rng(7);
  std::size_t violations = 0;
  std::string first;
  for (int i = 0; i < 1000; ++i) {
    const auto c = testing::random_attack_case(rng);
    const auto why = testing::budget_violation(c, testing::run_case(c, rng));
    if (!why.empty() && violations++ == 0) first = why;
  }
  return {runs > 0 && bad == 0 && violations == 0,
          std::to_string(runs) + " benchmark runs with asr_4 < asr_1: " + std::to_string(bad) +
              "; budget violations in 1000 random attacks: " + std::to_string(violations) +
              (first.empty() ? "" : " (" + first + ")")};
}

Outcome gateway_contract() {
  if (!trained) return {false, "fixture model unavailable"};
  const auto& t = *trained;
  const ModerationService service(t.model);
  GatewayServer server(service, false);
  const int port = server.start("127.0.0.1", 0);

  std::vector<std::string> bodies;
  for (std::size_t i = 0; i < 32; ++i) {
    const auto& e = t.fixture.val[i % t.fixture.val.size()];
    bodies.push_back(json{{"mode", "PAIR"},
                          {"prompt", e.prompt},
                          {"image_b64", detail::base64_encode(encode_image_file(e.image))}}
                         .dump());
  }
  std::vector<double> serial;
  for (const auto& b : bodies) serial.push_back(json::parse(service.handle_http_check(b).body)["score"].get<double>());
  std::vector<std::future<double>> futures;
  for (const auto& b : bodies) {
    futures.push_back(std::async(std::launch::async, [&b, port] {
      httplib::Client client("127.0.0.1", port);
      auto res = client.Post("/v1/check", b, "application/json");
      if (!res || res->status != 200) return -1.0;
      return json::parse(res->body)["score"].get<double>();
    }));
  }
  std::size_t concurrent_mismatch = 0;
  for (std::size_t i = 0; i < futures.size(); ++i) concurrent_mismatch += futures[i].get() != serial[i];
  server.stop();

  std::size_t rejected = 0, accepted = 0;
  for (auto mode : {CheckMode::kPreGen, CheckMode::kPostGen, CheckMode::kPair}) {
    for (int fields = 1; fields < 4; ++fields) {
      ModerationRequest r{mode, std::nullopt, std::nullopt};
      if (fields & 1) r.prompt = "p";
      if (fields & 2) r.image_b64 = "aW1n";
      try {
        validate_request(r);
        ++accepted;
      } catch (const GatewayError& e) {
        rejected += e.status() == 400;
      }
    }
  }
  std::size_t image_mismatch = 0;
  for (const auto& e : t.fixture.val) {
    image_mismatch += service.check_image(e.image).score != service.check_pair("", e.image).score;
  }
  return {concurrent_mismatch == 0 && rejected == 6 && accepted == 3 && image_mismatch == 0,
          std::to_string(32 - concurrent_mismatch) + "/32 concurrent scores equal serial; " +
              std::to_string(rejected) + " of 6 invalid mode-field combinations rejected; check_image vs " +
              "check_pair(\"\") mismatches: " + std::to_string(image_mismatch) + "/" +
              std::to_string(t.fixture.val.size())};
}

Outcome ratio_check(const fs::path& scratch) {
  const auto out = scratch / "ratio";
  if (cli({"datagen", "--out", out.string(), "--total", "100", "--seed", "1"})) return {false, "datagen failed"};
  const auto c = load_manifest(out / "manifest.txt").composition();
  auto get = [&](Source s) { return c.count(s) ? c.at(s) : 0; };
  const std::size_t safe = get(Source::kSafeCorpus), gen = get(Source::kGenerated), prt = get(Source::kPerturbed);
  return {safe == 50 && gen == 48 && prt == 2 && get(Source::kScraped) == 0,
          "composition {" + std::to_string(safe) + " safe, " + std::to_string(gen) + " generated, " +
              std::to_string(prt) + " perturbed}"};
}

}  // namespace

int main() {
  testing::TempDir scratch("acceptance");
  criterion("attention-correctness", 5, attention_correctness);
  criterion("gradient-suite", 60, gradient_suite);
  criterion("sentence-oracle", 5, sentence_oracle);
  criterion("pipeline-determinism", 0, [&] { return pipeline_determinism(scratch.path()); });
  criterion("separable-fixture", 120, [&] { return separable_fixture(scratch.path()); });
  criterion("directional-reproduction", 600, directional_reproduction);
  criterion("asr-semantics", 0, asr_semantics);
  criterion("gateway-contract", 0, gateway_contract);
  criterion("ratio-check", 0, [&] { return ratio_check(scratch.path()); });
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
