#include <gtest/gtest.h>

#include <httplib.h>

#include <json.hpp>
#include <map>
#include <thread>

#include "base64.hpp"
#include "binary_io.hpp"
#include "fixture.hpp"
#include "nsfwguard/datagen.hpp"
#include "nsfwguard/error.hpp"

namespace nsfwguard {
namespace {

Vocabulary abc() { return Vocabulary({"alpha", "beta", "gamma"}, {}); }

std::string oracle_join(const std::vector<std::string>& words, const std::vector<std::uint8_t>& bits) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (!bits[i]) continue;
    out += out.empty() ? "" : " ";
    out += words[i];
  }
  return out;
}

TEST(SampleSentence, SelectsInVocabularyOrder) {
  EXPECT_EQ(sample_sentence(abc(), {{1, 0, 1}}), "alpha gamma");
  EXPECT_EQ(sample_sentence(abc(), {{1, 1, 1}}), "alpha beta gamma");
  EXPECT_THROW(sample_sentence(abc(), {{0, 0, 0}}), EmptySelection);
  EXPECT_THROW(sample_sentence(abc(), {{1, 0}}), ShapeError);
}

TEST(SampleSentence, MatchesFilterJoinOracleExhaustively) {
  for (std::size_t n = 1; n <= 10; ++n) {
    std::vector<std::string> words;
    for (std::size_t i = 0; i < n; ++i) words.push_back("w" + std::to_string(i));
    const Vocabulary vocab(words, {});
    for (std::uint32_t m = 1; m < (1u << n); ++m) {
      std::vector<std::uint8_t> bits(n);
      for (std::size_t i = 0; i < n; ++i) bits[i] = (m >> i) & 1u;
      ASSERT_EQ(sample_sentence(vocab, {bits}), oracle_join(words, bits)) << "n=" << n << " m=" << m;
    }
  }
}

TEST(RandomMask, FullAndSingleSelections) {
  const auto v = abc();
  EXPECT_EQ(random_mask(v, 3, 9).bits, (std::vector<std::uint8_t>{1, 1, 1}));
  EXPECT_EQ(random_mask(v, 1, 42).bits, random_mask(v, 1, 42).bits);
  EXPECT_THROW(random_mask(v, 0, 1), RangeError);
  EXPECT_THROW(random_mask(v, 4, 1), RangeError);
}

TEST(RandomMask, PairsAreUniform) {
  const Vocabulary v({"a", "b", "c", "d", "e"}, {});
  std::map<std::vector<std::uint8_t>, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto mask = random_mask(v, 2, static_cast<std::uint64_t>(i));
    EXPECT_EQ(std::count(mask.bits.begin(), mask.bits.end(), 1), 2);
    ++counts[mask.bits];
  }
  EXPECT_EQ(counts.size(), 10u);
  for (const auto& [mask, n] : counts) EXPECT_NEAR(n / double(draws), 0.1, 0.02);
}

TEST(Vocabulary, RejectsEmptyAndDuplicates) {
  EXPECT_THROW(Vocabulary({}, {}), ValidationError);
  EXPECT_THROW(Vocabulary({"a", "a"}, {}), ValidationError);
}

TEST(Vocabulary, PlaceholderCarriesCategoriesAndKeyword) {
  const auto& v = placeholder_nsfw_vocabulary();
  EXPECT_TRUE(v.as_set().count("redword"));
  EXPECT_FALSE(v.category("redword").empty());
}

TEST(Vocabulary, LoadsTabSeparatedFile) {
  testing::TempDir dir("vocab");
  detail::write_file(dir.path() / "v.txt", "# comment\nfoo\tcat1\nbar\tcat2\n\nbaz\n");
  const auto v = load_vocabulary(dir.path() / "v.txt");
  EXPECT_EQ(v.entries(), (std::vector<std::string>{"foo", "bar", "baz"}));
  EXPECT_EQ(v.category("bar"), "cat2");
  EXPECT_EQ(v.category("baz"), "");
}

TEST(SynthesizePrompt, StubTemplate) {
  const StubBackend stub;
  EXPECT_EQ(synthesize_prompt(stub, "alpha gamma"),
            "Description of image featuring alpha and gamma in a scene.");
  EXPECT_EQ(synthesize_prompt(stub, "x y"), synthesize_prompt(stub, "x y"));
  EXPECT_THROW(synthesize_prompt(stub, ""), PreconditionError);
}

TEST(GenerateImage, DeterministicInRangeAndPromptSensitive) {
  const StubBackend stub(3);
  const auto a1 = generate_image(stub, "a", 32);
  const auto a2 = generate_image(stub, "a", 32);
  const auto b = generate_image(stub, "b", 32);
  EXPECT_EQ(a1, a2);
  EXPECT_TRUE(a1.valid());
  EXPECT_EQ(a1.height(), 32u);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < a1.size(); ++i) differing += a1.values()[i] != b.values()[i];
  EXPECT_GE(differing, a1.size() / 100);
  EXPECT_THROW(generate_image(stub, "", 32), PreconditionError);
  EXPECT_THROW(generate_image(stub, "a", 4), RangeError);
}

TEST(GenerateImage, ConceptTintSeparatesWarmAndCool) {
  const StubBackend stub(0, default_palette(), 0.5);
  auto red_minus_blue = [](const ImageTensor& im) {
    double s = 0.0;
    for (std::size_t i = 0; i < im.size(); i += 3) s += im.values()[i] - im.values()[i + 2];
    return s / static_cast<double>(im.size() / 3);
  };
  const auto nsfw = placeholder_nsfw_vocabulary().entries().front();
  const auto safe = placeholder_safe_vocabulary().entries().front();
  EXPECT_GT(red_minus_blue(generate_image(stub, "featuring " + nsfw, 32)),
            red_minus_blue(generate_image(stub, "featuring " + safe, 32)));
}

TEST(Apportion, TableOneRatiosAtHundred) {
  const std::map<Source, std::size_t> expected{
      {Source::kSafeCorpus, 50}, {Source::kGenerated, 48}, {Source::kPerturbed, 2}};
  EXPECT_EQ(apportion(default_ratios(), 100), expected);
  const auto big = apportion(default_ratios(), 1000000);
  EXPECT_EQ(big.at(Source::kPerturbed), 20000u);
  EXPECT_THROW(apportion({{Source::kSafeCorpus, 0.7}}, 10), ValidationError);
}

std::vector<LabeledSample> samples(std::string prefix, std::size_t n, Source source, Label label) {
  std::vector<LabeledSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledSample s;
    s.id = prefix + std::to_string(i);
    s.prompt = "p";
    s.image_ref = s.id + ".img";
    s.label = label;
    s.source = source;
    if (source == Source::kPerturbed) s.perturbed_modality = Modality::kImage;
    out.push_back(s);
  }
  return out;
}

TEST(AssembleDataset, TableOneComposition) {
  const Manifest safe(samples("s", 60, Source::kSafeCorpus, Label::kSafe));
  const auto gen = samples("g", 60, Source::kGenerated, Label::kNsfw);
  const auto prt = samples("p", 5, Source::kPerturbed, Label::kNsfw);
  const Manifest m = assemble_dataset(safe, gen, prt, default_ratios(), 100);
  const Composition expected{{Source::kSafeCorpus, 50}, {Source::kGenerated, 48}, {Source::kPerturbed, 2}};
  EXPECT_EQ(m.composition(), expected);
}

TEST(AssembleDataset, SafeOnlyTruncatesSource) {
  const Manifest safe(samples("s", 12, Source::kSafeCorpus, Label::kSafe));
  const Manifest m = assemble_dataset(safe, {}, {}, {{Source::kSafeCorpus, 1.0}}, 10);
  ASSERT_EQ(m.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(m.samples()[i], safe.samples()[i]);
}

TEST(AssembleDataset, ShortSourceIsNamed) {
  const Manifest safe(samples("s", 10, Source::kSafeCorpus, Label::kSafe));
  const auto prt = samples("p", 3, Source::kPerturbed, Label::kNsfw);
  try {
    assemble_dataset(safe, {}, prt, {{Source::kSafeCorpus, 0.5}, {Source::kPerturbed, 0.5}}, 10);
    FAIL() << "expected CompositionError";
  } catch (const CompositionError& e) {
    EXPECT_EQ(e.source(), "PERTURBED");
  }
}

TEST(AssembleDataset, DuplicateIdsAcrossSourcesRejected) {
  const Manifest safe(samples("x", 5, Source::kSafeCorpus, Label::kSafe));
  const auto gen = samples("x", 5, Source::kGenerated, Label::kNsfw);
  EXPECT_THROW(assemble_dataset(safe, gen, {}, {{Source::kSafeCorpus, 0.5}, {Source::kGenerated, 0.5}}, 10),
               ValidationError);
}

TEST(RunDatagen, HundredSampleCompositionAndValidity) {
  testing::TempDir dir("datagen");
  DatagenConfig config;
  config.total = 100;
  config.seed = 1;
  const StubBackend stub(1, default_palette());
  const auto& nsfw = placeholder_nsfw_vocabulary();
  const auto surrogate = make_surrogate_defense(nsfw);
  const Manifest m =
      run_datagen(config, stub, nsfw, placeholder_safe_vocabulary(), *surrogate, dir.path());
  const Composition expected{{Source::kSafeCorpus, 50}, {Source::kGenerated, 48}, {Source::kPerturbed, 2}};
  EXPECT_EQ(m.composition(), expected);
  for (const auto& s : m.samples()) EXPECT_TRUE(validate_sample(s, dir.path()).empty()) << s.id;
  EXPECT_EQ(load_manifest(dir.path() / "manifest.txt"), m);
}

TEST(RunDatagen, StubPipelineIsByteDeterministic) {
  testing::TempDir a("det-a"), b("det-b");
  DatagenConfig config;
  config.total = 40;
  config.seed = 5;
  const StubBackend stub(5, default_palette());
  const auto& nsfw = placeholder_nsfw_vocabulary();
  const auto surrogate = make_surrogate_defense(nsfw);
  run_datagen(config, stub, nsfw, placeholder_safe_vocabulary(), *surrogate, a.path());
  run_datagen(config, stub, nsfw, placeholder_safe_vocabulary(), *surrogate, b.path());
  EXPECT_EQ(detail::read_file(a.path() / "manifest.txt"), detail::read_file(b.path() / "manifest.txt"));
  for (const auto& entry : std::filesystem::directory_iterator(a.path() / "images")) {
    EXPECT_EQ(detail::read_file(entry.path()),
              detail::read_file(b.path() / "images" / entry.path().filename()));
  }
}

TEST(RunDatagen, ScrapedPromptsImported) {
  testing::TempDir dir("scraped");
  detail::write_file(dir.path() / "scraped.txt", "first prompt\n\nsecond prompt\r\n");
  DatagenConfig config;
  config.total = 10;
  config.scraped_prompts = read_scraped_prompts(dir.path() / "scraped.txt");
  ASSERT_EQ(config.scraped_prompts, (std::vector<std::string>{"first prompt", "second prompt"}));
  config.ratios = {{Source::kSafeCorpus, 0.5}, {Source::kGenerated, 0.3}, {Source::kScraped, 0.2}};
  const StubBackend stub;
  const auto& nsfw = placeholder_nsfw_vocabulary();
  const Manifest m = run_datagen(config, stub, nsfw, placeholder_safe_vocabulary(),
                                 *make_surrogate_defense(nsfw), dir.path() / "out");
  EXPECT_EQ(m.composition().at(Source::kScraped), 2u);
  EXPECT_EQ(m.find("scr-00000")->prompt, "first prompt");
}

TEST(PerturbedSamples, RespectBudgetAndModality) {
  testing::TempDir dir("perturb");
  DatagenConfig config;
  config.total = 20;
  config.ratios = {{Source::kGenerated, 1.0}};
  const StubBackend stub(2, default_palette());
  const auto& nsfw = placeholder_nsfw_vocabulary();
  const auto surrogate = make_surrogate_defense(nsfw);
  const Manifest m = run_datagen(config, stub, nsfw, placeholder_safe_vocabulary(), *surrogate, dir.path());
  const PerturbationBudget budget;
  const auto out = make_perturbed_samples(m.samples(), dir.path(), 6, *surrogate, budget, 4);
  ASSERT_EQ(out.size(), 6u);
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].source, Source::kPerturbed);
    EXPECT_EQ(out[i].label, Label::kNsfw);
    EXPECT_EQ(out[i].perturbed_modality, i % 2 == 0 ? Modality::kText : Modality::kImage);
    EXPECT_TRUE(validate_sample(out[i], dir.path()).empty());
  }
}

class FakeGenerators {
 public:
  explicit FakeGenerators(bool broken) {
    server_.Post("/v1/llm", [broken](const httplib::Request& req, httplib::Response& res) {
      if (broken) {
        res.status = 500;
        return;
      }
      auto body = nlohmann::json::parse(req.body);
      res.set_content(nlohmann::json{{"text", "echo: " + body["prompt"].get<std::string>()}}.dump(),
                      "application/json");
    });
    server_.Post("/v1/t2i", [broken](const httplib::Request& req, httplib::Response& res) {
      auto body = nlohmann::json::parse(req.body);
      const std::size_t n = body["size"].get<std::size_t>();
      std::string payload = broken ? "not base64!" : detail::base64_encode(encode_image_file(ImageTensor(n, n, 0.25f)));
      res.set_content(nlohmann::json{{"image_b64", payload}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeGenerators() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

TEST(HttpBackend, TalksToJsonEndpoints) {
  FakeGenerators fake(false);
  const HttpBackend backend(fake.url());
  EXPECT_FALSE(backend.deterministic());
  EXPECT_EQ(synthesize_prompt(backend, "alpha"), "echo: Description of image alpha");
  const auto image = generate_image(backend, "p", 16);
  EXPECT_EQ(image, ImageTensor(16, 16, 0.25f));
}

TEST(HttpBackend, FailuresBecomeBackendErrors) {
  FakeGenerators fake(true);
  const HttpBackend backend(fake.url());
  try {
    synthesize_prompt(backend, "alpha");
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_EQ(e.backend(), backend.name());
  }
  EXPECT_THROW(generate_image(backend, "p", 16), BackendError);
  const HttpBackend nowhere("http://127.0.0.1:1");
  EXPECT_THROW(synthesize_prompt(nowhere, "alpha"), BackendError);
}

}  // namespace
}  // namespace nsfwguard
