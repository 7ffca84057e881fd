#include "nsfwguard/cli.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <ostream>
#include <thread>

#include "base64.hpp"
#include "binary_io.hpp"
#include "nsfwguard/attacks.hpp"
#include "nsfwguard/bench.hpp"
#include "nsfwguard/datagen.hpp"
#include "nsfwguard/defense.hpp"
#include "nsfwguard/error.hpp"
#include "nsfwguard/gateway.hpp"
#include "nsfwguard/kernels.hpp"
#include "nsfwguard/trainer.hpp"

namespace nsfwguard {
namespace {

namespace fs = std::filesystem;

struct BudgetFlags {
  PerturbationBudget budget;

  void attach(CLI::App* cmd) {
    cmd->add_option("--eps-text", budget.epsilon_text, "character edits")->capture_default_str();
    cmd->add_option("--eps-image", budget.epsilon_image, "L-inf radius")->capture_default_str();
    cmd->add_option("--pgd-steps", budget.pgd_steps)->capture_default_str();
    cmd->add_option("--pgd-step", budget.pgd_step_size)->capture_default_str();
    cmd->add_option("--pool", budget.candidate_pool, "edits scored per greedy step")
        ->capture_default_str();
  }
};

struct ModelFlags {
  ModelConfig config;

  void attach(CLI::App* cmd) {
    cmd->add_option("--d", config.encoder.d, "embedding width")->capture_default_str();
    cmd->add_option("--heads", config.heads)->capture_default_str();
    cmd->add_option("--vocab-size", config.encoder.vocab_size)->capture_default_str();
    cmd->add_option("--max-len", config.encoder.max_len)->capture_default_str();
    cmd->add_option("--patch", config.encoder.patch)->capture_default_str();
    cmd->add_option("--image-size", config.image_size)->capture_default_str();
  }
};

std::shared_ptr<const Model> load_model(const fs::path& path) {
  return std::make_shared<const Model>(read_checkpoint(path));
}

Vocabulary nsfw_vocab_from(const std::string& path) {
  return path.empty() ? placeholder_nsfw_vocabulary() : load_vocabulary(path);
}

/// "name=path" or a bare path named after its stem.
std::shared_ptr<const Defense> model_defense_from(const std::string& spec, double threshold) {
  const auto eq = spec.find('=');
  std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
  std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
  return std::make_shared<ModelDefense>(load_model(path), name, threshold);
}

void print_composition(std::ostream& out, const Manifest& manifest) {
  out << "samples " << manifest.size();
  for (const auto& [source, n] : manifest.composition()) out << "  " << to_string(source) << " " << n;
  out << "\n";
}

std::vector<Example> split_side(const Manifest& manifest, const fs::path& root,
                                const std::vector<std::string>& ids) {
  return load_examples(manifest, ids, root);
}

std::atomic<bool> g_stop{false};
GatewayServer* g_server = nullptr;

extern "C" void on_signal(int) {
  g_stop = true;
  if (g_server) g_server->stop();
}

SourceRatios parse_ratios(const std::vector<std::string>& items) {
  SourceRatios ratios;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    const auto source = parse_source(item.substr(0, eq));
    if (eq == std::string::npos || !source) throw ConfigError("bad --ratios entry '" + item + "'");
    try {
      ratios[*source] = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad --ratios share '" + item + "'");
    }
  }
  return ratios;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal NSFW defense: dataset generation, training, attacks, benchmarks and a "
               "moderation gateway.",
               "nsfwguard"};
  app.require_subcommand(1);
  std::string simd = "auto";
  app.add_option("--simd", simd, "kernel backend: auto, scalar, avx2, neon")->capture_default_str();

  // datagen
  auto* datagen = app.add_subcommand("datagen", "generate a labelled multimodal dataset");
  DatagenConfig dg;
  std::string dg_out, dg_backend = "stub", dg_vocab, dg_safe_vocab, dg_scraped, dg_target;
  std::vector<std::string> dg_ratios;
  double dg_strength = 0.5;
  BudgetFlags dg_budget;
  datagen->add_option("--out", dg_out, "output directory")->required();
  datagen->add_option("--total", dg.total)->capture_default_str();
  datagen->add_option("--seed", dg.seed)->capture_default_str();
  datagen->add_option("--image-size", dg.image_size)->capture_default_str();
  datagen->add_option("--min-words", dg.min_words)->capture_default_str();
  datagen->add_option("--max-words", dg.max_words)->capture_default_str();
  datagen->add_option("--backend", dg_backend, "'stub' or an http:// base URL")
      ->capture_default_str();
  datagen->add_option("--concept-strength", dg_strength, "stub tint strength")
      ->capture_default_str();
  datagen->add_option("--vocab", dg_vocab, "NSFW vocabulary file (word<TAB>category)");
  datagen->add_option("--safe-vocab", dg_safe_vocab, "safe vocabulary file");
  datagen->add_option("--scraped", dg_scraped, "scraped prompts, one per line");
  datagen->add_option("--ratios", dg_ratios, "SOURCE=share list, e.g. SAFE_CORPUS=0.5,SCRAPED=0.5")
      ->delimiter(',');
  datagen->add_option("--target", dg_target, "checkpoint to perturb against (default: surrogate)");
  dg_budget.attach(datagen);

  // train
  auto* train_cmd = app.add_subcommand("train", "train the fusion classifier on a dataset");
  TrainConfig tc;
  ModelFlags tm;
  std::string tr_data, tr_out, tr_curve, tr_init;
  std::uint64_t split_seed = 0;
  train_cmd->add_option("--data", tr_data, "dataset directory (manifest.txt)")->required();
  train_cmd->add_option("--out", tr_out, "checkpoint path")->required();
  train_cmd->add_option("--epochs", tc.epochs)->capture_default_str();
  train_cmd->add_option("--batch", tc.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", tc.learning_rate)->capture_default_str();
  train_cmd->add_option("--seed", tc.seed)->capture_default_str();
  train_cmd->add_option("--split-seed", split_seed)->capture_default_str();
  train_cmd->add_option("--threshold", tc.threshold)->capture_default_str();
  train_cmd->add_option("--curve", tr_curve, "loss-curve CSV (default: <out>.curve.csv)");
  train_cmd->add_option("--init", tr_init, "checkpoint to fine-tune from");
  tm.attach(train_cmd);

  // attack
  auto* attack_cmd = app.add_subcommand("attack", "run one budgeted attack on a sample");
  std::string at_ckpt, at_prompt, at_image, at_kind = "joint", at_out;
  bool at_keyword = false;
  std::uint64_t at_seed = 0;
  BudgetFlags at_budget;
  attack_cmd->add_option("--ckpt", at_ckpt, "model checkpoint to attack");
  attack_cmd->add_flag("--keyword", at_keyword, "attack the keyword baseline instead");
  attack_cmd->add_option("--prompt", at_prompt)->required();
  attack_cmd->add_option("--image", at_image, "image tensor file")->required();
  attack_cmd->add_option("--kind", at_kind, "text-greedy, image-pgd or joint")->capture_default_str();
  attack_cmd->add_option("--seed", at_seed)->capture_default_str();
  attack_cmd->add_option("--out-image", at_out, "where to write the adversarial image");
  at_budget.attach(attack_cmd);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "ASR-1/ASR-4 benchmark over attacks x defenses");
  std::string be_data, be_out;
  std::vector<std::string> be_ckpts, be_attacks{"text-greedy", "image-pgd", "joint"};
  bool be_keyword = false, be_all = false;
  std::uint64_t be_seed = 0, be_split_seed = 0;
  double be_threshold = kDefaultThreshold;
  BenchOptions be_options;
  BudgetFlags be_budget;
  bench_cmd->add_option("--data", be_data, "dataset directory (manifest.txt)")->required();
  bench_cmd->add_option("--out", be_out, "report path stem (.csv and .txt)")->required();
  bench_cmd->add_option("--ckpt", be_ckpts, "model defense as path or name=path");
  bench_cmd->add_flag("--keyword", be_keyword, "include the prompt-only keyword baseline");
  bench_cmd->add_option("--attacks", be_attacks)->delimiter(',')->capture_default_str();
  bench_cmd->add_option("--seed", be_seed)->capture_default_str();
  bench_cmd->add_option("--split-seed", be_split_seed, "instances come from this split's validation side")
      ->capture_default_str();
  bench_cmd->add_flag("--all", be_all, "use every sample instead of the validation side");
  bench_cmd->add_option("--max-instances", be_options.max_instances)->capture_default_str();
  bench_cmd->add_option("--threshold", be_threshold)->capture_default_str();
  be_budget.attach(bench_cmd);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "run the moderation gateway over HTTP");
  GatewayOverrides so;
  std::string so_config;
  serve_cmd->add_option("--ckpt", so.ckpt);
  serve_cmd->add_option("--threshold", so.threshold);
  serve_cmd->add_option("--port", so.port);
  serve_cmd->add_option("--host", so.host);
  serve_cmd->add_option("--config", so_config, "key=value config file");

  // check
  auto* check_cmd = app.add_subcommand("check", "score one request offline");
  std::string ck_ckpt, ck_mode = "PAIR", ck_image;
  std::optional<std::string> ck_prompt;
  double ck_threshold = kDefaultThreshold;
  check_cmd->add_option("--ckpt", ck_ckpt)->required();
  check_cmd->add_option("--mode", ck_mode, "PRE_GEN, POST_GEN or PAIR")->capture_default_str();
  check_cmd->add_option("--prompt", ck_prompt);
  check_cmd->add_option("--image", ck_image, "image tensor file");
  check_cmd->add_option("--threshold", ck_threshold)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kExitUsage;
  }

  try {
    if (simd == "auto") kernels::select_auto();
    else if (simd == "scalar") kernels::select(kernels::Backend::kScalar);
    else if (simd == "avx2") kernels::select(kernels::Backend::kAvx2);
    else if (simd == "neon") kernels::select(kernels::Backend::kNeon);
    else throw ConfigError("unknown --simd backend " + simd);

    if (*datagen) {
      dg.budget = dg_budget.budget;
      if (!dg_ratios.empty()) dg.ratios = parse_ratios(dg_ratios);
      dg.budget.validate();
      const Vocabulary nsfw = nsfw_vocab_from(dg_vocab);
      const Vocabulary safe =
          dg_safe_vocab.empty() ? placeholder_safe_vocabulary() : load_vocabulary(dg_safe_vocab);
      if (!dg_scraped.empty()) {
        dg.scraped_prompts = read_scraped_prompts(dg_scraped);
        if (dg.ratios.find(Source::kScraped) == dg.ratios.end() && !dg.scraped_prompts.empty()) {
          out << "note: scraped prompts are only used when a SCRAPED ratio is configured\n";
        }
      }
      std::unique_ptr<GeneratorBackend> backend;
      if (dg_backend == "stub") {
        backend = std::make_unique<StubBackend>(dg.seed, default_palette(), dg_strength);
      } else if (dg_backend.starts_with("http://")) {
        backend = std::make_unique<HttpBackend>(dg_backend);
      } else {
        throw ConfigError("unknown backend " + dg_backend);
      }
      std::shared_ptr<const Defense> target =
          dg_target.empty() ? make_surrogate_defense(nsfw)
                            : std::make_shared<ModelDefense>(load_model(dg_target), "target");
      const Manifest manifest = run_datagen(dg, *backend, nsfw, safe, *target, dg_out);
      out << "wrote " << (fs::path(dg_out) / "manifest.txt").string() << "\n";
      print_composition(out, manifest);
      return kExitOk;
    }

    if (*train_cmd) {
      const fs::path root(tr_data);
      const Manifest manifest = load_manifest(root / "manifest.txt");
      const Split split = split_dataset(manifest, split_seed);
      std::shared_ptr<const Model> init;
      if (!tr_init.empty()) {
        init = load_model(tr_init);
        tm.config = init->config();
      }
      const TrainResult result = train(manifest, split, tc, tm.config, root, init.get());
      write_checkpoint(result.model, tr_out);
      const fs::path curve = tr_curve.empty() ? fs::path(tr_out + ".curve.csv") : fs::path(tr_curve);
      write_loss_curve(result.curve, curve);
      const auto val = load_examples(manifest, split.val_ids, root);
      out << "best epoch " << result.best_epoch << " of " << tc.epochs << "\n";
      out << "validation " << format_metrics(evaluate_metrics(result.model, val, tc.threshold))
          << "\n";
      out << "wrote " << tr_out << " (" << model_version(result.model) << ") and "
          << curve.string() << "\n";
      return kExitOk;
    }

    if (*attack_cmd) {
      at_budget.budget.validate();
      auto kind = parse_attack_kind(at_kind);
      if (!kind) throw ConfigError("unknown attack kind " + at_kind);
      std::shared_ptr<const Defense> defense;
      if (at_keyword) {
        defense = std::make_shared<KeywordDefense>(placeholder_nsfw_vocabulary().as_set());
      } else if (!at_ckpt.empty()) {
        defense = std::make_shared<ModelDefense>(load_model(at_ckpt), "model");
      } else {
        throw ConfigError("attack needs --ckpt or --keyword");
      }
      const Example ex{"cli", at_prompt, read_image(at_image), Label::kNsfw};
      const AttackResult r = run_attack(*kind, ex, at_budget.budget, *defense, at_seed, 0, 0);
      nlohmann::json j{{"success", r.success},
                       {"queries", r.queries},
                       {"delta_norm", r.delta_norm},
                       {"text_edits", r.text_edits},
                       {"image_linf", r.image_linf},
                       {"gradient_free", r.gradient_free}};
      if (r.adversarial_prompt) j["adversarial_prompt"] = *r.adversarial_prompt;
      if (r.adversarial_image && !at_out.empty()) {
        write_image(*r.adversarial_image, at_out);
        j["adversarial_image"] = at_out;
      }
      out << j.dump(2) << "\n";
      return kExitOk;
    }

    if (*bench_cmd) {
      be_budget.budget.validate();
      std::vector<AttackKind> attacks;
      for (const auto& a : be_attacks) {
        auto kind = parse_attack_kind(a);
        if (!kind) throw ConfigError("unknown attack kind " + a);
        attacks.push_back(*kind);
      }
      std::vector<std::shared_ptr<const Defense>> defenses;
      for (const auto& spec : be_ckpts) defenses.push_back(model_defense_from(spec, be_threshold));
      if (be_keyword) {
        defenses.push_back(std::make_shared<KeywordDefense>(placeholder_nsfw_vocabulary().as_set()));
      }
      if (defenses.empty()) throw ConfigError("bench needs at least one --ckpt or --keyword");
      const fs::path root(be_data);
      const Manifest manifest = load_manifest(root / "manifest.txt");
      std::vector<std::string> ids;
      if (be_all) {
        for (const auto& s : manifest.samples()) ids.push_back(s.id);
      } else {
        ids = split_dataset(manifest, be_split_seed).val_ids;
      }
      const auto examples = split_side(manifest, root, ids);
      const BenchReport report =
          run_benchmark(examples, defenses, attacks, be_budget.budget, be_seed, be_options);
      const fs::path csv = emit_report(report, be_out);
      out << format_report_table(report);
      out << "wrote " << csv.string() << "\n";
      return kExitOk;
    }

    if (*serve_cmd) {
      if (!so_config.empty()) so.config_file = so_config;
      const GatewayConfig config = resolve_gateway_config(so);
      ModerationService service(config.threshold);
      fs::file_time_type stamp{};
      if (!config.ckpt.empty()) {
        service.load(config.ckpt);
        stamp = fs::last_write_time(config.ckpt);
      } else {
        err << "warning: no checkpoint configured; /v1/check answers 503\n";
      }
      GatewayServer server(service);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const int port = server.start(config.host, config.port);
      out << "listening on " << config.host << ":" << port << " model "
          << (service.loaded() ? service.model_version() : "none") << "\n"
          << std::flush;
      while (!g_stop) {
        std::this_thread::sleep_for(std::chrono::milliseconds(500));
        if (config.ckpt.empty()) continue;
        std::error_code ec;
        const auto now = fs::last_write_time(config.ckpt, ec);
        if (ec || now == stamp) continue;
        try {
          service.load(config.ckpt);
          stamp = now;
          out << "reloaded " << service.model_version() << "\n" << std::flush;
        } catch (const Error& e) {
          err << "reload failed: " << e.what() << "\n";
        }
      }
      server.stop();
      g_server = nullptr;
      return kExitOk;
    }

    if (*check_cmd) {
      auto mode = parse_check_mode(ck_mode);
      if (!mode) throw ConfigError("unknown mode " + ck_mode);
      ModerationService service(load_model(ck_ckpt), ck_threshold);
      ModerationRequest req;
      req.mode = *mode;
      req.prompt = ck_prompt;
      if (!ck_image.empty()) req.image_b64 = detail::base64_encode(detail::read_file(ck_image));
      try {
        out << response_json(service.handle(req)) << "\n";
      } catch (const GatewayError& e) {
        err << "error: " << e.what() << "\n";
        return e.status() == 503 ? kExitIo : kExitValidation;
      }
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace nsfwguard
