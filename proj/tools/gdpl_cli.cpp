#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "gdpl/checkpoint.hpp"
#include "gdpl/harness.hpp"
#include "gdpl/selfcheck.hpp"

using namespace gdpl;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::uint64_t seed = 0;
  std::size_t epochs = 10;
  std::size_t shots = 16;
  std::size_t depth = 3;
  std::string pattern = "[a,b,*,*]";
  bool no_lora = false;
  bool no_quat = false;
  std::string domain_encoder = "mae";
  std::string out = "runs/run";
  std::string pretrained;
  std::vector<std::size_t> domains{2, 3};
};

EpisodeConfig episode_config(const Options& o) {
  EpisodeConfig c;
  c.seed = o.seed;
  c.epochs = o.epochs;
  c.shots = o.shots;
  c.gdpl.depth = o.depth;
  c.gdpl.pattern = SlotPattern::parse(o.pattern);
  c.gdpl.use_lora = !o.no_lora;
  c.gdpl.use_quat = !o.no_quat;
  return c;
}

PretrainConfig pretrain_config(const Options& o) {
  PretrainConfig p;
  p.seed = o.seed;
  p.provenance = o.domain_encoder == "random" ? DomainProvenance::SeededRandom : DomainProvenance::MaeLite;
  return p;
}

/// Loads --pretrained, or pretrains and stores the result under `fallback`.
Backbone obtain_backbone(const Options& o, const fs::path& fallback) {
  if (!o.pretrained.empty()) return load_backbone(o.pretrained, EncoderConfig{});
  std::cerr << "no --pretrained checkpoints given; pretraining the base encoders\n";
  Backbone bb = pretrain_backbone(pretrain_config(o));
  save_backbone(fallback, bb);
  return bb;
}

void print_report(const EpisodeReport& r) {
  std::printf("acc_base  %.2f  (zero-shot %.2f)\n", r.acc_base, r.zero_shot_base);
  std::printf("acc_novel %.2f  (zero-shot %.2f)\n", r.acc_novel, r.zero_shot_novel);
  std::printf("hm        %.2f  (zero-shot %.2f)\n", r.hm, r.zero_shot_hm);
  if (!r.epochs.empty()) {
    std::printf("mean |cos| epoch 1 %.4f, final %.4f\n", r.epochs.size() > 1 ? r.epochs[1].mean_cos : r.epochs[0].mean_cos,
                r.epochs.back().mean_cos);
  }
}

int print_checks(const std::vector<CheckResult>& checks) {
  bool ok = true;
  for (const auto& c : checks) {
    std::printf("%-4s %-48s %.3e\n", c.pass() ? "ok" : "FAIL", c.name.c_str(), c.value);
    ok = ok && c.pass();
  }
  return ok ? 0 : 1;
}

/// Rebuilds the trained model of a run directory.
GdplModel restore(const Backbone& bb, const EpisodeConfig& cfg, const fs::path& run) {
  Rng scratch(0);
  GdplModel model = GdplModel::init(bb, cfg.gdpl, scratch);
  load_prompts(run / "checkpoints", model);
  return model;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain prompt learning on a toy dual encoder"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "Experiment seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--domain-encoder", o.domain_encoder, "Domain encoder: random or mae")
        ->check(CLI::IsMember({"random", "mae"}));
  };
  auto add_pretrained = [&](CLI::App* sub) {
    sub->add_option("--pretrained", o.pretrained, "Directory with vision/text/domain checkpoints");
  };

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain and store the frozen encoders");
  add_common(pretrain);

  auto* train = app.add_subcommand("train", "Run one base-to-novel episode");
  add_common(train);
  add_pretrained(train);
  train->add_option("--epochs", o.epochs, "Training epochs");
  train->add_option("--shots", o.shots, "Training images per base class")->check(CLI::PositiveNumber);
  train->add_option("--depth", o.depth, "Prompted layers k");
  train->add_option("--pattern", o.pattern, "Quaternion slot pattern, e.g. [a,b,*,*]");
  train->add_flag("--no-lora", o.no_lora, "Disable cross-modal LoRA");
  train->add_flag("--no-quat", o.no_quat, "Replace quaternion mixing by feature addition");

  auto* eval = app.add_subcommand("eval", "Re-evaluate a trained run directory (--out)");
  add_common(eval);
  add_pretrained(eval);

  auto* cross = app.add_subcommand("crosseval", "Evaluate a trained run on other shifted domains");
  add_common(cross);
  add_pretrained(cross);
  cross->add_option("--domains", o.domains, "Target domain ids");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of a micro model");
  grad->add_option("--seed", o.seed, "Seed");
  std::size_t micro_depth = 2;
  grad->add_option("--depth", micro_depth, "Encoder depth of the micro model")->check(CLI::Range(2, 6));

  auto* oracles = app.add_subcommand("oracles", "Quaternion, LoRA and rank oracles");
  oracles->add_option("--seed", o.seed, "Seed");

  auto* report = app.add_subcommand("report", "Summarize report.json of one or more run directories");
  std::vector<std::string> runs;
  report->add_option("runs", runs, "Run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*pretrain) {
      Backbone bb = pretrain_backbone(pretrain_config(o));
      save_backbone(o.out, bb);
      std::printf("saved %s-domain backbone to %s\n", to_string(bb.domain.provenance()).c_str(), o.out.c_str());
      return 0;
    }
    if (*train) {
      const EpisodeConfig cfg = episode_config(o);
      validate(cfg);
      validate(cfg.gdpl, EncoderConfig{}.depth);
      Backbone bb = obtain_backbone(o, fs::path(o.out) / "backbone");
      auto result = train_episode(bb, cfg);
      write_run(o.out, result);
      print_report(result.report);
      std::printf("wrote %s (%.1f s)\n", o.out.c_str(), result.report.seconds);
      return 0;
    }
    if (*eval || *cross) {
      const fs::path run = o.out;
      const EpisodeReport saved = read_report(run / "report.json");
      if (o.pretrained.empty() && fs::exists(run / "backbone" / "manifest.json")) o.pretrained = (run / "backbone").string();
      if (o.pretrained.empty()) throw CheckpointIoError("eval needs --pretrained or " + (run / "backbone").string());
      Backbone bb = load_backbone(o.pretrained, EncoderConfig{});
      GdplModel model = restore(bb, saved.config, run);
      if (*eval) {
        const EpisodeData data = make_episode_data(bb, saved.config);
        const auto& s = data.split;
        const double base = evaluate(model, data.images, data.dataset.labels, s.base_test, s.base_classes,
                                     saved.config.batch_eval);
        const double novel = evaluate(model, data.images, data.dataset.labels, s.novel_test, s.novel_classes,
                                      saved.config.batch_eval);
        std::printf("acc_base %.2f  acc_novel %.2f  hm %.2f\n", base, novel, base + novel > 0 ? harmonic_mean(base, novel) : 0.0);
        return 0;
      }
      std::vector<SyntheticDataset> targets;
      for (std::size_t d : o.domains) {
        DatasetConfig dc;
        dc.seed = derive_seed(saved.config.seed, 50 + d);
        dc.n_classes = saved.config.n_base + saved.config.n_novel;
        dc.first_class = saved.config.first_class;
        dc.per_class = saved.config.shots + saved.config.test_per_class;
        dc.domain_id = d;
        targets.push_back(generate_dataset(dc));
      }
      auto res = cross_dataset_eval(model, targets, saved.config);
      for (std::size_t i = 0; i < targets.size(); ++i) {
        std::printf("domain %zu  gdpl %.2f  zero-shot %.2f\n", o.domains[i], res.gdpl[i], res.zero_shot[i]);
      }
      return 0;
    }
    if (*grad) {
      auto checks = gradient_checks(o.seed, micro_depth);
      double worst = 0.0;
      for (const auto& c : checks) worst = std::max(worst, c.value);
      const int code = print_checks(checks);
      std::printf("max relative error %.3e\n", worst);
      return code;
    }
    if (*oracles) return print_checks(oracle_checks(o.seed));
    if (*report) {
      std::vector<EpisodeReport> reports;
      for (const auto& r : runs) {
        reports.push_back(read_report(fs::path(r) / "report.json"));
        std::printf("%s\n", r.c_str());
        print_report(reports.back());
      }
      if (reports.size() > 1) {
        const auto s = summarize(reports);
        std::printf("mean acc_base %.2f  mean acc_novel %.2f\n", s.mean_acc_base, s.mean_acc_novel);
        std::printf("mean of HM %.2f  HM of means %.2f\n", s.mean_of_hm, s.hm_of_means);
      }
      return 0;
    }
  } catch (const CheckpointIoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const CheckpointMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n' << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
