// poe: experiment runner for the product-of-experts reward-model pipeline.
//
//   poe gen-data  [--config FILE] [--out DIR] [--section.key=value ...]
//   poe train-rm  --mode vanilla|poe|poe_no_noise|bias_only [...]
//   poe run-ppo   (--paired | --kind vanilla|poe_main [--rm CKPT]) [...]
//   poe report    [RUN_DIR ...]
//   poe verify    [RUN_DIR ...]
//   poe sweep     ablation|sizes [--expert main|bias] [...]
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <iostream>

#include "CLI11.hpp"
#include "poe/expcli.hpp"

using namespace poe;
using namespace poe::exp;

namespace {

struct Common {
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config file");
  cmd->add_option("--out", c.out, "run directory (default: $" + std::string(kOutputRootEnv) + "/<id>)");
  cmd->allow_extras();
  cmd->footer("Any config field can be overridden as --section.key=value, e.g. --world.lambda_len=0.5");
}

// Config precedence: --config, else the run directory's config.ini (for
// commands after gen-data), else built-in defaults; overrides apply last.
std::pair<ExperimentConfig, fs::path> resolve(const Common& c, CLI::App* cmd, bool reuse_run_config) {
  const auto overrides = parse_overrides(cmd->remaining());
  auto apply = [&](ExperimentConfig cfg) {
    for (const auto& [k, v] : overrides) apply_override(cfg, k, v);
    return cfg;
  };
  ExperimentConfig cfg = apply(c.config.empty() ? ExperimentConfig::defaults() : load_config(c.config));
  fs::path run = c.out.empty() ? default_run_dir(cfg) : fs::path(c.out);
  if (reuse_run_config && c.config.empty() && fs::exists(run / "config.ini")) {
    cfg = apply(load_config(run / "config.ini"));
  }
  return {cfg, run};
}

void print(const CommandResult& r, const fs::path& run) {
  for (const auto& line : r.messages) std::cout << line << '\n';
  std::cout << "run directory: " << run.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Product-of-experts reward-model debiasing experiments"};
  app.require_subcommand(1);

  Common gen_c, rm_c, ppo_c, sweep_c;
  auto* gen = app.add_subcommand("gen-data", "generate the preference dataset and hidden-truth sidecar");
  add_common(gen, gen_c);

  auto* trm = app.add_subcommand("train-rm", "train a reward model on the run's dataset");
  add_common(trm, rm_c);
  std::string mode = "poe";
  trm->add_option("--mode", mode, "vanilla, poe, poe_no_noise or bias_only")->capture_default_str();

  auto* rppo = app.add_subcommand("run-ppo", "optimize a policy against a trained reward model");
  add_common(rppo, ppo_c);
  std::string rm_path, kind;
  bool paired = false;
  rppo->add_option("--rm", rm_path, "reward-model checkpoint (default: the run's own)");
  rppo->add_option("--kind", kind, "vanilla or poe_main");
  rppo->add_flag("--paired", paired, "run vanilla and poe_main with a shared seed and write a comparison");

  auto* rep = app.add_subcommand("report", "statistics, tables and SVG figures from recorded artifacts");
  std::vector<std::string> report_dirs;
  rep->add_option("runs", report_dirs, "run directories");

  auto* ver = app.add_subcommand("verify", "re-hash every artifact listed in the run's manifests");
  std::vector<std::string> verify_dirs;
  ver->add_option("runs", verify_dirs, "run directories");

  auto* swp = app.add_subcommand("sweep", "ablation grid over training modes, or expert-size sweep");
  add_common(swp, sweep_c);
  std::string sweep_kind;
  std::string expert = "bias";
  swp->add_option("kind", sweep_kind, "ablation or sizes")->required()->check(CLI::IsMember({"ablation", "sizes"}));
  swp->add_option("--expert", expert, "expert resized by the sizes sweep: main or bias")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  auto default_dirs = [](std::vector<std::string>& dirs) {
    if (dirs.empty()) dirs.push_back(default_run_dir(ExperimentConfig::defaults()).string());
  };

  try {
    if (gen->parsed()) {
      auto [cfg, run] = resolve(gen_c, gen, false);
      print(cmd_gen_data(cfg, run), run);
    } else if (trm->parsed()) {
      auto [cfg, run] = resolve(rm_c, trm, true);
      const train::Mode m = [&] {
        try {
          return train::mode_from_string(mode);
        } catch (const std::exception& e) {
          throw ValidationError(e.what());
        }
      }();
      print(cmd_train_rm(cfg, run, m), run);
    } else if (rppo->parsed()) {
      auto [cfg, run] = resolve(ppo_c, rppo, true);
      std::vector<PpoRequest> jobs;
      if (paired) {
        if (!kind.empty() || !rm_path.empty()) throw ValidationError("--paired cannot be combined with --kind or --rm");
        jobs = {{"", "vanilla"}, {"", "poe_main"}};
      } else {
        if (kind.empty()) throw ValidationError("run-ppo needs --kind (vanilla or poe_main) or --paired");
        jobs = {{rm_path, kind}};
      }
      print(cmd_run_ppo(cfg, run, jobs), run);
    } else if (rep->parsed()) {
      default_dirs(report_dirs);
      for (const auto& d : report_dirs) print(cmd_report(d), d);
    } else if (ver->parsed()) {
      default_dirs(verify_dirs);
      bool ok = true;
      for (const auto& d : verify_dirs) {
        const VerifyResult v = cmd_verify(d);
        for (const auto& p : v.problems) std::cerr << d << ": " << p << '\n';
        std::cout << d << ": " << v.checked << " artifacts checked, " << v.problems.size() << " problems\n";
        ok = ok && v.problems.empty();
      }
      if (!ok) return kExitRuntime;
    } else if (swp->parsed()) {
      auto [cfg, run] = resolve(sweep_c, swp, true);
      const SweepKind k = sweep_kind == "ablation" ? SweepKind::ablation : SweepKind::sizes;
      print(cmd_sweep(cfg, run, k, expert), run);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
