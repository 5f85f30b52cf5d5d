// Command-line front end: one subcommand per experiment kind, each
// driven by a JSON config with optional seed/replicate/thread overrides.
// Exit code 0 iff every acceptance check in the config passes.

#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "homog/harness.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
  int replicates = 0;
  int threads = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment configuration (JSON)")->required();
  cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", args.seed, "override base_seed")->each([&](const std::string&) {
    args.seed_set = true;
  });
  cmd->add_option("--replicates", args.replicates, "override replicate count");
  cmd->add_option("--threads", args.threads, "worker threads (0 = hardware)");
}

int run(homog::ExperimentKind kind, const CommonArgs& args) {
  homog::ExperimentConfig cfg = homog::load_config(args.config_path);
  cfg.kind = kind;
  if (args.seed_set) cfg.base_seed = args.seed;
  if (args.replicates > 0) cfg.replicates = args.replicates;
  if (args.threads >= 0) cfg.threads = args.threads;
  const std::string out = args.out_dir.empty() ? cfg.out_dir : args.out_dir;

  const homog::ExperimentRecord rec = homog::run_experiment(cfg);
  homog::emit_outputs(rec, cfg, out);

  for (const auto& c : rec.checks)
    std::printf("[%s] %-32s value=%.6g reference=%.6g tol=%.3g\n", c.pass ? "PASS" : "FAIL",
                c.name.c_str(), c.value, c.reference, c.tolerance);
  std::printf("%s: %s (outputs in %s)\n", homog::kind_name(cfg.kind).c_str(),
              rec.all_pass() ? "all checks passed" : "CHECKS FAILED", out.c_str());
  return rec.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale laboratory for space-time homogenization of parabolic equations"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    homog::ExperimentKind kind;
  };
  const Sub subs[] = {
      {"tensors", "correctors, effective tensors and limit covariance",
       homog::ExperimentKind::effective_tensors},
      {"converge", "fine vs homogenized convergence rates", homog::ExperimentKind::convergence},
      {"invariance", "rescaled integrated-fluctuation variance probe",
       homog::ExperimentKind::invariance},
      {"spde-var", "functional variance against the limit equation",
       homog::ExperimentKind::spde_variance},
      {"aronson", "Gaussian bounds on fundamental-solution probes",
       homog::ExperimentKind::aronson},
      {"malliavin", "uniform moment bound of the driver sensitivity",
       homog::ExperimentKind::malliavin},
      {"condition-s", "one-dimensional stability criterion check",
       homog::ExperimentKind::condition_s},
  };

  CommonArgs args[std::size(subs)];
  CLI::App* cmds[std::size(subs)];
  for (size_t i = 0; i < std::size(subs); ++i) {
    cmds[i] = app.add_subcommand(subs[i].name, subs[i].help);
    add_common(cmds[i], args[i]);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    for (size_t i = 0; i < std::size(subs); ++i)
      if (cmds[i]->parsed()) return run(subs[i].kind, args[i]);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
