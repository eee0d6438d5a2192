#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "rflab/errors.hpp"
#include "rflab/experiments.hpp"
#include "rflab/parallel.hpp"
#include "rflab/version.hpp"
#include "selftest.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
};

void add_common_flags(CLI::App* cmd, CommonFlags* flags) {
  cmd->add_option("--config", flags->config_path,
                  "Experiment config file (key = value with [section]s)");
  cmd->add_option("--out", flags->out_path, "Output CSV path");
  cmd->add_option("--seed", flags->seed, "Run seed (overrides the config file)")
      ->each([flags](const std::string&) { flags->seed_set = true; });
  cmd->add_option("--threads", flags->threads,
                  "Worker threads (default: available parallelism, or "
                  "RFLAB_THREADS)");
}

int run_experiment_command(rflab::ExperimentKind kind,
                           const CommonFlags& flags) {
  if (flags.threads > 0) rflab::set_thread_count(flags.threads);

  rflab::ExperimentConfig config;
  if (!flags.config_path.empty()) {
    const rflab::ConfigMap file = rflab::ConfigMap::parse_file(flags.config_path);
    config = rflab::experiment_config_from(kind, file);
  } else {
    config = rflab::default_experiment_config(kind);
  }
  if (flags.seed_set) config.seed = flags.seed;
  if (!flags.out_path.empty()) config.out_path = flags.out_path;

  const rflab::ResultTable table = rflab::run_experiment(config);
  const auto summary = rflab::summarize(table);

  std::string line;
  for (const auto& [k, v] : summary) {
    if (!line.empty()) line += ' ';
    line += k + "=" + v;
  }
  if (!config.out_path.empty()) line += " out=" + config.out_path;
  std::printf("%s\n", line.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rflab: random-feature regression ensembles and their "
               "limiting kernel regressors"};
  app.set_version_flag("--version", rflab::kVersion);
  app.require_subcommand(1);

  struct Sub {
    rflab::ExperimentKind kind;
    CLI::App* cmd;
    CommonFlags flags;
  };
  std::vector<Sub> subs;
  const std::pair<rflab::ExperimentKind, const char*> kinds[] = {
      {rflab::ExperimentKind::Equivalence,
       "Infinite-ensemble vs kernel regressor agreement"},
      {rflab::ExperimentKind::HockeyStick,
       "Ensemble-kernel difference across member widths"},
      {rflab::ExperimentKind::ExpectationTerm,
       "Whitened expectation-term sample means"},
      {rflab::ExperimentKind::VarianceProfile,
       "Member variance vs GP posterior variance over a grid"},
      {rflab::ExperimentKind::GaussianVarianceCheck,
       "Gaussian-feature variance formula check"},
      {rflab::ExperimentKind::RidgePath,
       "Ridge-path continuity and Lipschitz bound checks"},
      {rflab::ExperimentKind::BudgetMatch,
       "Budget-matched ensemble vs single model"},
      {rflab::ExperimentKind::Underparam,
       "Underparameterized transformed-kernel equivalence"},
      {rflab::ExperimentKind::Counterexample,
       "Exact variance counterexample values"},
  };
  subs.reserve(std::size(kinds));
  for (const auto& [kind, help] : kinds) {
    subs.push_back({kind, nullptr, {}});
    Sub& sub = subs.back();
    sub.cmd = app.add_subcommand(rflab::experiment_name(kind), help);
    add_common_flags(sub.cmd, &sub.flags);
  }

  CommonFlags selftest_flags;
  CLI::App* selftest =
      app.add_subcommand("selftest", "Run the fast invariant suite");
  selftest->add_option("--threads", selftest_flags.threads, "Worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (selftest->parsed()) {
      if (selftest_flags.threads > 0)
        rflab::set_thread_count(selftest_flags.threads);
      return rflab_cli::run_selftest() == 0 ? 0 : 1;
    }
    for (const Sub& sub : subs)
      if (sub.cmd->parsed()) return run_experiment_command(sub.kind, sub.flags);
    std::fprintf(stderr, "no subcommand selected\n");
    return 2;
  } catch (const rflab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const rflab::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
