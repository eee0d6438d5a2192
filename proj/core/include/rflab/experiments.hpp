#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rflab/config.hpp"
#include "rflab/data.hpp"
#include "rflab/features.hpp"

namespace rflab {

enum class ExperimentKind {
  Equivalence,
  HockeyStick,
  ExpectationTerm,
  VarianceProfile,
  GaussianVarianceCheck,
  RidgePath,
  BudgetMatch,
  Underparam,
  Counterexample,
};

const char* experiment_name(ExperimentKind kind);
ExperimentKind experiment_from_name(const std::string& name);

struct DatasetSpec {
  enum class Kind { Synth, CalHousing } kind = Kind::Synth;
  std::string path;  // CalHousing CSV
  int n_train = 6;
  int n_test = 100;
  int dim = 1;               // Synth only
  double noise_sigma = 0.05; // Synth only
  bool normalize_target = false;
  std::uint64_t seed = 1;

  Dataset build() const;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Counterexample;
  DatasetSpec dataset;
  FeatureConfig features;
  int members = 1000;
  double lambda = 0.0;
  std::vector<double> lambda_grid;
  std::vector<int> d_values;
  std::vector<int> m_values;
  int eval_points = 100;          // prediction comparison points
  int grid_points = 101;          // variance-profile grid resolution
  std::int64_t kernel_samples = 10'000'000;  // empirical kernel MC samples
  int mc_draws = 200'000;         // transformed-kernel MC draws
  int replicates = 5;             // budget gap replicate seeds
  int bound_pairs = 50;           // random lambda pairs for the bound check
  std::uint64_t seed = 42;
  std::string out_path;

  void validate() const;
};

/// Baked-in parameter sets per experiment (the paper's desk-scale setups).
ExperimentConfig default_experiment_config(ExperimentKind kind);

/// Defaults overridden by any keys present in the config text.
ExperimentConfig experiment_config_from(ExperimentKind kind,
                                        const ConfigMap& overrides);

/// Columnar result with a provenance header; rows are preformatted cells so
/// a rerun of the same config reproduces the output byte for byte.
struct ResultTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::pair<std::string, std::string>> provenance;

  const std::string& provenance_value(const std::string& key) const;
  std::vector<double> column_as_double(const std::string& name) const;
};

ResultTable run_experiment(const ExperimentConfig& config);

/// Experiment-specific summary scalars as ordered key=value pairs.
std::vector<std::pair<std::string, std::string>> summarize(
    const ResultTable& table);

/// Write "# key = value" provenance lines, a header row, then CSV rows.
/// The write is atomic (temp file + rename).
void write_table_csv(const ResultTable& table, const std::string& path);

std::string format_double(double v);

}  // namespace rflab
