#pragma once

// Experiment configuration: one INI file with fixed sections. Every key is
// validated before any work starts; unknown sections or keys are rejected
// with their `section.key` path.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "icudg/cohort.hpp"
#include "icudg/featurizer.hpp"
#include "icudg/labels.hpp"
#include "icudg/objectives.hpp"
#include "icudg/synthgen.hpp"
#include "icudg/training.hpp"

namespace icudg {

enum class DataSource { kSynth, kFiles };

struct ProtocolConfig {
  /// Any of single, pooled_n_minus_1, all, oracle.
  std::vector<std::string> settings{"single", "pooled_n_minus_1", "all", "oracle"};
  /// Domains held out by pooled_n_minus_1 and oracle; empty means every domain.
  std::vector<std::string> test_domains;
  std::size_t folds = 5;
  double test_fraction = 0.2;
  /// Train only the first `fold_limit` folds (0 = all).
  std::size_t fold_limit = 0;
};

struct SearchConfig {
  /// Random draws per model; 0 trains the configured hyperparameters once.
  std::size_t draws = 0;
  SearchSpace space;
};

struct EvalConfig {
  std::size_t calibration_bins = 10;
  double winsor_q = 0.999;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  std::optional<std::size_t> workers;

  DataSource source = DataSource::kSynth;
  std::string statics_path;
  std::string events_path;
  std::string catalog_path;  // empty: built-in catalogue

  std::vector<DomainProfile> domains;

  Task task = Task::kMortality;
  labels::SepsisMode sepsis_mode = labels::SepsisMode::kAbxAndCulture;
  BinAggregation aggregation = BinAggregation::kMean;
  CohortRules cohort;

  ProtocolConfig protocol;
  TrainConfig train;  // objective field unused; see objectives
  std::vector<ObjectiveKind> objectives{ObjectiveKind::kErm};
  SearchConfig search;
  EvalConfig eval;
};

/// Parses INI text and applies `section.key=value` overrides (the section is
/// everything before the last dot, e.g. `domain.a.n_stays=10`).
ExperimentConfig parse_config(std::istream& in, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

/// Canonical INI text listing every setting; parse_config of it yields the
/// same configuration.
std::string resolved_config_text(const ExperimentConfig& config);

/// output_dir/run-<16 hex digits>, hashed from the resolved text without the
/// output directory and worker count.
std::string run_directory(const ExperimentConfig& config);

/// Worker count: the command-line flag, else ICUDG_WORKERS, else the config
/// value, else all cores.
std::size_t resolve_workers(const ExperimentConfig& config, std::optional<std::size_t> flag = {});

}  // namespace icudg
