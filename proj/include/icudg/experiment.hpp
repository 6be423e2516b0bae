#pragma once

// End-to-end pipeline: cohort selection, labelling, featurisation, the
// training matrix (single-source, pooled n-1, all, oracle) and evaluation.
// The in-memory functions are used directly by tests; the run_* stage
// functions persist their outputs under a run directory for the CLI.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "icudg/cohort.hpp"
#include "icudg/config.hpp"
#include "icudg/evaluation.hpp"
#include "icudg/featurizer.hpp"
#include "icudg/labels.hpp"
#include "icudg/training.hpp"

namespace icudg {

struct TaskSpec {
  Task task = Task::kMortality;
  labels::SepsisMode sepsis_mode = labels::SepsisMode::kAbxAndCulture;
  BinAggregation aggregation = BinAggregation::kMean;
  CohortRules rules;
};

struct CohortResult {
  std::vector<StayTimeline> stays;          // included stays, input order
  std::vector<labels::OnsetResult> onsets;  // parallel to stays
  ExclusionReport base;
  ExclusionReport task;
  std::size_t minors_dropped = 0;
  std::size_t implausible_removed = 0;
};

/// Drops minors, assembles and filters timelines, then applies the base and
/// task exclusions.
CohortResult build_cohort(std::vector<StayStatic> statics, std::vector<EventRecord> events,
                          const ConceptCatalog& catalog, const TaskSpec& spec);

std::vector<labels::LabelTrack> build_labels(const CohortResult& cohort, const TaskSpec& spec);

/// LOCF-imputed grid and per-hour labels (-1 = none) of one included stay.
struct PreparedStay {
  std::string stay_id;
  std::string domain_id;
  HourlyGrid grid;
  std::vector<std::int8_t> labels;
};

struct PreparedData {
  Task task = Task::kMortality;
  std::vector<std::string> domains;  // sorted
  std::vector<PreparedStay> stays;

  std::vector<StayRef> refs() const;
  void write(std::ostream& out) const;
  static PreparedData read(std::istream& in);
};

/// Grids span 24 h for mortality and the label track for hourly tasks.
PreparedData prepare_features(std::span<const StayTimeline> stays,
                              std::span<const labels::LabelTrack> tracks,
                              const ConceptCatalog& catalog, const TaskSpec& spec);

// ---- training matrix ----------------------------------------------------------

struct MatrixSpec {
  Task task = Task::kMortality;
  std::uint64_t seed = 0;
  std::vector<std::string> settings{"single", "pooled_n_minus_1", "all", "oracle"};
  std::vector<std::string> test_domains;  // empty: every domain
  std::vector<ObjectiveKind> objectives{ObjectiveKind::kErm};
  TrainConfig train;
  SearchConfig search;
  EvalConfig eval;
  std::size_t fold_limit = 0;
  std::size_t workers = 1;
};

MatrixSpec matrix_spec(const ExperimentConfig& config, std::size_t workers);

/// One trained model family: a setting, an objective and its training domains,
/// trained once per fold and evaluated on `eval_domains`.
struct JobGroup {
  std::string setting;
  ObjectiveKind objective = ObjectiveKind::kErm;
  std::vector<std::string> train_domains;
  std::vector<std::string> eval_domains;
  /// Groups with equal keys train identical models (oracle reuses single).
  std::string seed_key;

  /// Setting column of the results table ("pooled_n_minus_1:coral"; ERM has no suffix).
  std::string result_setting() const;
  std::string train_label() const;  // '+'-joined domains
};

std::vector<JobGroup> plan_groups(const std::vector<std::string>& domains, const MatrixSpec& spec);

struct FoldModel {
  std::size_t fold = 0;
  Model model;
  NormStats stats;
  std::vector<EpochRecord> history;
  std::vector<std::string> train_domains;  // as seen by the trainer ("pooled" when merged)
  double val_loss = 0.0;
  std::size_t best_epoch = 0;
};

struct GroupResult {
  JobGroup group;
  std::size_t chosen_draw = 0;
  std::vector<double> draw_scores;
  std::vector<FoldModel> folds;
};

/// Trains every (group, draw, fold) unit in parallel, then keeps, per group,
/// the draw with the lowest mean validation loss over folds.
std::vector<GroupResult> train_groups(const PreparedData& data, const SplitPlan& plan,
                                      const MatrixSpec& spec, const std::vector<JobGroup>& groups);

struct CalibrationRecord {
  std::string task, setting, train_domains, test_domain;
  std::size_t n_predictions = 0;
  std::vector<eval::CalibrationBin> raw;
  std::vector<eval::CalibrationBin> recalibrated;
};

struct MatrixResult {
  std::vector<eval::ResultRow> rows;
  std::vector<CalibrationRecord> calibration;
};

/// Test AUROC of every fold model on each evaluation domain; fold 0 also
/// yields calibration curves before and after isotonic recalibration fitted
/// on the model's validation predictions.
MatrixResult evaluate_groups(const PreparedData& data, const SplitPlan& plan,
                             const MatrixSpec& spec, const std::vector<GroupResult>& groups);

MatrixResult run_matrix(const PreparedData& data, const SplitPlan& plan, const MatrixSpec& spec);

void write_calibration_csv(std::ostream& out, const CalibrationRecord& record);

// ---- pipeline stages (CLI) ------------------------------------------------------

struct RunContext {
  ExperimentConfig config;
  std::string run_dir;
  std::size_t workers = 1;
};

/// Creates the run directory and writes the resolved config into it.
RunContext open_run(const ExperimentConfig& config, std::optional<std::size_t> workers_flag = {});

void run_synth(const RunContext& ctx);
void run_cohort(const RunContext& ctx);
void run_label(const RunContext& ctx);
void run_featurize(const RunContext& ctx);
void run_train(const RunContext& ctx);
void run_evaluate(const RunContext& ctx);
void run_reproduce(const RunContext& ctx);

}  // namespace icudg
