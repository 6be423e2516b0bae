#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icudg/networks.hpp"
#include "icudg/objectives.hpp"

namespace icudg {

/// One stay ready for the model: a T x P feature tensor and per-hour labels
/// (-1 where the hour carries no label).
struct Sample {
  std::string stay_id;
  std::string domain_id;
  Matrix x;
  std::vector<std::int8_t> labels;

  std::size_t labelled_hours() const;
};

struct DomainData {
  std::string domain_id;
  std::vector<const Sample*> samples;
};

/// How several training domains are presented to the objective.
enum class Pooling {
  kPerDomain,  // one minibatch per domain each step, domains weighted equally
  kMerged,     // domains concatenated into one, weighted by size
};

std::string_view to_string(Pooling pooling);
Pooling pooling_from_string(std::string_view name);

struct TrainConfig {
  ModelConfig model{104, 64, 1, 0.5, 0};
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 1000;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  ObjectiveKind objective = ObjectiveKind::kErm;
  PenaltyConfig penalties;
  Pooling pooling = Pooling::kPerDomain;
  /// Global gradient-norm clip; disabled when empty.
  std::optional<double> clip_norm = 10.0;
};

/// Zero-padded time-major batch over `samples` with per-stay averaged weights.
DomainBatch make_domain_batch(const std::string& domain_id,
                              std::span<const Sample* const> samples);

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<Matrix> m, v;
  std::size_t t = 0;
};

/// Adam with bias correction; weight decay enters as grad + wd * theta.
void adam_step(std::vector<Parameter>& params, const std::vector<Matrix>& grads, AdamState& state,
               double learning_rate, double weight_decay);

/// Rescales `grads` so their global L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_global_norm(std::vector<Matrix>& grads, double max_norm);

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Records the validation loss of an epoch; true if it is a strict improvement.
  bool update(std::size_t epoch, double val_loss);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t since_best_ = 0;
  std::size_t best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;               // 1-based
  std::vector<double> train_loss;      // mean per training domain
  double val_loss = 0.0;
};

struct TrainResult {
  Model model;  // parameters of the best validation epoch
  std::vector<std::string> train_domains;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t steps = 0;
};

/// Trains with early stopping on the mean validation loss of `val_domains`.
/// Throws TrainingError on a non-finite loss or gradient.
TrainResult train(const TrainConfig& config, std::span<const DomainData> train_domains,
                  std::span<const DomainData> val_domains);

void write_history_csv(std::ostream& out, const TrainResult& result);

/// Loss of a domain in eval mode: BCE averaged over hours within each stay,
/// then over stays.
double domain_loss(const Model& model, const DomainData& domain, std::size_t chunk = 256);
/// Mean of domain_loss over domains.
double validation_loss(const Model& model, std::span<const DomainData> domains,
                       std::size_t chunk = 256);

struct Prediction {
  std::string stay_id;
  std::size_t hour = 0;
  double probability = 0.0;
  int label = 0;
};

/// Probabilities for every labelled hour, in sample order then hour order.
std::vector<Prediction> predict(const Model& model, std::span<const Sample* const> samples,
                                std::size_t chunk = 256);

// ---- data splits --------------------------------------------------------------

struct StayRef {
  std::string stay_id;
  std::string domain_id;
};

struct DomainSplit {
  std::vector<std::string> test;
  std::vector<std::vector<std::string>> folds;
};

struct SplitPlan {
  std::uint64_t seed = 0;
  std::map<std::string, DomainSplit> domains;

  const std::vector<std::string>& test_ids(const std::string& domain) const;
  const std::vector<std::string>& val_ids(const std::string& domain, std::size_t fold) const;
  std::vector<std::string> train_ids(const std::string& domain, std::size_t fold) const;
  std::size_t fold_count() const;

  void write_json(std::ostream& out) const;
  static SplitPlan read_json(std::istream& in);
};

/// Per domain: 20% test, then `n_folds` folds over the rest (each fold in turn
/// is the validation split). Throws DataError when a domain is too small.
SplitPlan make_splits(std::span<const StayRef> stays, std::uint64_t seed, std::size_t n_folds = 5,
                      double test_fraction = 0.2);

// ---- hyperparameter search ------------------------------------------------------

struct SearchSpace {
  bool model = true;      // learning rate, weight decay, dropout, batch size, width, depth
  bool objective = true;  // penalty hyperparameters of the configured objective
  std::size_t max_layers = 10;
};

/// One random draw around `base` (values not searched are kept).
TrainConfig sample_config(const TrainConfig& base, const SearchSpace& space, CounterRng& rng);

/// Draw i comes from the stream derive(seed, {hash("search"), i}).
std::vector<TrainConfig> draw_configs(const TrainConfig& base, const SearchSpace& space,
                                      std::size_t n_draws, std::uint64_t seed);

struct SearchResult {
  std::vector<TrainConfig> draws;
  std::vector<double> scores;  // mean validation loss across folds
  std::size_t best = 0;
};

/// Scores the configurations of draw_configs with `score` (lower is better);
/// ties keep the earlier draw.
SearchResult random_search(const TrainConfig& base, const SearchSpace& space, std::size_t n_draws,
                           std::uint64_t seed,
                           const std::function<double(const TrainConfig&, std::size_t)>& score);

struct Candidate {
  TrainConfig config;
  double val_loss = 0.0;
  std::vector<std::string> val_domains;
};

/// Training-domain validation: the candidate with the lowest validation loss.
/// Throws if any candidate was validated on the test domain.
const Candidate& select_model_dg(std::span<const Candidate> candidates,
                                 const std::string& test_domain);

}  // namespace icudg
