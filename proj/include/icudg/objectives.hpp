#pragma once

// Training objectives over one minibatch per training domain: ERM, CORAL,
// V-REx, Fishr, first-order MLDG and GroupDRO.
//
// Graph builders are pure: they read optimiser-side state (Fishr moving
// averages, GroupDRO weights) but never modify it. Objective::step computes
// gradients and then commits the new state.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icudg/autodiff.hpp"
#include "icudg/networks.hpp"

namespace icudg {

enum class ObjectiveKind { kErm, kCoral, kVrex, kFishr, kMldg, kGroupDro };

std::string_view to_string(ObjectiveKind kind);
ObjectiveKind objective_from_string(std::string_view name);
std::vector<ObjectiveKind> all_objectives();

struct PenaltyConfig {
  double coral_gamma = 1000.0;
  /// Use the squared norm for the CORAL mean term instead of the plain norm.
  bool coral_squared_mean = false;
  double vrex_lambda = 1000.0;
  std::size_t vrex_warmup = 100;
  double fishr_lambda = 1000.0;
  std::size_t fishr_warmup = 100;
  double fishr_ema = 0.95;
  double mldg_beta = 1.0;
  /// Domains held out as meta-test each step (at most |E| - 1); 0 keeps every
  /// domain in meta-train.
  std::size_t mldg_n_meta_test = 2;
  double groupdro_eta = 0.01;

  /// Throws ConfigError when a weight is negative or eta is not positive.
  void validate() const;
};

/// Labelled rows of one domain's minibatch. `weights` sum to one so that
/// sum(weights * bce) is the domain loss: hours are averaged within each stay
/// and stays are averaged within the batch.
struct DomainBatch {
  std::string domain_id;
  SequenceBatch inputs;
  std::vector<std::size_t> rows;  // time-major row indices carrying a label
  Matrix targets;                 // rows.size() x 1
  Matrix weights;                 // rows.size() x 1
};

namespace objectives {

struct DomainPass {
  ad::Var loss;
  ForwardOutput out;
};

DomainPass domain_pass(ad::Tape& tape, const Model& model, const BoundModel& bound,
                       const DomainBatch& batch, Mode mode, CounterRng* dropout_rng);

/// sum(weights * bce_with_logits(logits, targets)).
ad::Var weighted_bce(ad::Var logits, const Matrix& targets, const Matrix& weights);

/// Mean of the per-domain losses.
ad::Var erm_loss(std::span<const ad::Var> domain_losses);

/// Sum over unordered domain pairs of |mu_A - mu_B| (or its square) plus the
/// squared Frobenius norm of the difference of unbiased covariances.
ad::Var coral_penalty(std::span<const ad::Var> representations, bool squared_mean);

/// Population variance of the per-domain losses.
ad::Var vrex_penalty(std::span<const ad::Var> domain_losses);

/// Rows (sigmoid(logit) - y) * [h, 1]: per-sample gradient of the BCE with
/// respect to the output layer weights followed by its bias.
ad::Var per_sample_classifier_gradients(ad::Var hidden, ad::Var logits, const Matrix& targets);

struct FishrState {
  /// Smoothed gradient variance per domain; empty before the first step.
  std::vector<Matrix> ema;
};

/// Per-domain unbiased variance of the per-sample gradients, smoothed as
/// ema * previous + (1 - ema) * current (the first step uses the current value),
/// penalised by the mean squared distance to the cross-domain mean.
/// `smoothed` receives the smoothed variances for committing the state.
ad::Var fishr_penalty(std::span<const ad::Var> per_sample_grads, const FishrState& state,
                      double ema, std::vector<ad::Var>* smoothed = nullptr);

/// q_e <- q_e exp(eta L_e), renormalised (computed in log space).
std::vector<double> groupdro_update(std::span<const double> q, std::span<const double> losses,
                                    double eta);

/// sum_e q_e L_e with q held constant.
ad::Var groupdro_loss(std::span<const ad::Var> domain_losses, std::span<const double> q);

}  // namespace objectives

struct StepResult {
  std::vector<Matrix> grads;  // parallel to Model::parameters()
  double loss = 0.0;
  double erm_loss = 0.0;
  double penalty = 0.0;
  std::vector<double> domain_losses;
};

struct BuildOptions {
  std::size_t step = 0;
  Mode mode = Mode::kTrain;
  std::uint64_t dropout_seed = 0;
  /// Use these GroupDRO weights as-is instead of updating the stored ones.
  const std::vector<double>* fixed_groupdro_q = nullptr;
};

class Objective {
 public:
  Objective(ObjectiveKind kind, PenaltyConfig config, std::size_t n_domains);

  ObjectiveKind kind() const { return kind_; }
  const PenaltyConfig& config() const { return config_; }
  std::size_t domain_count() const { return n_domains_; }

  /// Penalty weight in effect at an optimiser step (zero during warm-up).
  double effective_weight(std::size_t step) const;

  struct Graph {
    ad::Var total;
    ad::Var erm;
    std::optional<ad::Var> penalty;
    std::vector<ad::Var> domain_losses;
    std::vector<ad::Var> fishr_smoothed;
    std::vector<double> groupdro_q;
  };

  /// Objective graph for every kind except MLDG (whose update is not the
  /// gradient of a single loss).
  Graph build(ad::Tape& tape, const Model& model, const BoundModel& bound,
              std::span<const DomainBatch> batches, const BuildOptions& options) const;

  /// Update direction at the current parameters. Commits Fishr and GroupDRO
  /// state. `learning_rate` is the MLDG inner step size.
  StepResult step(const Model& model, std::span<const DomainBatch> batches, std::size_t step,
                  double learning_rate, std::uint64_t dropout_seed);

  const std::vector<double>& groupdro_q() const { return q_; }
  const objectives::FishrState& fishr_state() const { return fishr_; }

 private:
  StepResult mldg_step(const Model& model, std::span<const DomainBatch> batches,
                       double learning_rate, std::uint64_t dropout_seed) const;

  ObjectiveKind kind_;
  PenaltyConfig config_;
  std::size_t n_domains_;
  std::vector<double> q_;
  objectives::FishrState fishr_;
};

/// First-order MLDG direction grad L_S(theta) + beta * grad L_V(theta') with
/// theta' = theta - alpha * grad L_S(theta). An empty meta-test set yields grad L_S.
StepResult mldg_direction(const Model& model, std::span<const DomainBatch> batches,
                          std::span<const std::size_t> meta_train,
                          std::span<const std::size_t> meta_test, double alpha, double beta,
                          std::uint64_t dropout_seed);

}  // namespace icudg
