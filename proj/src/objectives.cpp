#include "icudg/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "icudg/error.hpp"

namespace icudg {

std::string_view to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kErm: return "erm";
    case ObjectiveKind::kCoral: return "coral";
    case ObjectiveKind::kVrex: return "vrex";
    case ObjectiveKind::kFishr: return "fishr";
    case ObjectiveKind::kMldg: return "mldg";
    case ObjectiveKind::kGroupDro: return "groupdro";
  }
  return "erm";
}

ObjectiveKind objective_from_string(std::string_view name) {
  for (const auto k : all_objectives())
    if (to_string(k) == name) return k;
  throw ConfigError("", "unknown objective '" + std::string(name) +
                            "' (expected erm, coral, vrex, fishr, mldg or groupdro)");
}

std::vector<ObjectiveKind> all_objectives() {
  return {ObjectiveKind::kErm,  ObjectiveKind::kCoral, ObjectiveKind::kVrex,
          ObjectiveKind::kFishr, ObjectiveKind::kMldg, ObjectiveKind::kGroupDro};
}

void PenaltyConfig::validate() const {
  auto non_negative = [](double v, const char* key) {
    if (!(v >= 0.0)) throw ConfigError(std::string("objective.") + key, "must be >= 0");
  };
  non_negative(coral_gamma, "coral_gamma");
  non_negative(vrex_lambda, "vrex_lambda");
  non_negative(fishr_lambda, "fishr_lambda");
  non_negative(mldg_beta, "mldg_beta");
  if (!(fishr_ema >= 0.0 && fishr_ema <= 1.0)) {
    throw ConfigError("objective.fishr_ema", "must lie in [0, 1]");
  }
  if (!(groupdro_eta > 0.0)) throw ConfigError("objective.groupdro_eta", "must be > 0");
}

namespace objectives {

ad::Var weighted_bce(ad::Var logits, const Matrix& targets, const Matrix& weights) {
  if (!weights.same_shape(targets)) throw ShapeError("weighted_bce: weights/targets shape mismatch");
  ad::Tape& tape = *logits.tape();
  return ad::sum(ad::bce_with_logits(logits, targets) * tape.constant(weights));
}

DomainPass domain_pass(ad::Tape& tape, const Model& model, const BoundModel& bound,
                       const DomainBatch& batch, Mode mode, CounterRng* dropout_rng) {
  if (batch.rows.empty()) throw ShapeError("domain '" + batch.domain_id + "' batch has no labels");
  DomainPass pass;
  pass.out = forward(tape, model, bound, batch.inputs, batch.rows, mode, dropout_rng);
  pass.loss = weighted_bce(pass.out.logits, batch.targets, batch.weights);
  return pass;
}

ad::Var erm_loss(std::span<const ad::Var> domain_losses) {
  if (domain_losses.empty()) throw ShapeError("erm_loss: no domains");
  ad::Var total = domain_losses[0];
  for (std::size_t e = 1; e < domain_losses.size(); ++e) total = total + domain_losses[e];
  return ad::scale(total, 1.0 / static_cast<double>(domain_losses.size()));
}

ad::Var coral_penalty(std::span<const ad::Var> representations, bool squared_mean) {
  const std::size_t n = representations.size();
  if (n < 2) throw ShapeError("coral_penalty: needs at least two domains");
  std::vector<ad::Var> means, covs;
  for (const auto& z : representations) {
    if (z.rows() < 2) throw ShapeError("coral_penalty: each domain needs at least two samples");
    const ad::Var mu = ad::mean_rows(z);
    const ad::Var centered = z - mu;
    means.push_back(mu);
    covs.push_back(ad::scale(ad::matmul(ad::transpose(centered), centered),
                             1.0 / static_cast<double>(z.rows() - 1)));
  }
  std::optional<ad::Var> total;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const ad::Var mean_sq = ad::sum(ad::square(means[a] - means[b]));
      const ad::Var mean_term = squared_mean ? mean_sq : ad::sqrt(mean_sq);
      const ad::Var term = mean_term + ad::sum(ad::square(covs[a] - covs[b]));
      total = total ? *total + term : term;
    }
  }
  return *total;
}

ad::Var vrex_penalty(std::span<const ad::Var> domain_losses) {
  if (domain_losses.empty()) throw ShapeError("vrex_penalty: no domains");
  return ad::variance_rows(ad::concat_rows(domain_losses), 0);
}

ad::Var per_sample_classifier_gradients(ad::Var hidden, ad::Var logits, const Matrix& targets) {
  ad::Tape& tape = *hidden.tape();
  if (logits.cols() != 1 || logits.rows() != hidden.rows() || !targets.same_shape(logits.value())) {
    throw ShapeError("per_sample_classifier_gradients: inconsistent shapes");
  }
  const ad::Var residual = ad::sigmoid(logits) - tape.constant(targets);
  const ad::Var ones = tape.constant(Matrix(hidden.rows(), 1, 1.0));
  const ad::Var parts[] = {hidden, ones};
  return ad::concat_cols(parts) * residual;
}

ad::Var fishr_penalty(std::span<const ad::Var> per_sample_grads, const FishrState& state,
                      double ema, std::vector<ad::Var>* smoothed) {
  const std::size_t n = per_sample_grads.size();
  if (n == 0) throw ShapeError("fishr_penalty: no domains");
  const bool has_state = !state.ema.empty();
  if (has_state && state.ema.size() != n) throw ShapeError("fishr_penalty: state/domain mismatch");
  ad::Tape& tape = *per_sample_grads[0].tape();

  std::vector<ad::Var> v;
  for (std::size_t e = 0; e < n; ++e) {
    ad::Var var = ad::variance_rows(per_sample_grads[e], 1);
    if (has_state) {
      var = ad::scale(var, 1.0 - ema) + tape.constant(state.ema[e]) * ema;
    }
    v.push_back(var);
  }
  if (smoothed) *smoothed = v;
  ad::Var mean = v[0];
  for (std::size_t e = 1; e < n; ++e) mean = mean + v[e];
  mean = ad::scale(mean, 1.0 / static_cast<double>(n));
  ad::Var total = ad::sum(ad::square(v[0] - mean));
  for (std::size_t e = 1; e < n; ++e) total = total + ad::sum(ad::square(v[e] - mean));
  return ad::scale(total, 1.0 / static_cast<double>(n));
}

std::vector<double> groupdro_update(std::span<const double> q, std::span<const double> losses,
                                    double eta) {
  if (q.size() != losses.size() || q.empty()) throw ShapeError("groupdro_update: size mismatch");
  std::vector<double> logq(q.size());
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < q.size(); ++e) {
    logq[e] = std::log(q[e]) + eta * losses[e];
    hi = std::max(hi, logq[e]);
  }
  double z = 0.0;
  for (auto& l : logq) {
    l = std::exp(l - hi);
    z += l;
  }
  for (auto& l : logq) l /= z;
  return logq;
}

ad::Var groupdro_loss(std::span<const ad::Var> domain_losses, std::span<const double> q) {
  if (q.size() != domain_losses.size() || q.empty()) throw ShapeError("groupdro_loss: size mismatch");
  ad::Var total = ad::scale(domain_losses[0], q[0]);
  for (std::size_t e = 1; e < q.size(); ++e) total = total + ad::scale(domain_losses[e], q[e]);
  return total;
}

}  // namespace objectives

namespace {

CounterRng domain_stream(std::uint64_t seed, std::size_t domain, std::uint64_t pass) {
  return CounterRng(CounterRng::derive(seed, {pass, domain}));
}

std::vector<Matrix> collect_grads(const ad::Tape& tape, const BoundModel& bound) {
  std::vector<Matrix> out;
  out.reserve(bound.params.size());
  for (const auto& p : bound.params) out.push_back(tape.grad(p.id()));
  return out;
}

}  // namespace

Objective::Objective(ObjectiveKind kind, PenaltyConfig config, std::size_t n_domains)
    : kind_(kind), config_(config), n_domains_(n_domains) {
  config_.validate();
  if (n_domains == 0) throw ConfigError("", "an objective needs at least one training domain");
  if (kind == ObjectiveKind::kMldg && n_domains < 2) {
    throw ConfigError("objective.name", "MLDG needs at least two training domains");
  }
  q_.assign(n_domains, 1.0 / static_cast<double>(n_domains));
}

double Objective::effective_weight(std::size_t step) const {
  switch (kind_) {
    case ObjectiveKind::kCoral: return config_.coral_gamma;
    case ObjectiveKind::kVrex: return step < config_.vrex_warmup ? 0.0 : config_.vrex_lambda;
    case ObjectiveKind::kFishr: return step < config_.fishr_warmup ? 0.0 : config_.fishr_lambda;
    case ObjectiveKind::kMldg: return config_.mldg_beta;
    case ObjectiveKind::kGroupDro: return config_.groupdro_eta;
    case ObjectiveKind::kErm: return 0.0;
  }
  return 0.0;
}

Objective::Graph Objective::build(ad::Tape& tape, const Model& model, const BoundModel& bound,
                                  std::span<const DomainBatch> batches,
                                  const BuildOptions& options) const {
  if (kind_ == ObjectiveKind::kMldg) throw Error("MLDG has no single-loss graph; use step()");
  if (batches.size() != n_domains_) {
    throw ShapeError("objective expects " + std::to_string(n_domains_) + " domain batches, got " +
                     std::to_string(batches.size()));
  }
  Graph g;
  std::vector<objectives::DomainPass> passes;
  for (std::size_t e = 0; e < batches.size(); ++e) {
    CounterRng rng = domain_stream(options.dropout_seed, e, 0);
    passes.push_back(objectives::domain_pass(tape, model, bound, batches[e], options.mode, &rng));
    g.domain_losses.push_back(passes.back().loss);
  }
  g.erm = objectives::erm_loss(g.domain_losses);
  g.total = g.erm;
  const double weight = effective_weight(options.step);

  switch (kind_) {
    case ObjectiveKind::kErm:
    case ObjectiveKind::kMldg: break;
    case ObjectiveKind::kCoral: {
      if (weight == 0.0 || passes.size() < 2) break;
      std::vector<ad::Var> z;
      for (const auto& p : passes) z.push_back(p.out.z);
      g.penalty = objectives::coral_penalty(z, config_.coral_squared_mean);
      g.total = g.erm + ad::scale(*g.penalty, weight);
      break;
    }
    case ObjectiveKind::kVrex: {
      if (weight == 0.0) break;
      g.penalty = objectives::vrex_penalty(g.domain_losses);
      g.total = g.erm + ad::scale(*g.penalty, weight);
      break;
    }
    case ObjectiveKind::kFishr: {
      // The moving average advances during warm-up too, so the variance terms
      // are always built; they join the loss only once the weight is active.
      std::vector<ad::Var> grads;
      for (std::size_t e = 0; e < passes.size(); ++e) {
        grads.push_back(objectives::per_sample_classifier_gradients(
            passes[e].out.hidden, passes[e].out.logits, batches[e].targets));
      }
      const ad::Var penalty =
          objectives::fishr_penalty(grads, fishr_, config_.fishr_ema, &g.fishr_smoothed);
      g.penalty = penalty;
      if (weight != 0.0) g.total = g.erm + ad::scale(penalty, weight);
      break;
    }
    case ObjectiveKind::kGroupDro: {
      if (options.fixed_groupdro_q) {
        g.groupdro_q = *options.fixed_groupdro_q;
      } else {
        std::vector<double> losses;
        for (const auto& l : g.domain_losses) losses.push_back(l.item());
        g.groupdro_q = objectives::groupdro_update(q_, losses, config_.groupdro_eta);
      }
      g.total = objectives::groupdro_loss(g.domain_losses, g.groupdro_q);
      break;
    }
  }
  return g;
}

StepResult Objective::step(const Model& model, std::span<const DomainBatch> batches,
                           std::size_t step, double learning_rate, std::uint64_t dropout_seed) {
  if (kind_ == ObjectiveKind::kMldg) return mldg_step(model, batches, learning_rate, dropout_seed);

  ad::Tape tape;
  const BoundModel bound = bind(tape, model);
  BuildOptions options;
  options.step = step;
  options.mode = Mode::kTrain;
  options.dropout_seed = dropout_seed;
  const Graph g = build(tape, model, bound, batches, options);
  tape.backward(g.total);

  StepResult r;
  r.grads = collect_grads(tape, bound);
  r.loss = g.total.item();
  r.erm_loss = g.erm.item();
  r.penalty = g.penalty ? g.penalty->item() : 0.0;
  for (const auto& l : g.domain_losses) r.domain_losses.push_back(l.item());

  if (kind_ == ObjectiveKind::kFishr) {
    fishr_.ema.clear();
    for (const auto& v : g.fishr_smoothed) fishr_.ema.push_back(v.value());
  }
  if (kind_ == ObjectiveKind::kGroupDro) q_ = g.groupdro_q;
  return r;
}

StepResult Objective::mldg_step(const Model& model, std::span<const DomainBatch> batches,
                                double learning_rate, std::uint64_t dropout_seed) const {
  const std::size_t n = batches.size();
  if (n < 2) throw Error("MLDG needs at least two domains to split");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t n_test = std::min(config_.mldg_n_meta_test, n - 1);
  if (n_test > 0) {
    CounterRng rng(CounterRng::derive(dropout_seed, {CounterRng::hash("mldg-split")}));
    rng.shuffle(order);
  }
  std::vector<std::size_t> meta_test(order.begin(), order.begin() + static_cast<long>(n_test));
  std::vector<std::size_t> meta_train(order.begin() + static_cast<long>(n_test), order.end());
  std::sort(meta_train.begin(), meta_train.end());
  std::sort(meta_test.begin(), meta_test.end());
  return mldg_direction(model, batches, meta_train, meta_test, learning_rate, config_.mldg_beta,
                        dropout_seed);
}

StepResult mldg_direction(const Model& model, std::span<const DomainBatch> batches,
                          std::span<const std::size_t> meta_train,
                          std::span<const std::size_t> meta_test, double alpha, double beta,
                          std::uint64_t dropout_seed) {
  if (meta_train.empty()) throw Error("MLDG meta-train split is empty");
  StepResult r;
  r.domain_losses.assign(batches.size(), 0.0);

  auto split_loss = [&](ad::Tape& tape, const Model& m, const BoundModel& bound,
                        std::span<const std::size_t> split, std::uint64_t pass) {
    std::vector<ad::Var> losses;
    for (const auto e : split) {
      CounterRng rng = domain_stream(dropout_seed, e, pass);
      losses.push_back(
          objectives::domain_pass(tape, m, bound, batches[e], Mode::kTrain, &rng).loss);
      r.domain_losses[e] = losses.back().item();
    }
    return objectives::erm_loss(losses);
  };

  ad::Tape tape;
  const BoundModel bound = bind(tape, model);
  // Meta-train passes share ERM's dropout streams, so beta = 0 with every
  // domain in meta-train reproduces the ERM gradient exactly.
  const ad::Var train_loss = split_loss(tape, model, bound, meta_train, 0);
  tape.backward(train_loss);
  r.grads = collect_grads(tape, bound);
  r.erm_loss = train_loss.item();
  r.loss = r.erm_loss;
  if (meta_test.empty() || beta == 0.0) return r;

  Model inner = model;
  for (std::size_t i = 0; i < inner.parameters().size(); ++i) {
    auto& v = inner.parameters()[i].value;
    const auto& g = r.grads[i];
    for (std::size_t k = 0; k < v.size(); ++k) v[k] -= alpha * g[k];
  }
  ad::Tape tape2;
  const BoundModel bound2 = bind(tape2, inner);
  const ad::Var test_loss = split_loss(tape2, inner, bound2, meta_test, 1);
  tape2.backward(test_loss);
  for (std::size_t i = 0; i < r.grads.size(); ++i) {
    const Matrix& g2 = tape2.grad(bound2.params[i].id());
    for (std::size_t k = 0; k < g2.size(); ++k) r.grads[i][k] += beta * g2[k];
  }
  r.penalty = test_loss.item();
  r.loss = r.erm_loss + beta * r.penalty;
  return r;
}

}  // namespace icudg
