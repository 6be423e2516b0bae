#include "icudg/training.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>
#include <sstream>

#include "icudg/error.hpp"
#include "icudg/events.hpp"

namespace icudg {

std::size_t Sample::labelled_hours() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](std::int8_t l) { return l >= 0; }));
}

std::string_view to_string(Pooling pooling) {
  return pooling == Pooling::kMerged ? "merged" : "per_domain";
}

Pooling pooling_from_string(std::string_view name) {
  if (name == "per_domain") return Pooling::kPerDomain;
  if (name == "merged") return Pooling::kMerged;
  throw ConfigError("", "unknown pooling '" + std::string(name) + "' (expected per_domain or merged)");
}

DomainBatch make_domain_batch(const std::string& domain_id,
                              std::span<const Sample* const> samples) {
  if (samples.empty()) throw ShapeError("make_domain_batch: no samples for '" + domain_id + "'");
  const std::size_t B = samples.size();
  std::size_t T = 0;
  const std::size_t P = samples[0]->x.cols();
  std::size_t labelled_stays = 0;
  for (const auto* s : samples) {
    if (s->x.cols() != P) throw ShapeError("make_domain_batch: inconsistent feature width");
    if (s->labels.size() != s->x.rows()) {
      throw ShapeError("make_domain_batch: stay '" + s->stay_id + "' has " +
                       std::to_string(s->labels.size()) + " labels for " +
                       std::to_string(s->x.rows()) + " hours");
    }
    T = std::max(T, s->x.rows());
    if (s->labelled_hours() > 0) ++labelled_stays;
  }
  DomainBatch batch;
  batch.domain_id = domain_id;
  batch.inputs.batch = B;
  batch.inputs.steps = T;
  batch.inputs.inputs = Matrix(T * B, P);
  std::vector<double> targets, weights;
  for (std::size_t b = 0; b < B; ++b) {
    const Sample& s = *samples[b];
    for (std::size_t t = 0; t < s.x.rows(); ++t) {
      std::copy_n(s.x.row(t).data(), P, batch.inputs.inputs.row(t * B + b).data());
    }
    const std::size_t n_lab = s.labelled_hours();
    for (std::size_t t = 0; t < s.labels.size(); ++t) {
      if (s.labels[t] < 0) continue;
      batch.rows.push_back(t * B + b);
      targets.push_back(s.labels[t] > 0 ? 1.0 : 0.0);
      weights.push_back(1.0 / (static_cast<double>(n_lab) * static_cast<double>(labelled_stays)));
    }
  }
  batch.targets = Matrix::column_vector(targets);
  batch.weights = Matrix::column_vector(weights);
  return batch;
}

void adam_step(std::vector<Parameter>& params, const std::vector<Matrix>& grads, AdamState& state,
               double learning_rate, double weight_decay) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: one gradient per parameter");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.rows(), p.value.cols());
      state.v.emplace_back(p.value.rows(), p.value.cols());
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& w = params[i].value;
    const Matrix& g = grads[i];
    if (!g.same_shape(w)) throw ShapeError("adam_step: gradient shape mismatch for " + params[i].name);
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] + weight_decay * w[k];
      m[k] = AdamState::kBeta1 * m[k] + (1.0 - AdamState::kBeta1) * gk;
      v[k] = AdamState::kBeta2 * v[k] + (1.0 - AdamState::kBeta2) * gk * gk;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= learning_rate * mhat / (std::sqrt(vhat) + AdamState::kEpsilon);
    }
  }
}

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (const double v : g.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (auto& v : g.values()) v *= s;
  }
  return norm;
}

bool EarlyStopping::update(std::size_t epoch, double val_loss) {
  if (val_loss < best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

namespace {

struct DomainCursor {
  std::vector<std::size_t> order;
  std::size_t next = 0;
  std::uint64_t passes = 0;
};

void reshuffle(DomainCursor& c, std::uint64_t seed, std::size_t domain) {
  std::iota(c.order.begin(), c.order.end(), 0);
  CounterRng rng(CounterRng::derive(seed, {CounterRng::hash("shuffle"), domain, c.passes++}));
  rng.shuffle(c.order);
  c.next = 0;
}

bool all_finite(const std::vector<Matrix>& grads) {
  for (const auto& g : grads)
    for (const double v : g.values())
      if (!std::isfinite(v)) return false;
  return true;
}

std::string describe_losses(const StepResult& r) {
  std::ostringstream os;
  for (std::size_t e = 0; e < r.domain_losses.size(); ++e) os << (e ? ", " : "") << r.domain_losses[e];
  return os.str();
}

}  // namespace

TrainResult train(const TrainConfig& config, std::span<const DomainData> train_domains,
                  std::span<const DomainData> val_domains) {
  if (train_domains.empty()) throw ConfigError("", "training needs at least one domain");
  if (val_domains.empty()) throw ConfigError("", "training needs validation data");
  for (const auto& d : train_domains)
    if (d.samples.empty()) throw DataError("training domain '" + d.domain_id + "' is empty");
  if (config.batch_size == 0) throw ConfigError("train.batch_size", "must be positive");

  std::vector<DomainData> domains(train_domains.begin(), train_domains.end());
  if (config.pooling == Pooling::kMerged && domains.size() > 1) {
    DomainData merged{"pooled", {}};
    for (const auto& d : domains) merged.samples.insert(merged.samples.end(), d.samples.begin(), d.samples.end());
    domains = {std::move(merged)};
  }

  ModelConfig mc = config.model;
  mc.seed = config.seed;
  TrainResult result;
  result.model = Model(mc);
  for (const auto& d : domains) result.train_domains.push_back(d.domain_id);

  Objective objective(config.objective, config.penalties, domains.size());
  AdamState adam;
  EarlyStopping stopper(config.patience);

  std::vector<DomainCursor> cursors(domains.size());
  std::size_t largest = 0;
  for (std::size_t e = 0; e < domains.size(); ++e) {
    cursors[e].order.resize(domains[e].samples.size());
    reshuffle(cursors[e], config.seed, e);
    largest = std::max(largest, domains[e].samples.size());
  }
  const std::size_t steps_per_epoch = (largest + config.batch_size - 1) / config.batch_size;
  std::vector<double> best_params = result.model.flatten();

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss.assign(domains.size(), 0.0);
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<DomainBatch> batches;
      batches.reserve(domains.size());
      for (std::size_t e = 0; e < domains.size(); ++e) {
        auto& c = cursors[e];
        const std::size_t take = std::min(config.batch_size, c.order.size());
        std::vector<const Sample*> picked;
        picked.reserve(take);
        for (std::size_t k = 0; k < take; ++k) {
          if (c.next == c.order.size()) reshuffle(c, config.seed, e);
          picked.push_back(domains[e].samples[c.order[c.next++]]);
        }
        batches.push_back(make_domain_batch(domains[e].domain_id, picked));
      }
      const std::uint64_t step_seed =
          CounterRng::derive(config.seed, {CounterRng::hash("step"), step});
      StepResult r = objective.step(result.model, batches, step, config.learning_rate, step_seed);
      if (!std::isfinite(r.loss) || !all_finite(r.grads)) {
        throw TrainingError("non-finite loss or gradient at step " + std::to_string(step) +
                            " (epoch " + std::to_string(epoch) + "); domain losses: " +
                            describe_losses(r));
      }
      if (config.clip_norm) clip_global_norm(r.grads, *config.clip_norm);
      adam_step(result.model.parameters(), r.grads, adam, config.learning_rate, config.weight_decay);
      for (std::size_t e = 0; e < domains.size(); ++e)
        record.train_loss[e] += r.domain_losses[e] / static_cast<double>(steps_per_epoch);
      ++step;
    }
    record.val_loss = validation_loss(result.model, val_domains);
    if (!std::isfinite(record.val_loss)) {
      throw TrainingError("non-finite validation loss after epoch " + std::to_string(epoch));
    }
    result.history.push_back(record);
    if (stopper.update(epoch, record.val_loss)) best_params = result.model.flatten();
    if (stopper.should_stop()) break;
  }
  result.model.unflatten(best_params);
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best_loss();
  result.steps = step;
  return result;
}

void write_history_csv(std::ostream& out, const TrainResult& result) {
  out << "epoch";
  for (const auto& d : result.train_domains) out << ",train_loss_" << d;
  out << ",val_loss\n";
  for (const auto& r : result.history) {
    out << r.epoch;
    for (const double l : r.train_loss) out << ',' << format_double(l);
    out << ',' << format_double(r.val_loss) << '\n';
  }
}

namespace {

struct ChunkOutput {
  DomainBatch batch;
  Matrix logits;
};

template <class Fn>
void for_each_chunk(const Model& model, std::span<const Sample* const> samples, std::size_t chunk,
                    Fn&& fn) {
  if (chunk == 0) chunk = samples.size();
  for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
    const auto part = samples.subspan(begin, std::min(chunk, samples.size() - begin));
    ChunkOutput out;
    out.batch = make_domain_batch("eval", part);
    if (out.batch.rows.empty()) {
      fn(part, out);
      continue;
    }
    ad::Tape tape;
    const BoundModel bound = bind(tape, model);
    out.logits = forward(tape, model, bound, out.batch.inputs, out.batch.rows, Mode::kEval).logits.value();
    fn(part, out);
  }
}

}  // namespace

double domain_loss(const Model& model, const DomainData& domain, std::size_t chunk) {
  std::size_t labelled = 0;
  for (const auto* s : domain.samples)
    if (s->labelled_hours() > 0) ++labelled;
  if (labelled == 0) throw DataError("domain '" + domain.domain_id + "' has no labelled stays");
  double total = 0.0;
  for_each_chunk(model, domain.samples, chunk,
                 [&](std::span<const Sample* const> part, const ChunkOutput& out) {
                   if (out.batch.rows.empty()) return;
                   std::size_t n = 0;
                   for (const auto* s : part)
                     if (s->labelled_hours() > 0) ++n;
                   double loss = 0.0;
                   for (std::size_t i = 0; i < out.batch.rows.size(); ++i) {
                     const double l = out.logits[i];
                     const double y = out.batch.targets[i];
                     const double bce =
                         std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
                     loss += out.batch.weights[i] * bce;
                   }
                   total += loss * static_cast<double>(n) / static_cast<double>(labelled);
                 });
  return total;
}

double validation_loss(const Model& model, std::span<const DomainData> domains, std::size_t chunk) {
  if (domains.empty()) throw ShapeError("validation_loss: no domains");
  double total = 0.0;
  for (const auto& d : domains) total += domain_loss(model, d, chunk);
  return total / static_cast<double>(domains.size());
}

std::vector<Prediction> predict(const Model& model, std::span<const Sample* const> samples,
                                std::size_t chunk) {
  std::vector<Prediction> out;
  for_each_chunk(model, samples, chunk,
                 [&](std::span<const Sample* const> part, const ChunkOutput& o) {
                   std::size_t i = 0;
                   for (const auto* s : part) {
                     for (std::size_t t = 0; t < s->labels.size(); ++t) {
                       if (s->labels[t] < 0) continue;
                       out.push_back({s->stay_id, t, predict_probability(o.logits[i]),
                                      s->labels[t] > 0 ? 1 : 0});
                       ++i;
                     }
                   }
                 });
  return out;
}

// ---- splits -------------------------------------------------------------------

const std::vector<std::string>& SplitPlan::test_ids(const std::string& domain) const {
  auto it = domains.find(domain);
  if (it == domains.end()) throw DataError("split plan has no domain '" + domain + "'");
  return it->second.test;
}

const std::vector<std::string>& SplitPlan::val_ids(const std::string& domain,
                                                   std::size_t fold) const {
  auto it = domains.find(domain);
  if (it == domains.end()) throw DataError("split plan has no domain '" + domain + "'");
  if (fold >= it->second.folds.size()) throw DataError("fold index out of range");
  return it->second.folds[fold];
}

std::vector<std::string> SplitPlan::train_ids(const std::string& domain, std::size_t fold) const {
  auto it = domains.find(domain);
  if (it == domains.end()) throw DataError("split plan has no domain '" + domain + "'");
  if (fold >= it->second.folds.size()) throw DataError("fold index out of range");
  std::vector<std::string> out;
  for (std::size_t k = 0; k < it->second.folds.size(); ++k)
    if (k != fold) out.insert(out.end(), it->second.folds[k].begin(), it->second.folds[k].end());
  return out;
}

std::size_t SplitPlan::fold_count() const {
  return domains.empty() ? 0 : domains.begin()->second.folds.size();
}

void SplitPlan::write_json(std::ostream& out) const {
  nlohmann::json j;
  j["seed"] = seed;
  for (const auto& [d, s] : domains) j["domains"][d] = {{"test", s.test}, {"folds", s.folds}};
  out << j.dump(1) << '\n';
}

SplitPlan SplitPlan::read_json(std::istream& in) {
  SplitPlan p;
  try {
    const auto j = nlohmann::json::parse(in);
    p.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [d, s] : j.at("domains").items()) {
      DomainSplit ds;
      ds.test = s.at("test").get<std::vector<std::string>>();
      ds.folds = s.at("folds").get<std::vector<std::vector<std::string>>>();
      p.domains.emplace(d, std::move(ds));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed split plan: ") + e.what());
  }
  return p;
}

SplitPlan make_splits(std::span<const StayRef> stays, std::uint64_t seed, std::size_t n_folds,
                      double test_fraction) {
  if (n_folds < 2) throw ConfigError("protocol.folds", "need at least two folds");
  std::map<std::string, std::vector<std::string>> by_domain;
  for (const auto& s : stays) by_domain[s.domain_id].push_back(s.stay_id);
  SplitPlan plan;
  plan.seed = seed;
  for (auto& [domain, ids] : by_domain) {
    CounterRng rng(CounterRng::derive(seed, {CounterRng::hash("split"), CounterRng::hash(domain)}));
    rng.shuffle(ids);
    const std::size_t n = ids.size();
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    if (n_test < 1 || n - n_test < n_folds) {
      throw DataError("domain '" + domain + "' has " + std::to_string(n) +
                      " stays, too few for a test split and " + std::to_string(n_folds) + " folds");
    }
    DomainSplit ds;
    ds.test.assign(ids.begin(), ids.begin() + static_cast<long>(n_test));
    const std::size_t rest = n - n_test;
    std::size_t begin = n_test;
    for (std::size_t k = 0; k < n_folds; ++k) {
      const std::size_t size = rest / n_folds + (k < rest % n_folds ? 1 : 0);
      ds.folds.emplace_back(ids.begin() + static_cast<long>(begin),
                            ids.begin() + static_cast<long>(begin + size));
      begin += size;
    }
    plan.domains.emplace(domain, std::move(ds));
  }
  return plan;
}

// ---- search -------------------------------------------------------------------

TrainConfig sample_config(const TrainConfig& base, const SearchSpace& space, CounterRng& rng) {
  TrainConfig c = base;
  auto choice = [&](auto const& options) { return options[rng.below(std::size(options))]; };
  if (space.model) {
    static constexpr double kWeightDecay[] = {0.0, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1e0};
    static constexpr double kDropout[] = {0.3, 0.4, 0.5, 0.6, 0.7};
    static constexpr std::size_t kBatch[] = {128, 256, 512};
    static constexpr std::size_t kHidden[] = {32, 64, 128};
    c.learning_rate = std::exp(rng.uniform(-10.0, -3.0));
    c.weight_decay = choice(kWeightDecay);
    c.model.dropout = choice(kDropout);
    c.batch_size = choice(kBatch);
    c.model.hidden_dim = choice(kHidden);
    c.model.layers = static_cast<std::size_t>(
        rng.integer(1, static_cast<std::int64_t>(std::max<std::size_t>(1, space.max_layers))));
  }
  if (space.objective) {
    auto& p = c.penalties;
    auto warmup = [&] { return static_cast<std::size_t>(std::floor(std::pow(10.0, rng.uniform(0.0, 3.0)))); };
    switch (c.objective) {
      case ObjectiveKind::kErm: break;
      case ObjectiveKind::kCoral: p.coral_gamma = std::pow(10.0, rng.uniform(2.0, 4.0)); break;
      case ObjectiveKind::kVrex:
        p.vrex_lambda = std::pow(10.0, rng.uniform(2.0, 4.0));
        p.vrex_warmup = warmup();
        break;
      case ObjectiveKind::kFishr:
        p.fishr_lambda = std::pow(10.0, rng.uniform(2.0, 4.0));
        p.fishr_warmup = warmup();
        break;
      case ObjectiveKind::kMldg: {
        static constexpr std::size_t kMetaTest[] = {1, 2};
        p.mldg_beta = std::pow(10.0, rng.uniform(-1.0, 1.0));
        p.mldg_n_meta_test = choice(kMetaTest);
        break;
      }
      case ObjectiveKind::kGroupDro: p.groupdro_eta = std::pow(10.0, rng.uniform(-3.0, -1.0)); break;
    }
  }
  return c;
}

std::vector<TrainConfig> draw_configs(const TrainConfig& base, const SearchSpace& space,
                                      std::size_t n_draws, std::uint64_t seed) {
  std::vector<TrainConfig> draws;
  for (std::size_t i = 0; i < n_draws; ++i) {
    CounterRng rng(CounterRng::derive(seed, {CounterRng::hash("search"), i}));
    draws.push_back(sample_config(base, space, rng));
  }
  return draws;
}

SearchResult random_search(const TrainConfig& base, const SearchSpace& space, std::size_t n_draws,
                           std::uint64_t seed,
                           const std::function<double(const TrainConfig&, std::size_t)>& score) {
  if (n_draws == 0) throw ConfigError("search.draws", "must be at least 1");
  SearchResult r;
  r.draws = draw_configs(base, space, n_draws, seed);
  r.scores.assign(n_draws, 0.0);
  for (std::size_t i = 0; i < n_draws; ++i) r.scores[i] = score(r.draws[i], i);
  for (std::size_t i = 1; i < n_draws; ++i)
    if (r.scores[i] < r.scores[r.best]) r.best = i;
  return r;
}

const Candidate& select_model_dg(std::span<const Candidate> candidates,
                                 const std::string& test_domain) {
  if (candidates.empty()) throw Error("model selection needs at least one candidate");
  for (const auto& c : candidates) {
    if (std::find(c.val_domains.begin(), c.val_domains.end(), test_domain) != c.val_domains.end()) {
      throw Error("model selection for test domain '" + test_domain +
                  "' must not use that domain's validation data");
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (candidates[i].val_loss < candidates[best].val_loss) best = i;
  return candidates[best];
}

}  // namespace icudg
