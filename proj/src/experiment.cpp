#include "icudg/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "icudg/error.hpp"
#include "icudg/rng.hpp"
#include "icudg/synthgen.hpp"

namespace icudg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void log(const std::string& msg) { std::cerr << msg << '\n'; }

/// Runs fn(i) for i in [0, n) on `workers` threads; rethrows the first failure.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  std::exception_ptr failure;
  std::mutex m;
#pragma omp parallel for schedule(dynamic, 1) num_threads(static_cast<int>(std::max<std::size_t>(workers, 1)))
  for (std::size_t i = 0; i < n; ++i) {
    {
      std::lock_guard lock(m);
      if (failure) continue;
    }
    try {
      fn(i);
    } catch (...) {
      std::lock_guard lock(m);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

template <class T>
std::vector<T> take(std::vector<T>& from, std::span<const std::size_t> indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (const auto i : indices) out.push_back(std::move(from[i]));
  return out;
}

std::vector<StayTimeline> assemble_filtered(std::vector<StayStatic> statics,
                                            std::vector<EventRecord> events,
                                            const ConceptCatalog& catalog,
                                            std::size_t* minors, std::size_t* implausible) {
  const std::size_t dropped = drop_minors(statics);
  if (minors) *minors = dropped;
  // Events of dropped minors would be orphans.
  std::unordered_set<std::string> ids;
  for (const auto& s : statics) ids.insert(s.stay_id);
  if (dropped > 0) std::erase_if(events, [&](const EventRecord& e) { return !ids.count(e.stay_id); });
  auto stays = assemble_stays(std::move(statics), std::move(events));
  std::vector<std::size_t> removed(stays.size(), 0);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::size_t i = 0; i < stays.size(); ++i) {
    auto [t, k] = apply_plausibility_filter(std::move(stays[i]), catalog);
    stays[i] = std::move(t);
    removed[i] = k;
  }
  if (implausible) {
    *implausible = 0;
    for (const auto k : removed) *implausible += k;
  }
  return stays;
}

PreparedStay prepare_one(const StayTimeline& stay, const ConceptCatalog& catalog,
                         const TaskSpec& spec, std::size_t hours,
                         const std::vector<std::pair<std::size_t, int>>& labels) {
  PreparedStay p;
  p.stay_id = stay.stay.stay_id;
  p.domain_id = stay.stay.domain_id;
  p.grid = locf_impute(discretise(stay, catalog, hours, spec.aggregation));
  p.labels.assign(p.grid.hours, -1);
  for (const auto& [h, y] : labels) {
    if (h < p.labels.size()) p.labels[h] = static_cast<std::int8_t>(y);
  }
  return p;
}

std::vector<std::string> sorted_domains(const std::vector<PreparedStay>& stays) {
  std::set<std::string> d;
  for (const auto& s : stays) d.insert(s.domain_id);
  return {d.begin(), d.end()};
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
  return s;
}

}  // namespace

// ---- cohort, labels, features ---------------------------------------------------

CohortResult build_cohort(std::vector<StayStatic> statics, std::vector<EventRecord> events,
                          const ConceptCatalog& catalog, const TaskSpec& spec) {
  CohortResult r;
  auto stays = assemble_filtered(std::move(statics), std::move(events), catalog, &r.minors_dropped,
                                 &r.implausible_removed);
  auto base = apply_base_exclusions(stays, catalog, spec.rules);
  r.base = std::move(base.report);
  auto kept = take(stays, base.included);
  stays.clear();

  std::vector<labels::OnsetResult> onsets(kept.size());
  if (spec.task != Task::kMortality) {
#pragma omp parallel for schedule(dynamic, 16)
    for (std::size_t i = 0; i < kept.size(); ++i)
      onsets[i] = labels::task_onset(kept[i], spec.task, spec.sepsis_mode);
  }
  auto task = apply_task_exclusions(kept, spec.task, onsets, spec.rules);
  r.task = std::move(task.report);
  r.stays = take(kept, task.included);
  r.onsets = take(onsets, task.included);
  return r;
}

std::vector<labels::LabelTrack> build_labels(const CohortResult& cohort, const TaskSpec& spec) {
  std::vector<labels::LabelTrack> tracks(cohort.stays.size());
#pragma omp parallel for schedule(dynamic, 32)
  for (std::size_t i = 0; i < tracks.size(); ++i)
    tracks[i] = labels::build_label_track(cohort.stays[i], spec.task, cohort.onsets[i]);
  return tracks;
}

std::vector<StayRef> PreparedData::refs() const {
  std::vector<StayRef> out;
  out.reserve(stays.size());
  for (const auto& s : stays) out.push_back({s.stay_id, s.domain_id});
  return out;
}

PreparedData prepare_features(std::span<const StayTimeline> stays,
                              std::span<const labels::LabelTrack> tracks,
                              const ConceptCatalog& catalog, const TaskSpec& spec) {
  if (stays.size() != tracks.size()) throw ShapeError("prepare_features: one track per stay");
  std::vector<std::optional<PreparedStay>> out(stays.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < stays.size(); ++i) {
    const auto& t = tracks[i];
    std::vector<std::pair<std::size_t, int>> rows;
    std::size_t hours = 0;
    if (t.kind == labels::LabelTrack::Kind::kSingleAt24h) {
      hours = labels::kMortalityInputHours;
      rows.emplace_back(hours - 1, t.single_label ? 1 : 0);
    } else {
      hours = t.hourly.size();
      for (std::size_t h = 0; h < hours; ++h) {
        if (t.hourly[h] == labels::HourLabel::kCensored) continue;
        rows.emplace_back(h, t.hourly[h] == labels::HourLabel::kPositive ? 1 : 0);
      }
    }
    if (rows.empty()) continue;
    out[i] = prepare_one(stays[i], catalog, spec, hours, rows);
  }
  PreparedData data;
  data.task = spec.task;
  for (auto& p : out)
    if (p && std::any_of(p->labels.begin(), p->labels.end(), [](auto y) { return y >= 0; }))
      data.stays.push_back(std::move(*p));
  data.domains = sorted_domains(data.stays);
  return data;
}

void PreparedData::write(std::ostream& out) const {
  json header;
  header["format"] = "icudg-grid-v1";
  header["task"] = std::string(to_string(task));
  header["byte_order"] = "little";
  json list = json::array();
  for (const auto& s : stays) {
    json statics = json::array();
    for (std::size_t i = 0; i < kStaticCount; ++i)
      statics.push_back(s.grid.static_observed[i] ? json(s.grid.statics[i]) : json(nullptr));
    list.push_back({{"stay_id", s.stay_id}, {"domain", s.domain_id}, {"hours", s.grid.hours},
                    {"statics", statics}});
  }
  header["stays"] = std::move(list);
  out << header.dump() << '\n';
  for (const auto& s : stays) {
    out.write(reinterpret_cast<const char*>(s.grid.values.data()),
              static_cast<std::streamsize>(s.grid.values.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(s.grid.observed.data()),
              static_cast<std::streamsize>(s.grid.observed.size()));
    out.write(reinterpret_cast<const char*>(s.labels.data()),
              static_cast<std::streamsize>(s.labels.size()));
  }
}

PreparedData PreparedData::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("grid file: missing header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("grid file: bad header: ") + e.what());
  }
  if (header.value("format", "") != "icudg-grid-v1") throw DataError("grid file: unknown format");
  PreparedData data;
  data.task = task_from_string(header.at("task").get<std::string>());
  for (const auto& j : header.at("stays")) {
    PreparedStay s;
    s.stay_id = j.at("stay_id").get<std::string>();
    s.domain_id = j.at("domain").get<std::string>();
    s.grid.stay_id = s.stay_id;
    s.grid.hours = j.at("hours").get<std::size_t>();
    const auto& st = j.at("statics");
    for (std::size_t i = 0; i < kStaticCount; ++i) {
      s.grid.static_observed[i] = !st.at(i).is_null();
      s.grid.statics[i] = st.at(i).is_null() ? std::nan("") : st.at(i).get<double>();
    }
    s.grid.values = Matrix(s.grid.hours, kDynamicCount, 0.0);
    s.grid.observed.assign(s.grid.hours * kDynamicCount, 0);
    s.labels.assign(s.grid.hours, -1);
    in.read(reinterpret_cast<char*>(s.grid.values.data()),
            static_cast<std::streamsize>(s.grid.values.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(s.grid.observed.data()),
            static_cast<std::streamsize>(s.grid.observed.size()));
    in.read(reinterpret_cast<char*>(s.labels.data()), static_cast<std::streamsize>(s.labels.size()));
    if (!in) throw DataError("grid file: truncated data for stay '" + s.stay_id + "'");
    data.stays.push_back(std::move(s));
  }
  data.domains = sorted_domains(data.stays);
  return data;
}

// ---- training matrix --------------------------------------------------------------

MatrixSpec matrix_spec(const ExperimentConfig& c, std::size_t workers) {
  MatrixSpec s;
  s.task = c.task;
  s.seed = c.seed;
  s.settings = c.protocol.settings;
  s.test_domains = c.protocol.test_domains;
  s.objectives = c.objectives;
  s.train = c.train;
  s.search = c.search;
  s.eval = c.eval;
  s.fold_limit = c.protocol.fold_limit;
  s.workers = workers;
  return s;
}

std::string JobGroup::result_setting() const {
  if (objective == ObjectiveKind::kErm) return setting;
  return setting + ":" + std::string(to_string(objective));
}

std::string JobGroup::train_label() const { return join(train_domains, "+"); }

std::vector<JobGroup> plan_groups(const std::vector<std::string>& domains, const MatrixSpec& spec) {
  std::vector<std::string> tests = spec.test_domains.empty() ? domains : spec.test_domains;
  for (const auto& t : tests)
    if (std::find(domains.begin(), domains.end(), t) == domains.end())
      throw ConfigError("protocol.test_domains", "unknown domain '" + t + "'");
  auto has = [&](const char* s) {
    return std::find(spec.settings.begin(), spec.settings.end(), s) != spec.settings.end();
  };
  auto key = [](const std::string& setting, ObjectiveKind k, const std::vector<std::string>& train) {
    return setting + "|" + std::string(to_string(k)) + "|" + join(train, "+");
  };

  std::vector<JobGroup> groups;
  if (has("single")) {
    for (const auto& d : domains)
      groups.push_back({"single", ObjectiveKind::kErm, {d}, domains, key("single", ObjectiveKind::kErm, {d})});
  }
  if (has("pooled_n_minus_1")) {
    for (const auto& t : tests) {
      std::vector<std::string> train;
      for (const auto& d : domains)
        if (d != t) train.push_back(d);
      if (train.empty()) throw ConfigError("protocol.settings", "pooled_n_minus_1 needs two or more domains");
      for (const auto k : spec.objectives) {
        if (k != ObjectiveKind::kErm && train.size() < 2)
          throw ConfigError("objective.names", std::string(to_string(k)) +
                                                   " needs at least two training domains");
        groups.push_back({"pooled_n_minus_1", k, train, {t}, key("pooled_n_minus_1", k, train)});
      }
    }
  }
  if (has("all")) {
    groups.push_back({"all", ObjectiveKind::kErm, domains, domains, key("all", ObjectiveKind::kErm, domains)});
  }
  if (has("oracle")) {
    // Trained exactly like the single-source model of the test domain.
    for (const auto& t : tests)
      groups.push_back({"oracle", ObjectiveKind::kErm, {t}, {t}, key("single", ObjectiveKind::kErm, {t})});
  }
  return groups;
}

namespace {

class StayIndex {
 public:
  explicit StayIndex(const PreparedData& data) {
    for (const auto& s : data.stays) map_.emplace(s.stay_id, &s);
  }
  const PreparedStay& at(const std::string& id) const {
    auto it = map_.find(id);
    if (it == map_.end()) throw DataError("split references unknown stay '" + id + "'");
    return *it->second;
  }

 private:
  std::unordered_map<std::string, const PreparedStay*> map_;
};

/// Finalised samples with stable addresses.
struct SampleSet {
  std::vector<std::unique_ptr<Sample>> owned;

  DomainData add(const std::string& domain, const std::vector<std::string>& ids,
                 const StayIndex& index, const NormStats& stats) {
    DomainData d{domain, {}};
    for (const auto& id : ids) {
      const auto& p = index.at(id);
      auto s = std::make_unique<Sample>();
      s->stay_id = p.stay_id;
      s->domain_id = p.domain_id;
      s->x = finalize(p.grid, stats);
      s->labels = p.labels;
      d.samples.push_back(s.get());
      owned.push_back(std::move(s));
    }
    return d;
  }
};

std::size_t fold_count(const SplitPlan& plan, const MatrixSpec& spec) {
  const std::size_t n = plan.fold_count();
  return spec.fold_limit == 0 ? n : std::min(n, spec.fold_limit);
}

FoldModel train_unit(const StayIndex& index, const SplitPlan& plan, const JobGroup& g,
                     TrainConfig config, std::size_t fold, std::uint64_t seed) {
  std::vector<const HourlyGrid*> grids;
  for (const auto& d : g.train_domains)
    for (const auto& id : plan.train_ids(d, fold)) grids.push_back(&index.at(id).grid);
  FoldModel fm;
  fm.fold = fold;
  fm.stats = fit_norm_stats(std::span<const HourlyGrid* const>(grids));

  SampleSet set;
  std::vector<DomainData> train_data, val_data;
  for (const auto& d : g.train_domains) {
    train_data.push_back(set.add(d, plan.train_ids(d, fold), index, fm.stats));
    val_data.push_back(set.add(d, plan.val_ids(d, fold), index, fm.stats));
  }
  config.seed = seed;
  config.objective = g.objective;
  if (g.objective != ObjectiveKind::kErm) config.pooling = Pooling::kPerDomain;
  auto result = train(config, train_data, val_data);
  fm.model = std::move(result.model);
  fm.history = std::move(result.history);
  fm.train_domains = std::move(result.train_domains);
  fm.val_loss = result.best_val_loss;
  fm.best_epoch = result.best_epoch;
  return fm;
}

}  // namespace

std::vector<GroupResult> train_groups(const PreparedData& data, const SplitPlan& plan,
                                      const MatrixSpec& spec, const std::vector<JobGroup>& groups) {
  const StayIndex index(data);
  const std::size_t n_folds = fold_count(plan, spec);

  // Distinct model families; groups sharing a key reuse the first one.
  std::vector<std::size_t> family_of(groups.size());
  std::vector<std::size_t> families;
  std::map<std::string, std::size_t> by_key;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto [it, fresh] = by_key.emplace(groups[i].seed_key, families.size());
    if (fresh) families.push_back(i);
    family_of[i] = it->second;
  }

  struct Family {
    std::uint64_t seed;
    std::vector<TrainConfig> draws;
  };
  std::vector<Family> fam(families.size());
  struct Unit {
    std::size_t family, draw, fold;
  };
  std::vector<Unit> units;
  for (std::size_t f = 0; f < families.size(); ++f) {
    const JobGroup& g = groups[families[f]];
    fam[f].seed = CounterRng::derive(spec.seed, {CounterRng::hash(g.seed_key)});
    TrainConfig base = spec.train;
    base.objective = g.objective;
    fam[f].draws = spec.search.draws == 0
                       ? std::vector<TrainConfig>{base}
                       : draw_configs(base, spec.search.space, spec.search.draws, fam[f].seed);
    for (std::size_t d = 0; d < fam[f].draws.size(); ++d)
      for (std::size_t k = 0; k < n_folds; ++k) units.push_back({f, d, k});
  }

  std::vector<FoldModel> trained(units.size());
  parallel_for(units.size(), spec.workers, [&](std::size_t u) {
    const auto& unit = units[u];
    const JobGroup& g = groups[families[unit.family]];
    const std::uint64_t seed =
        CounterRng::derive(fam[unit.family].seed, {CounterRng::hash("fold"), unit.fold, unit.draw});
    trained[u] = train_unit(index, plan, g, fam[unit.family].draws[unit.draw], unit.fold, seed);
    std::ostringstream os;
    os << "[train] " << g.result_setting() << " on " << g.train_label() << " draw " << unit.draw
       << " fold " << unit.fold << ": best epoch " << trained[u].best_epoch << ", val loss "
       << trained[u].val_loss;
    log(os.str());
  });

  // Winner per family: lowest mean validation loss across folds.
  std::vector<GroupResult> family_results(families.size());
  for (std::size_t f = 0; f < families.size(); ++f) {
    const JobGroup& g = groups[families[f]];
    const std::size_t n_draws = fam[f].draws.size();
    std::vector<std::vector<std::size_t>> unit_of(n_draws);
    for (std::size_t u = 0; u < units.size(); ++u)
      if (units[u].family == f) unit_of[units[u].draw].push_back(u);
    std::vector<Candidate> candidates;
    for (std::size_t d = 0; d < n_draws; ++d) {
      double mean_val = 0.0;
      for (const auto u : unit_of[d]) mean_val += trained[u].val_loss;
      mean_val /= static_cast<double>(unit_of[d].size());
      candidates.push_back({fam[f].draws[d], mean_val, g.train_domains});
    }
    // Only training-domain validation losses enter the choice.
    std::size_t best = 0;
    for (const auto& t : g.eval_domains) {
      if (g.setting != "pooled_n_minus_1") break;
      const Candidate& c = select_model_dg(candidates, t);
      best = static_cast<std::size_t>(&c - candidates.data());
    }
    if (g.setting != "pooled_n_minus_1") {
      for (std::size_t d = 1; d < n_draws; ++d)
        if (candidates[d].val_loss < candidates[best].val_loss) best = d;
    }
    auto& r = family_results[f];
    r.chosen_draw = best;
    for (const auto& c : candidates) r.draw_scores.push_back(c.val_loss);
    for (const auto u : unit_of[best]) r.folds.push_back(std::move(trained[u]));
  }

  std::vector<GroupResult> out;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    GroupResult r = family_results[family_of[i]];
    r.group = groups[i];
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

struct Scored {
  std::vector<double> p;
  std::vector<int> y;
};

Scored score(const Model& model, const DomainData& d) {
  Scored s;
  for (const auto& pr : predict(model, d.samples)) {
    s.p.push_back(pr.probability);
    s.y.push_back(pr.label);
  }
  return s;
}

}  // namespace

MatrixResult evaluate_groups(const PreparedData& data, const SplitPlan& plan,
                             const MatrixSpec& spec, const std::vector<GroupResult>& groups) {
  const StayIndex index(data);
  struct Unit {
    std::size_t group, fold_pos;
  };
  std::vector<Unit> units;
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t k = 0; k < groups[g].folds.size(); ++k) units.push_back({g, k});

  std::vector<std::vector<eval::ResultRow>> rows(units.size());
  std::vector<std::vector<CalibrationRecord>> calib(units.size());
  const std::string task(to_string(spec.task));
  parallel_for(units.size(), spec.workers, [&](std::size_t u) {
    const auto& gr = groups[units[u].group];
    const auto& fm = gr.folds[units[u].fold_pos];
    const JobGroup& g = gr.group;

    std::optional<eval::IsotonicModel> iso;
    if (fm.fold == 0) {
      SampleSet vset;
      Scored val;
      for (const auto& d : g.train_domains) {
        auto s = score(fm.model, vset.add(d, plan.val_ids(d, 0), index, fm.stats));
        val.p.insert(val.p.end(), s.p.begin(), s.p.end());
        val.y.insert(val.y.end(), s.y.begin(), s.y.end());
      }
      std::vector<double> yd(val.y.begin(), val.y.end());
      iso = eval::isotonic_fit(val.p, yd);
    }
    for (const auto& t : g.eval_domains) {
      SampleSet set;
      const auto s = score(fm.model, set.add(t, plan.test_ids(t), index, fm.stats));
      const std::string cell = g.result_setting() + " trained on " + g.train_label() +
                               ", tested on " + t + ", fold " + std::to_string(fm.fold);
      double auc = 0.0;
      try {
        auc = eval::auroc(s.p, s.y);
      } catch (const DataError& e) {
        throw DataError(cell + ": " + e.what());
      }
      rows[u].push_back({task, g.result_setting(), g.train_label(), t, fm.fold, auc});
      if (iso) {
        CalibrationRecord rec{task, g.result_setting(), g.train_label(), t, s.p.size(), {}, {}};
        rec.raw = eval::calibration_curve(s.p, s.y, spec.eval.calibration_bins, spec.eval.winsor_q);
        const auto recal = iso->predict(s.p);
        rec.recalibrated =
            eval::calibration_curve(recal, s.y, spec.eval.calibration_bins, spec.eval.winsor_q);
        calib[u].push_back(std::move(rec));
      }
    }
  });

  MatrixResult out;
  for (auto& r : rows) std::move(r.begin(), r.end(), std::back_inserter(out.rows));
  for (auto& c : calib) std::move(c.begin(), c.end(), std::back_inserter(out.calibration));
  return out;
}

MatrixResult run_matrix(const PreparedData& data, const SplitPlan& plan, const MatrixSpec& spec) {
  const auto groups = plan_groups(data.domains, spec);
  return evaluate_groups(data, plan, spec, train_groups(data, plan, spec, groups));
}

void write_calibration_csv(std::ostream& out, const CalibrationRecord& r) {
  out << "curve,mean_pred,frac_pos,n\n";
  for (const auto& b : r.raw)
    out << "raw," << format_double(b.mean_pred) << ',' << format_double(b.frac_pos) << ',' << b.n << '\n';
  for (const auto& b : r.recalibrated)
    out << "isotonic," << format_double(b.mean_pred) << ',' << format_double(b.frac_pos) << ','
        << b.n << '\n';
}

// ---- pipeline stages ------------------------------------------------------------

namespace {

std::string path_in(const RunContext& ctx, const std::string& rel) { return ctx.run_dir + "/" + rel; }

void require_file(const std::string& path, const std::string& hint) {
  if (!fs::exists(path)) throw MissingPrerequisite("missing " + path + " (" + hint + ")");
}

std::ofstream create(const std::string& path, bool binary = false) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw MissingPrerequisite("cannot read " + path);
  return in;
}

TaskSpec task_spec(const ExperimentConfig& c) {
  return {c.task, c.sepsis_mode, c.aggregation, c.cohort};
}

ConceptCatalog catalog_of(const ExperimentConfig& c) {
  if (c.catalog_path.empty()) return ConceptCatalog::builtin();
  if (!fs::exists(c.catalog_path)) throw MissingPrerequisite("missing catalog " + c.catalog_path);
  return ConceptCatalog::load(c.catalog_path);
}

std::pair<std::vector<StayStatic>, std::vector<EventRecord>> load_raw(const RunContext& ctx,
                                                                      const ConceptCatalog& cat) {
  std::string statics_path, events_path;
  if (ctx.config.source == DataSource::kSynth) {
    statics_path = path_in(ctx, "data/statics.csv");
    events_path = path_in(ctx, "data/events.csv");
    require_file(statics_path, "run `synth` first");
    require_file(events_path, "run `synth` first");
  } else {
    statics_path = ctx.config.statics_path;
    events_path = ctx.config.events_path;
    require_file(statics_path, "data.statics");
    require_file(events_path, "data.events");
  }
  auto sin = open_in(statics_path);
  auto ein = open_in(events_path);
  return {parse_statics(sin), parse_events(ein, cat)};
}

std::vector<std::pair<std::string, std::string>> read_two_columns(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<std::string, std::string>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(out.size() + 2, "expected two columns in " + path);
    out.emplace_back(line.substr(0, comma), line.substr(comma + 1));
  }
  return out;
}

/// Included stays in the order of cohort/included.csv, after the same
/// ingestion steps as the cohort stage.
std::vector<StayTimeline> load_included(const RunContext& ctx, const ConceptCatalog& cat) {
  const auto included_path = path_in(ctx, "cohort/included.csv");
  require_file(included_path, "run `cohort` first");
  auto [statics, events] = load_raw(ctx, cat);
  auto stays = assemble_filtered(std::move(statics), std::move(events), cat, nullptr, nullptr);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < stays.size(); ++i) pos.emplace(stays[i].stay.stay_id, i);
  std::vector<std::size_t> order;
  for (const auto& [id, domain] : read_two_columns(included_path)) {
    auto it = pos.find(id);
    if (it == pos.end()) throw DataError("cohort lists unknown stay '" + id + "'");
    order.push_back(it->second);
  }
  return take(stays, order);
}

void write_report_rows(std::ostream& out, const ExclusionReport& r, bool header) {
  std::ostringstream tmp;
  r.write_csv(tmp);
  std::string text = tmp.str();
  if (!header) text = text.substr(text.find('\n') + 1);
  out << text;
}

}  // namespace

RunContext open_run(const ExperimentConfig& config, std::optional<std::size_t> workers_flag) {
  RunContext ctx;
  ctx.config = config;
  ctx.run_dir = run_directory(config);
  ctx.workers = resolve_workers(config, workers_flag);
  fs::create_directories(ctx.run_dir);
  auto out = create(path_in(ctx, "config.ini"));
  out << resolved_config_text(config);
  return ctx;
}

void run_synth(const RunContext& ctx) {
  if (ctx.config.source != DataSource::kSynth)
    throw ConfigError("data.source", "synth needs source = synth");
  GeneratorConfig gc{ctx.config.seed, ctx.config.domains};
  const auto sets = generate_multisite(gc);
  std::vector<StayStatic> statics;
  std::vector<EventRecord> events;
  for (const auto& p : ctx.config.domains) {
    const auto& s = sets.at(p.domain_id);
    statics.insert(statics.end(), s.statics.begin(), s.statics.end());
    events.insert(events.end(), s.events.begin(), s.events.end());
  }
  auto so = create(path_in(ctx, "data/statics.csv"));
  write_statics(so, statics);
  auto eo = create(path_in(ctx, "data/events.csv"));
  write_events(eo, events);
  log("[synth] " + std::to_string(statics.size()) + " stays, " + std::to_string(events.size()) +
      " events");
}

void run_cohort(const RunContext& ctx) {
  const auto cat = catalog_of(ctx.config);
  auto [statics, events] = load_raw(ctx, cat);
  const auto cohort = build_cohort(std::move(statics), std::move(events), cat, task_spec(ctx.config));
  auto a = create(path_in(ctx, "cohort/attrition.csv"));
  write_report_rows(a, cohort.base, true);
  write_report_rows(a, cohort.task, false);
  auto inc = create(path_in(ctx, "cohort/included.csv"));
  inc << "stay_id,domain\n";
  for (const auto& s : cohort.stays) inc << s.stay.stay_id << ',' << s.stay.domain_id << '\n';
  auto exc = create(path_in(ctx, "cohort/excluded.csv"));
  exc << "stay_id,domain,criterion\n";
  for (const auto* r : {&cohort.base, &cohort.task})
    for (const auto& e : r->excluded) exc << e.stay_id << ',' << e.domain_id << ',' << e.criterion << '\n';
  log("[cohort] " + std::to_string(cohort.stays.size()) + " of " +
      std::to_string(cohort.base.input_count) + " stays included");
}

void run_label(const RunContext& ctx) {
  const auto cat = catalog_of(ctx.config);
  const auto spec = task_spec(ctx.config);
  auto stays = load_included(ctx, cat);
  CohortResult c;
  c.onsets.resize(stays.size());
  if (spec.task != Task::kMortality) {
#pragma omp parallel for schedule(dynamic, 16)
    for (std::size_t i = 0; i < stays.size(); ++i)
      c.onsets[i] = labels::task_onset(stays[i], spec.task, spec.sepsis_mode);
  }
  c.stays = std::move(stays);
  const auto tracks = build_labels(c, spec);
  auto lo = create(path_in(ctx, "labels/labels.csv"));
  labels::write_label_csv(lo, tracks);
  auto oo = create(path_in(ctx, "labels/onsets.csv"));
  labels::write_onset_csv(oo, tracks);
  log("[label] " + std::to_string(tracks.size()) + " label tracks");
}

void run_featurize(const RunContext& ctx) {
  const auto labels_path = path_in(ctx, "labels/labels.csv");
  require_file(labels_path, "run `label` first");
  const auto cat = catalog_of(ctx.config);
  const auto spec = task_spec(ctx.config);
  const auto stays = load_included(ctx, cat);

  std::unordered_map<std::string, std::vector<std::pair<std::size_t, int>>> rows;
  {
    auto in = open_in(labels_path);
    std::string line;
    std::getline(in, line);
    std::size_t n = 1;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string id, task, hour, label;
      if (!std::getline(ss, id, ',') || !std::getline(ss, task, ',') || !std::getline(ss, hour, ',') ||
          !std::getline(ss, label, ','))
        throw ParseError(n, "expected stay_id,task,hour,label in " + labels_path);
      try {
        rows[id].emplace_back(std::stoul(hour), std::stoi(label));
      } catch (const std::exception&) {
        throw ParseError(n, "bad hour or label in " + labels_path);
      }
    }
  }
  std::vector<std::optional<PreparedStay>> prepared(stays.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < stays.size(); ++i) {
    auto it = rows.find(stays[i].stay.stay_id);
    if (it == rows.end()) continue;
    std::size_t hours = labels::kMortalityInputHours;
    if (spec.task != Task::kMortality) {
      hours = 0;
      for (const auto& [h, y] : it->second) hours = std::max(hours, h + 1);
    }
    prepared[i] = prepare_one(stays[i], cat, spec, hours, it->second);
  }
  PreparedData data;
  data.task = spec.task;
  for (auto& p : prepared)
    if (p) data.stays.push_back(std::move(*p));
  data.domains = sorted_domains(data.stays);

  const auto plan = make_splits(data.refs(), ctx.config.seed, ctx.config.protocol.folds,
                                ctx.config.protocol.test_fraction);
  {
    auto out = create(path_in(ctx, "features/splits.json"));
    plan.write_json(out);
  }
  {
    auto out = create(path_in(ctx, "features/grids.bin"), true);
    data.write(out);
  }
  // Reference tensors, normalised with the pooled fold-0 training statistics.
  const StayIndex index(data);
  std::vector<const HourlyGrid*> grids;
  for (const auto& d : data.domains)
    for (const auto& id : plan.train_ids(d, 0)) grids.push_back(&index.at(id).grid);
  const auto stats = fit_norm_stats(std::span<const HourlyGrid* const>(grids));
  {
    auto out = create(path_in(ctx, "features/norm_stats.json"));
    stats.write_json(out);
  }
  for (const auto& d : data.domains) {
    std::vector<std::string> ids;
    std::vector<Matrix> tensors;
    for (const auto& s : data.stays) {
      if (s.domain_id != d) continue;
      ids.push_back(s.stay_id);
      tensors.push_back(finalize(s.grid, stats));
    }
    auto out = create(path_in(ctx, "features/" + d + ".tensor"), true);
    write_tensor_dump(out, ids, tensors, cat);
  }
  log("[featurize] " + std::to_string(data.stays.size()) + " stays over " +
      std::to_string(data.domains.size()) + " domains");
}

namespace {

struct LoadedFeatures {
  PreparedData data;
  SplitPlan plan;
};

LoadedFeatures load_features(const RunContext& ctx) {
  const auto grids = path_in(ctx, "features/grids.bin");
  const auto splits = path_in(ctx, "features/splits.json");
  require_file(grids, "run `featurize` first");
  require_file(splits, "run `featurize` first");
  LoadedFeatures f;
  auto gin = open_in(grids, true);
  f.data = PreparedData::read(gin);
  auto sin = open_in(splits);
  f.plan = SplitPlan::read_json(sin);
  return f;
}

std::string group_dir(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "g%03zu", i);
  return buf;
}

}  // namespace

void run_train(const RunContext& ctx) {
  const auto f = load_features(ctx);
  const auto spec = matrix_spec(ctx.config, ctx.workers);
  const auto groups = plan_groups(f.data.domains, spec);
  const auto results = train_groups(f.data, f.plan, spec, groups);

  json index = json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const std::string dir = "models/" + group_dir(i);
    json folds = json::array();
    for (const auto& fm : r.folds) {
      const std::string stem = dir + "/fold" + std::to_string(fm.fold);
      {
        auto out = create(path_in(ctx, stem + ".model"), true);
        fm.model.save(out, json{{"setting", r.group.result_setting()},
                                {"train_domains", r.group.train_domains},
                                {"fold", fm.fold}});
      }
      {
        auto out = create(path_in(ctx, stem + ".norm.json"));
        fm.stats.write_json(out);
      }
      {
        TrainResult tr;
        tr.train_domains = fm.train_domains;
        tr.history = fm.history;
        auto out = create(path_in(ctx, stem + ".history.csv"));
        write_history_csv(out, tr);
      }
      folds.push_back({{"fold", fm.fold},
                       {"model", stem + ".model"},
                       {"norm", stem + ".norm.json"},
                       {"val_loss", fm.val_loss},
                       {"best_epoch", fm.best_epoch},
                       {"trainer_domains", fm.train_domains}});
    }
    index.push_back({{"setting", r.group.setting},
                     {"objective", std::string(to_string(r.group.objective))},
                     {"train_domains", r.group.train_domains},
                     {"eval_domains", r.group.eval_domains},
                     {"chosen_draw", r.chosen_draw},
                     {"draw_scores", r.draw_scores},
                     {"folds", folds}});
  }
  auto out = create(path_in(ctx, "models/index.json"));
  out << index.dump(2) << '\n';
  log("[train] " + std::to_string(results.size()) + " model groups written");
}

void run_evaluate(const RunContext& ctx) {
  const auto index_path = path_in(ctx, "models/index.json");
  require_file(index_path, "run `train` first");
  const auto f = load_features(ctx);
  const auto spec = matrix_spec(ctx.config, ctx.workers);
  const auto groups = plan_groups(f.data.domains, spec);
  json index;
  {
    auto in = open_in(index_path);
    index = json::parse(in);
  }
  const std::size_t n_folds = fold_count(f.plan, spec);
  std::vector<GroupResult> results;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    const std::string cell = g.result_setting() + " trained on " + g.train_label();
    const json* entry = nullptr;
    for (const auto& e : index) {
      if (e.at("setting") == g.setting && e.at("objective") == std::string(to_string(g.objective)) &&
          e.at("train_domains").get<std::vector<std::string>>() == g.train_domains &&
          e.at("eval_domains").get<std::vector<std::string>>() == g.eval_domains) {
        entry = &e;
        break;
      }
    }
    if (!entry) throw MissingPrerequisite("no trained checkpoint for " + cell + " (run `train`)");
    GroupResult r;
    r.group = g;
    r.chosen_draw = entry->at("chosen_draw").get<std::size_t>();
    for (std::size_t k = 0; k < n_folds; ++k) {
      const json* fe = nullptr;
      for (const auto& x : entry->at("folds"))
        if (x.at("fold").get<std::size_t>() == k) fe = &x;
      const std::string where = cell + ", fold " + std::to_string(k);
      if (!fe) throw MissingPrerequisite("no trained checkpoint for " + where);
      const auto model_path = path_in(ctx, fe->at("model").get<std::string>());
      const auto norm_path = path_in(ctx, fe->at("norm").get<std::string>());
      if (!fs::exists(model_path) || !fs::exists(norm_path))
        throw MissingPrerequisite("missing checkpoint " + model_path + " for " + where);
      FoldModel fm;
      fm.fold = k;
      auto min = open_in(model_path, true);
      fm.model = Model::load(min);
      auto nin = open_in(norm_path);
      fm.stats = NormStats::read_json(nin);
      fm.val_loss = fe->at("val_loss").get<double>();
      r.folds.push_back(std::move(fm));
    }
    results.push_back(std::move(r));
  }

  const auto m = evaluate_groups(f.data, f.plan, spec, results);
  {
    auto out = create(path_in(ctx, "results/results.csv"));
    eval::write_results_csv(out, m.rows);
  }
  {
    auto out = create(path_in(ctx, "results/summary.csv"));
    eval::write_summary_csv(out, eval::summarise(m.rows));
  }
  for (const auto& c : m.calibration) {
    std::string name = c.task + "_" + c.setting + "_" + c.train_domains + "_" + c.test_domain;
    std::replace(name.begin(), name.end(), ':', '-');
    auto out = create(path_in(ctx, "results/calibration/" + name + ".csv"));
    write_calibration_csv(out, c);
  }
  log("[evaluate] " + std::to_string(m.rows.size()) + " result rows");
}

void run_reproduce(const RunContext& ctx) {
  if (ctx.config.source == DataSource::kSynth) run_synth(ctx);
  run_cohort(ctx);
  run_label(ctx);
  run_featurize(ctx);
  run_train(ctx);
  run_evaluate(ctx);
}

}  // namespace icudg
