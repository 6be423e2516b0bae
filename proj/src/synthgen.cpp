#include "icudg/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>

#include "icudg/catalog.hpp"
#include "icudg/error.hpp"
#include "icudg/rng.hpp"

namespace icudg {
namespace {

struct ConceptModel {
  const char* id;
  double mean;
  double sd;
  double rate;  // default measurements per hour
};

// Population means and spreads in catalogue units; crea and urine are
// generated separately.
constexpr std::array<ConceptModel, 48> kDynamic{{
    {"sbp", 120, 20, 1.0},    {"dbp", 65, 12, 1.0},      {"hr", 85, 15, 1.0},
    {"map", 80, 12, 1.0},     {"o2sat", 96, 2.5, 1.0},   {"resp", 18, 5, 1.0},
    {"temp", 37, 0.7, 0.25},  {"alb", 3.0, 0.6, 0.03},   {"alp", 100, 50, 0.03},
    {"alt", 40, 30, 0.03},    {"ast", 45, 35, 0.03},     {"be", 0, 4, 0.15},
    {"bicar", 24, 4, 0.1},    {"bili", 1.0, 1.0, 0.04},  {"bili_dir", 0.4, 0.4, 0.02},
    {"bnd", 5, 5, 0.02},      {"bun", 25, 15, 0.08},     {"ca", 8.5, 0.7, 0.08},
    {"cai", 1.15, 0.1, 0.15}, {"crea", 0.95, 0.25, 0.08}, {"ck", 200, 300, 0.03},
    {"ckmb", 5, 5, 0.02},     {"cl", 104, 5, 0.1},       {"pco2", 40, 8, 0.15},
    {"crp", 80, 60, 0.03},    {"fgn", 350, 120, 0.03},   {"glu", 140, 40, 0.2},
    {"hgb", 10.5, 2, 0.1},    {"inr_pt", 1.3, 0.4, 0.06}, {"lact", 1.8, 1.2, 0.12},
    {"lymph", 12, 8, 0.03},   {"mch", 30, 2, 0.05},      {"mchc", 33, 1.5, 0.05},
    {"mcv", 90, 6, 0.05},     {"methb", 0.8, 0.4, 0.05}, {"mg", 2.0, 0.3, 0.08},
    {"neut", 75, 12, 0.03},   {"po2", 100, 35, 0.15},    {"ptt", 35, 10, 0.06},
    {"ph", 7.38, 0.07, 0.15}, {"phos", 3.5, 1.0, 0.08},  {"plt", 200, 80, 0.08},
    {"k", 4.1, 0.5, 0.12},    {"na", 139, 4, 0.12},      {"tnt", 0.1, 0.2, 0.02},
    {"wbc", 11, 5, 0.08},     {"fio2", 40, 15, 0.3},     {"urine", 0, 0, 0.9},
}};

constexpr double kValueNoise = 0.5;
constexpr double kGlitchProbability = 5e-4;
constexpr double kAgeMean = 63.0;
constexpr double kAgeSd = 16.0;

// Stream ids below the per-concept block.
enum Stream : std::uint64_t {
  kStaticStream = 1,
  kLatentStream,
  kOutcomeStream,
  kCreatinineStream,
  kUrineStream,
  kSofaStream,
  kAntibioticStream,
  kCultureStream,
  kDefectStream,
  kConceptStreamBase = 100,
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double ramp(double t, double start, double width) {
  return std::clamp((t - start) / width, 0.0, 1.0);
}

std::string stay_name(const std::string& domain, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return domain + "-" + buf;
}

double offset_of(const DomainProfile& p, const std::string& id) {
  const auto it = p.shift.feature_mean_offsets.find(id);
  return it == p.shift.feature_mean_offsets.end() ? 0.0 : it->second;
}

double rate_of(const DomainProfile& p, const ConceptModel& c) {
  const auto it = p.measurement_rate.find(c.id);
  const double base = it == p.measurement_rate.end() ? c.rate : it->second;
  return base * p.shift.measurement_rate_multiplier;
}

struct StayPlan {
  double los = 0.0;
  double u_age = 0.0;
  std::array<double, 48> u{};
  double risk = 0.0;
  bool died = false;
  std::optional<double> aki_time;
  bool aki_by_urine = false;
  std::optional<double> sepsis_time;
  double weight_true = 80.0;
};

class StayGenerator {
 public:
  StayGenerator(const DomainProfile& profile, std::uint64_t seed,
                const std::map<std::string, double>& beta)
      : p_(profile), seed_(seed), domain_key_(CounterRng::hash(profile.domain_id)) {
    const auto& cat = ConceptCatalog::builtin();
    for (const auto& [id, b] : beta) {
      if (id == "age") {
        beta_age_ = b;
      } else {
        beta_.push_back({*cat.dynamic_index(id), b});
      }
    }
  }

  void run(std::size_t index, StayStatic& stay, std::vector<EventRecord>& events) const {
    CounterRng srng = stream(index, kStaticStream);
    stay.stay_id = stay_name(p_.domain_id, index);
    stay.domain_id = p_.domain_id;
    StayPlan plan;
    plan.los = std::clamp(srng.lognormal(p_.los_hours.mu, p_.los_hours.sigma), 1.0, 24.0 * 30.0);

    const auto& cat = ConceptCatalog::builtin();
    CounterRng lrng = stream(index, kLatentStream);
    plan.u_age = offset_of(p_, "age") + lrng.normal();
    for (std::size_t c = 0; c < 48; ++c) plan.u[c] = offset_of(p_, kDynamic[c].id) + lrng.normal();
    plan.risk = beta_age_ * plan.u_age;
    for (const auto& [c, b] : beta_) plan.risk += b * plan.u[c];

    // Statics.
    if (srng.bernoulli(0.005)) {
      stay.age = srng.uniform(14.0, 17.9);
    } else {
      stay.age = std::clamp(kAgeMean + kAgeSd * plan.u_age, 18.0, 95.0);
    }
    const double sx = srng.uniform();
    stay.sex = sx < 0.01 ? Sex::kUnknown : (sx < 0.43 ? Sex::kFemale : Sex::kMale);
    const double height = srng.normal(stay.sex == Sex::kFemale ? 164.0 : 176.0, 8.0);
    const double weight = std::clamp(srng.normal(80.0, 18.0), 40.0, 200.0);
    if (!srng.bernoulli(0.08)) stay.height = std::round(height * 10.0) / 10.0;
    if (!srng.bernoulli(0.08)) stay.weight = std::round(weight * 10.0) / 10.0;
    plan.weight_true = weight;
    if (p_.n_hospitals > 0) {
      stay.hospital_id = p_.domain_id + "-h" + std::to_string(srng.below(p_.n_hospitals));
    }

    // Outcomes; the draws are taken in a fixed order whatever the multiplier.
    CounterRng orng = stream(index, kOutcomeStream);
    const double m = p_.shift.prevalence_multiplier;
    const double u_mort = orng.uniform(), u_aki = orng.uniform(), u_sep = orng.uniform();
    const double t_aki = orng.uniform(), t_sep = orng.uniform();
    const double pre_aki = orng.uniform(), pre_sep = orng.uniform(), aki_kind = orng.uniform();
    const std::size_t crea_i = *cat.dynamic_index(kCreatinine);
    auto prob = [&](const OutcomeParams& o, double extra) {
      return std::min(1.0, m * sigmoid(o.intercept + o.slope * plan.risk + extra));
    };
    plan.died = u_mort < prob(p_.mortality, 0.0);
    if (u_aki < prob(p_.aki, 0.4 * plan.u[crea_i])) {
      const double hi = std::max(2.5, std::min(plan.los, 168.0));
      plan.aki_time = pre_aki < 0.05 ? -1.0 - 23.0 * t_aki : 2.0 + (hi - 2.0) * t_aki;
      plan.aki_by_urine = *plan.aki_time > 0.0 && aki_kind < 0.4;
    }
    if (u_sep < prob(p_.sepsis, 0.0)) {
      const double hi = std::max(3.5, std::min(plan.los - 1.0, 120.0));
      plan.sepsis_time = pre_sep < 0.05 ? -2.0 - 10.0 * t_sep : 3.0 + (hi - 3.0) * t_sep;
    }

    stay.icu_discharge = std::round(plan.los * 100.0) / 100.0;
    plan.los = *stay.icu_discharge;
    stay.died_in_icu = plan.died;
    if (plan.died) stay.death_time = plan.los;

    emit_features(index, stay, plan, events);
    emit_creatinine(index, stay, plan, events);
    emit_urine(index, stay, plan, events);
    emit_sofa(index, stay, plan, events);
    emit_infection(index, stay, plan, events);
    apply_defects(index, stay, plan, events);

    std::stable_sort(events.begin(), events.end(),
                     [](const EventRecord& a, const EventRecord& b) { return a.time < b.time; });
  }

 private:
  CounterRng stream(std::size_t index, std::uint64_t id) const {
    return CounterRng(CounterRng::derive(seed_, {domain_key_, index, id}));
  }

  // Deterioration before an onset or death, in latent units towards higher risk.
  double drift(const StayPlan& plan, double t, double sign) const {
    double d = 0.0;
    if (plan.aki_time) d = std::max(d, ramp(t, *plan.aki_time - 12.0, 12.0));
    if (plan.sepsis_time) d = std::max(d, ramp(t, *plan.sepsis_time - 12.0, 12.0));
    if (plan.died) d = std::max(d, ramp(t, plan.los - 24.0, 24.0));
    return sign * d;
  }

  void push(std::vector<EventRecord>& events, const StayStatic& stay, double t, std::string_view id,
            double v, bool whole_stay = false) const {
    events.push_back({stay.stay_id, std::round(t * 1000.0) / 1000.0, std::string(id),
                      std::round(v * 10000.0) / 10000.0, whole_stay});
  }

  void emit_features(std::size_t index, const StayStatic& stay, const StayPlan& plan,
                     std::vector<EventRecord>& events) const {
    const auto& cat = ConceptCatalog::builtin();
    std::vector<double> sign(48, 0.0);
    for (const auto& [c, b] : beta_) sign[c] = b > 0 ? 1.0 : -1.0;
    for (std::size_t c = 0; c < 48; ++c) {
      const auto& cm = kDynamic[c];
      if (cm.id == kCreatinine || cm.id == kUrine) continue;
      const double rate = rate_of(p_, cm);
      if (rate <= 0.0) continue;
      CounterRng rng = stream(index, kConceptStreamBase + c);
      const auto& range = cat.dynamic_entry(c).range;
      for (double t = rng.exponential(rate); t < plan.los; t += rng.exponential(rate)) {
        const double z = plan.u[c] + drift(plan, t, sign[c]) + kValueNoise * rng.normal();
        double v = cm.mean + cm.sd * z;
        if (range) v = std::clamp(v, range->min, range->max);
        if (rng.bernoulli(kGlitchProbability) && range) v = range->max * 3.0 + 1.0;
        push(events, stay, t, cm.id, v);
      }
    }
  }

  void emit_creatinine(std::size_t index, const StayStatic& stay, const StayPlan& plan,
                       std::vector<EventRecord>& events) const {
    const auto& cat = ConceptCatalog::builtin();
    const std::size_t ci = *cat.dynamic_index(kCreatinine);
    CounterRng rng = stream(index, kCreatinineStream);
    const double baseline =
        rng.bernoulli(0.01) ? rng.uniform(4.2, 6.0) : 0.95 * std::exp(0.25 * plan.u[ci]);
    const double rise = rng.uniform(0.7, 1.6);
    const bool creatinine_aki = plan.aki_time && !plan.aki_by_urine;
    auto value = [&](double t) {
      double f = 1.0;
      if (creatinine_aki) f += rise * ramp(t, *plan.aki_time - 12.0, 24.0);
      return baseline * f * std::exp(0.03 * rng.normal());
    };
    if (creatinine_aki && *plan.aki_time < 0.0) {
      // Injury before admission: a normal and a raised value, both pre-ICU.
      const double before = *plan.aki_time - rng.uniform(14.0, 30.0);
      const double after = std::min(*plan.aki_time + 6.0, -0.1);
      push(events, stay, before, kCreatinine, value(before));
      push(events, stay, after, kCreatinine, value(after));
    } else if (rng.bernoulli(0.6)) {
      const double t = -rng.uniform(24.0, 48.0);
      push(events, stay, t, kCreatinine, value(t));
    }
    const double rate = rate_of(p_, kDynamic[ci]);
    double t = rng.uniform(0.0, 2.0);
    while (t < plan.los) {
      push(events, stay, t, kCreatinine, value(t));
      t += rate > 0.0 ? rng.exponential(rate) : plan.los;
    }
  }

  void emit_urine(std::size_t index, const StayStatic& stay, const StayPlan& plan,
                  std::vector<EventRecord>& events) const {
    const auto& cat = ConceptCatalog::builtin();
    const std::size_t ui = *cat.dynamic_index(kUrine);
    const double p_hour = std::min(1.0, rate_of(p_, kDynamic[ui]));
    if (p_hour <= 0.0) return;
    CounterRng rng = stream(index, kUrineStream);
    const double base_rate = rng.uniform(0.9, 1.8);
    std::optional<double> prev;
    for (double hour = 0.0; hour < plan.los; hour += 1.0) {
      const double t = hour + 0.3 * rng.uniform();
      const double noise = std::exp(0.15 * rng.normal());
      if (t >= plan.los || !rng.bernoulli(p_hour)) continue;
      double r = base_rate;
      if (plan.aki_by_urine && t >= *plan.aki_time - 6.0) r = 0.3;
      const double span = prev ? t - *prev : 1.0;
      push(events, stay, t, kUrine, plan.weight_true * r * noise * std::min(span, 24.0));
      prev = t;
    }
  }

  void emit_sofa(std::size_t index, const StayStatic& stay, const StayPlan& plan,
                 std::vector<EventRecord>& events) const {
    CounterRng rng = stream(index, kSofaStream);
    const double base = std::clamp(std::round(2.0 + 0.8 * plan.risk + 0.7 * rng.normal()), 0.0, 15.0);
    const double jump = static_cast<double>(rng.integer(2, 4));
    std::optional<double> jump_at;
    if (plan.sepsis_time) {
      jump_at = *plan.sepsis_time < 0.0 ? *plan.sepsis_time : *plan.sepsis_time + rng.uniform(0.0, 6.0);
    } else if (rng.bernoulli(0.08)) {
      jump_at = rng.uniform(0.0, plan.los);
    }
    auto value = [&](double t) {
      double v = base + (jump_at && t >= *jump_at ? jump : 0.0);
      const double f = rng.uniform();
      if (f < 0.025) v -= 1.0;
      else if (f > 0.975) v += 1.0;
      return std::clamp(v, 0.0, 24.0);
    };
    if (plan.sepsis_time && *plan.sepsis_time < 0.0) {
      const double before = *plan.sepsis_time - rng.uniform(2.0, 6.0);
      push(events, stay, before, aux_concepts::kSofa, base);
      push(events, stay, *plan.sepsis_time + 0.5, aux_concepts::kSofa, base + jump);
    }
    const double interval = 4.0 / std::max(p_.shift.measurement_rate_multiplier, 0.05);
    for (double t = rng.uniform(0.0, 1.0); t < plan.los; t += interval + rng.uniform(-0.5, 0.5)) {
      push(events, stay, t, aux_concepts::kSofa, value(t));
    }
  }

  void emit_infection(std::size_t index, const StayStatic& stay, const StayPlan& plan,
                      std::vector<EventRecord>& events) const {
    CounterRng arng = stream(index, kAntibioticStream);
    CounterRng crng = stream(index, kCultureStream);
    auto course = [&](double start, double length) {
      if (p_.antibiotics_whole_stay) {
        push(events, stay, std::max(start, 0.0), aux_concepts::kAntibiotic, 1.0, true);
        return;
      }
      const double end = std::min(start + length, plan.los);
      for (double t = start; t <= end; t += arng.uniform(6.0, 12.0)) {
        push(events, stay, t, aux_concepts::kAntibiotic, 1.0);
      }
    };
    if (plan.sepsis_time) {
      const double start = *plan.sepsis_time < 0.0 ? *plan.sepsis_time
                                                   : *plan.sepsis_time + arng.uniform(-2.0, 2.0);
      course(start, arng.uniform(80.0, 150.0));
      push(events, stay, start + crng.uniform(-6.0, 4.0), aux_concepts::kCulture, 1.0);
    } else {
      if (!p_.antibiotics_whole_stay && arng.bernoulli(0.15)) {
        course(arng.uniform(0.0, plan.los), arng.uniform(12.0, 48.0));
      }
      if (crng.bernoulli(0.2)) push(events, stay, crng.uniform(0.0, plan.los), aux_concepts::kCulture, 1.0);
    }
  }

  // Rare record defects that the cohort rules are expected to catch.
  void apply_defects(std::size_t index, StayStatic& stay, const StayPlan& plan,
                     std::vector<EventRecord>& events) const {
    CounterRng rng = stream(index, kDefectStream);
    if (rng.bernoulli(0.002)) stay.icu_discharge.reset();
    if (plan.los > 20.0 && rng.bernoulli(0.01)) {
      const double g = rng.uniform(1.0, plan.los - 15.0);
      const auto& cat = ConceptCatalog::builtin();
      std::erase_if(events, [&](const EventRecord& e) {
        return e.time >= g && e.time < g + 14.0 && cat.contains(e.concept_id);
      });
    }
  }

  const DomainProfile& p_;
  std::uint64_t seed_;
  std::uint64_t domain_key_;
  double beta_age_ = 0.0;
  std::vector<std::pair<std::size_t, double>> beta_;
};

}  // namespace

void DomainProfile::validate() const {
  const std::string at = "domain." + domain_id;
  if (domain_id.empty()) throw ConfigError(at, "domain id is empty");
  if (n_stays == 0) throw ConfigError(at + ".n_stays", "must be at least 1");
  if (!(shift.prevalence_multiplier > 0.0))
    throw ConfigError(at + ".prevalence_multiplier", "must be positive");
  if (!(shift.measurement_rate_multiplier >= 0.0))
    throw ConfigError(at + ".measurement_rate_multiplier", "must be non-negative");
  if (!(shift.coefficient_perturbation >= 0.0))
    throw ConfigError(at + ".coefficient_perturbation", "must be non-negative");
  if (!(los_hours.sigma >= 0.0)) throw ConfigError(at + ".los_sigma", "must be non-negative");
  const auto& cat = ConceptCatalog::builtin();
  for (const auto& [id, r] : measurement_rate) {
    if (!cat.dynamic_index(id)) throw ConfigError(at + ".rate." + id, "not a time-varying concept");
    if (!(r >= 0.0)) throw ConfigError(at + ".rate." + id, "must be non-negative");
  }
  for (const auto& [id, o] : shift.feature_mean_offsets) {
    if (id != "age" && !cat.dynamic_index(id))
      throw ConfigError(at + ".offset." + id, "unknown concept");
    if (!std::isfinite(o)) throw ConfigError(at + ".offset." + id, "must be finite");
  }
}

const std::map<std::string, double>& base_risk_coefficients() {
  static const std::map<std::string, double> beta{
      {"age", 0.35}, {"lact", 0.7},  {"bun", 0.45}, {"hr", 0.4},  {"map", -0.45}, {"resp", 0.35},
      {"plt", -0.35}, {"bili", 0.3}, {"alb", -0.35}, {"ph", -0.4}, {"wbc", 0.3},  {"o2sat", -0.3},
  };
  return beta;
}

std::map<std::string, double> domain_risk_coefficients(const DomainProfile& profile,
                                                       std::uint64_t seed) {
  auto beta = base_risk_coefficients();
  if (profile.shift.coefficient_perturbation > 0.0) {
    CounterRng rng(CounterRng::derive(
        seed, {CounterRng::hash(profile.domain_id), CounterRng::hash("coefficients")}));
    for (auto& [id, b] : beta) b += profile.shift.coefficient_perturbation * rng.normal();
  }
  return beta;
}

SyntheticDataset generate_domain(const DomainProfile& profile, std::uint64_t seed) {
  profile.validate();
  const StayGenerator gen(profile, seed, domain_risk_coefficients(profile, seed));
  const std::size_t n = profile.n_stays;
  std::vector<StayStatic> statics(n);
  std::vector<std::vector<EventRecord>> per_stay(n);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < n; ++i) gen.run(i, statics[i], per_stay[i]);

  SyntheticDataset out;
  out.statics = std::move(statics);
  std::size_t total = 0;
  for (const auto& v : per_stay) total += v.size();
  out.events.reserve(total);
  for (auto& v : per_stay) {
    std::move(v.begin(), v.end(), std::back_inserter(out.events));
    std::vector<EventRecord>().swap(v);
  }
  return out;
}

std::map<std::string, SyntheticDataset> generate_multisite(const GeneratorConfig& config) {
  std::set<std::string> seen;
  for (const auto& p : config.profiles) {
    if (!seen.insert(p.domain_id).second)
      throw ConfigError("domain." + p.domain_id, "duplicate domain id");
  }
  std::map<std::string, SyntheticDataset> out;
  for (const auto& p : config.profiles) {
    const std::uint64_t seed = CounterRng::derive(config.seed, {CounterRng::hash(p.domain_id)});
    out.emplace(p.domain_id, generate_domain(p, seed));
  }
  return out;
}

}  // namespace icudg
