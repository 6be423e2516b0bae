#include "fixtures.hpp"

#include <algorithm>

namespace fixtures {

using icudg::CounterRng;
using icudg::EventRecord;
using icudg::StayStatic;
using icudg::StayTimeline;

namespace {

double quarter(CounterRng& rng, double lo, double hi) {
  return 0.25 * static_cast<double>(rng.integer(static_cast<std::int64_t>(lo * 4), static_cast<std::int64_t>(hi * 4)));
}

template <class T>
T pick(CounterRng& rng, std::initializer_list<T> options) {
  return *(options.begin() + rng.below(options.size()));
}

}  // namespace

StayTimeline random_label_stay(std::uint64_t seed, std::size_t index) {
  CounterRng rng(CounterRng::derive(seed, {index}));
  StayTimeline t;
  auto& s = t.stay;
  s.stay_id = "r" + std::to_string(index);
  s.domain_id = "r";
  s.age = 60;
  s.icu_discharge = quarter(rng, 20, 200);
  if (rng.bernoulli(0.25)) {
    s.died_in_icu = true;
    s.death_time = rng.bernoulli(0.5) ? *s.icu_discharge : quarter(rng, 10, *s.icu_discharge);
  }
  if (rng.bernoulli(0.8)) s.weight = static_cast<double>(rng.integer(40, 120));
  const double los = *s.icu_discharge;
  const double w = s.weight.value_or(75.0);

  std::vector<EventRecord> ev;
  auto add = [&](double time, const char* concept_id, double value, bool whole = false) {
    ev.push_back({s.stay_id, time, concept_id, value, whole});
  };

  for (auto n = rng.integer(0, 8); n > 0; --n) {
    const double v = rng.bernoulli(0.5)
                         ? pick(rng, {0.8, 1.0, 1.2, 1.3, 1.5, 1.6, 2.0, 2.4, 3.0, 4.0, 4.5})
                         : 0.1 * static_cast<double>(rng.integer(5, 50));
    add(quarter(rng, -60, los), "crea", v);
  }

  double ut = quarter(rng, 0, 10);
  for (auto n = rng.integer(0, 20); n > 0; --n) {
    const double gap = pick(rng, {1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 12.5, 25.0});
    const double rate = pick(rng, {0.0, 0.2, 0.3, 0.4, 0.5, 0.8, 1.5});
    add(ut, "urine", rate * w * gap * (rng.bernoulli(0.2) ? 0.9 : 1.0));
    if (rng.bernoulli(0.1)) add(ut, "urine", 5.0);  // second entry at the same time
    ut += gap;
  }

  const double abx_start = quarter(rng, -20, std::min(los, 60.0));
  // SOFA often sits a whole number of hours from the first dose, which puts
  // observations exactly on the suspicion window edges.
  double st = rng.bernoulli(0.6) ? abx_start + static_cast<double>(rng.integer(-50, 10)) : quarter(rng, -20, 30);
  double sofa = static_cast<double>(rng.integer(0, 8));
  for (auto n = rng.integer(0, 14); n > 0; --n) {
    add(st, "sofa", sofa);
    st += pick(rng, {1.0, 2.0, 4.0, 6.0, 12.0, 24.0, 25.0});
    sofa = std::clamp(sofa + (rng.bernoulli(0.6) ? 0.0 : static_cast<double>(rng.integer(-2, 3))), 0.0, 20.0);
  }

  double at = abx_start;
  for (auto n = rng.integer(0, 10), k = std::int64_t{0}; k < n; ++k) {
    add(at, "antibiotic", 1.0, k == 0 && rng.bernoulli(0.1));
    at += pick(rng, {6.0, 11.75, 12.0, 20.0, 23.75, 24.0, 24.25, 30.0});
  }

  // Cultures land near the first dose half of the time so both suspicion paths occur.
  for (auto n = rng.integer(0, 3); n > 0; --n)
    add(rng.bernoulli(0.5) ? abx_start + quarter(rng, -80, 30) : quarter(rng, -60, los), "culture", 1.0);

  if (ev.size() > 50) ev.resize(50);
  std::stable_sort(ev.begin(), ev.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.time < b.time; });
  t.events = std::move(ev);
  return t;
}

PlantedCohort planted_cohort() {
  PlantedCohort p;
  int counter = 0;
  // Stays alternate between two domains.
  auto stay = [&](const std::string& name, double los, const std::string& hospital = "h1") {
    StayStatic s;
    const std::string domain = (counter++ % 2 == 0) ? "p" : "q";
    s.stay_id = name;
    s.domain_id = domain;
    s.age = 55;
    s.sex = icudg::Sex::kMale;
    s.weight = 80;
    s.icu_discharge = los;
    s.hospital_id = domain + "-" + hospital;
    p.statics.push_back(s);
    return &p.statics.back();
  };
  auto ev = [&](const std::string& id, double t, const char* concept_id, double v) {
    p.events.push_back({id, t, concept_id, v, false});
  };
  auto hourly = [&](const std::string& id, double from, double to, std::initializer_list<int> skip = {}) {
    for (int h = static_cast<int>(from); h < to; ++h)
      if (std::find(skip.begin(), skip.end(), h) == skip.end()) ev(id, h + 0.5, "hr", 80);
  };
  auto clean_crea = [&](const std::string& id) {
    for (const double t : {2.0, 20.0, 40.0}) ev(id, t, "crea", 1.0);
  };
  auto sepsis_course = [&](const std::string& id, double start, double culture) {
    for (int k = 0; k < 9; ++k) ev(id, start + 10.0 * k, "antibiotic", 1);
    ev(id, culture, "culture", 1);
  };

  // Clean stays in both domains, one of them with an ICU death.
  for (int i = 0; i < 6; ++i) {
    const std::string id = "clean" + std::to_string(i);
    auto* s = stay(id, 48);
    if (i == 3) {
      s->died_in_icu = true;
      s->death_time = 48;
    }
    hourly(id, 0, 48);
    clean_crea(id);
  }
  // Cases in hospital h1 of each domain, so h1 keeps its stays.
  auto aki_case = [&](const std::string& id) {
    stay(id, 48);
    hourly(id, 0, 48);
    ev(id, 2, "crea", 1.0);
    ev(id, 20, "crea", 1.6);  // ratio 1.6 at hour 20
  };
  auto sepsis_case = [&](const std::string& id) {
    stay(id, 48);
    hourly(id, 0, 48);
    clean_crea(id);
    sepsis_course(id, 10, 12);
    ev(id, 5, "sofa", 2);
    ev(id, 10, "sofa", 2);
    ev(id, 15, "sofa", 5);
  };
  // Domains alternate, so this order puts one case of each kind in each domain.
  aki_case("aki_case0");
  sepsis_case("sepsis_case0");
  sepsis_case("sepsis_case1");
  aki_case("aki_case1");

  // ---- base criteria
  {
    auto* s = stay("base_invalid", 48);
    s->died_in_icu = true;
    s->death_time = 60;  // after discharge
    hourly("base_invalid", 0, 48);
    p.base["base_invalid"] = icudg::criteria::kInvalidTimes;
  }
  stay("base_short", 5);
  hourly("base_short", 0, 5);
  p.base["base_short"] = icudg::criteria::kShortStay;
  stay("base_few", 20);
  hourly("base_few", 0, 3);
  p.base["base_few"] = icudg::criteria::kFewMeasuredBins;
  stay("base_gap", 48);
  hourly("base_gap", 0, 48, {10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24});
  p.base["base_gap"] = icudg::criteria::kMeasurementGap;

  // ---- mortality
  stay("mort_short", 25);
  hourly("mort_short", 0, 25);
  clean_crea("mort_short");
  p.task[icudg::Task::kMortality]["mort_short"] = icudg::criteria::kEndsBefore30h;

  // ---- AKI
  stay("aki_outside", 48);
  hourly("aki_outside", 0, 48);
  ev("aki_outside", -30, "crea", 1.0);
  ev("aki_outside", -5, "crea", 1.6);
  ev("aki_outside", 10, "crea", 1.6);
  p.task[icudg::Task::kAki]["aki_outside"] = icudg::criteria::kOnsetOutsideIcu;

  stay("aki_early", 48);
  hourly("aki_early", 0, 48);
  ev("aki_early", 0.5, "crea", 1.0);
  ev("aki_early", 3, "crea", 1.6);
  p.task[icudg::Task::kAki]["aki_early"] = icudg::criteria::kEarlyOnset;

  stay("aki_esrd", 48);
  hourly("aki_esrd", 0, 48);
  for (const double t : {-10.0, 5.0, 20.0}) ev("aki_esrd", t, "crea", 4.5);
  p.task[icudg::Task::kAki]["aki_esrd"] = icudg::criteria::kBaselineCreatinine;

  // ---- sepsis
  stay("sepsis_outside", 48);
  hourly("sepsis_outside", 0, 48);
  clean_crea("sepsis_outside");
  sepsis_course("sepsis_outside", -15, -12);
  ev("sepsis_outside", -20, "sofa", 2);
  ev("sepsis_outside", -10, "sofa", 5);
  p.task[icudg::Task::kSepsis]["sepsis_outside"] = icudg::criteria::kOnsetOutsideIcu;

  stay("sepsis_early", 48);
  hourly("sepsis_early", 0, 48);
  clean_crea("sepsis_early");
  sepsis_course("sepsis_early", 2, 2.5);
  ev("sepsis_early", 0.5, "sofa", 2);
  ev("sepsis_early", 3, "sofa", 5);
  p.task[icudg::Task::kSepsis]["sepsis_early"] = icudg::criteria::kEarlyOnset;

  // ---- a hospital without AKI or sepsis cases
  stay("hospital_empty", 48, "h2");
  hourly("hospital_empty", 0, 48);
  clean_crea("hospital_empty");
  p.task[icudg::Task::kAki]["hospital_empty"] = icudg::criteria::kHospitalWithoutCases;
  p.task[icudg::Task::kSepsis]["hospital_empty"] = icudg::criteria::kHospitalWithoutCases;
  p.task[icudg::Task::kMortality];
  return p;
}

icudg::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  CounterRng rng(seed);
  icudg::Matrix m(rows, cols);
  for (auto& v : m.values()) v = rng.normal();
  return m;
}

std::vector<icudg::Sample> random_samples(std::size_t n, std::size_t max_steps, std::size_t features,
                                          const std::string& domain, std::uint64_t seed,
                                          double shift) {
  CounterRng rng(seed);
  std::vector<icudg::Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    icudg::Sample s;
    s.stay_id = domain + std::to_string(i);
    s.domain_id = domain;
    const auto steps = static_cast<std::size_t>(rng.integer(2, static_cast<std::int64_t>(max_steps)));
    s.x = icudg::Matrix(steps, features);
    for (auto& v : s.x.values()) v = rng.normal() + shift;
    s.labels.assign(steps, -1);
    for (std::size_t t = 0; t < steps; ++t)
      if (t == steps - 1 || rng.bernoulli(0.7)) s.labels[t] = static_cast<std::int8_t>(rng.bernoulli(0.4));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace fixtures
