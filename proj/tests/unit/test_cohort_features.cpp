#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "fixtures.hpp"
#include "icudg/cohort.hpp"
#include "icudg/experiment.hpp"
#include "icudg/featurizer.hpp"
#include "icudg/synthgen.hpp"

using namespace icudg;

namespace {

const ConceptCatalog& cat() { return ConceptCatalog::builtin(); }

StayTimeline hourly_stay(const std::string& id, double los, std::initializer_list<int> skip = {}) {
  StayTimeline t;
  t.stay.stay_id = id;
  t.stay.domain_id = "a";
  t.stay.age = 60;
  t.stay.icu_discharge = los;
  for (int h = 0; h < los; ++h)
    if (std::find(skip.begin(), skip.end(), h) == skip.end()) t.events.push_back({id, h + 0.5, "hr", 80});
  return t;
}

}  // namespace

TEST(Cohort, BaseCriteriaExamples) {
  EXPECT_STREQ(base_exclusion_reason(hourly_stay("s", 5), cat()), criteria::kShortStay);
  auto few = hourly_stay("s", 20);
  few.events.resize(3);
  EXPECT_STREQ(base_exclusion_reason(few, cat()), criteria::kFewMeasuredBins);
  // Measurements at 10.5 and 21.5 are 11 h apart; at 10.5 and 22.5, 12 h.
  auto ok = hourly_stay("s", 30, {11, 12, 13, 14, 15, 16, 17, 18, 19, 20});
  EXPECT_EQ(base_exclusion_reason(ok, cat()), nullptr);
  auto gap = hourly_stay("s", 30, {11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21});
  EXPECT_STREQ(base_exclusion_reason(gap, cat()), criteria::kMeasurementGap);
  auto missing = hourly_stay("s", 30);
  missing.stay.icu_discharge.reset();
  EXPECT_STREQ(base_exclusion_reason(missing, cat()), criteria::kInvalidTimes);
}

TEST(Cohort, TaskCriteriaExamples) {
  auto died = hourly_stay("d", 29);
  died.stay.died_in_icu = true;
  died.stay.death_time = 29;
  const std::vector<StayTimeline> one{died};
  const std::vector<labels::OnsetResult> none(1);
  EXPECT_EQ(apply_task_exclusions(one, Task::kMortality, none).report.count(criteria::kEndsBefore30h), 1u);

  auto esrd = hourly_stay("e", 48);
  esrd.events.push_back({"e", 1.0, "crea", 4.2});
  std::stable_sort(esrd.events.begin(), esrd.events.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.time < b.time; });
  EXPECT_EQ(labels::admission_baseline_creatinine(esrd), 4.2);
  const std::vector<StayTimeline> e{esrd};
  EXPECT_EQ(apply_task_exclusions(e, Task::kAki, none).report.count(criteria::kBaselineCreatinine), 1u);

  const std::vector<StayTimeline> s{hourly_stay("s", 48)};
  std::vector<labels::OnsetResult> early(1);
  early[0].onset_time = 5;
  early[0].raw_onset = 5;
  EXPECT_EQ(apply_task_exclusions(s, Task::kSepsis, early).report.count(criteria::kEarlyOnset), 1u);
}

TEST(Cohort, ReportPartitionsAndIdempotence) {
  const auto fx = fixtures::planted_cohort();
  const auto stays = assemble_stays(fx.statics, fx.events);
  const auto sel = apply_base_exclusions(stays, cat());
  std::size_t total = 0;
  for (const auto c : sel.report.counts) total += c;
  EXPECT_EQ(total + sel.report.included_count, sel.report.input_count);
  EXPECT_EQ(sel.report.criteria, base_criteria());
  const auto kept = select_stays(stays, sel.included);
  const auto again = apply_base_exclusions(kept, cat());
  EXPECT_EQ(again.included.size(), kept.size());
  std::ostringstream csv;
  sel.report.write_csv(csv);
  EXPECT_NE(csv.str().find("criterion,domain,n_excluded"), std::string::npos);
}

TEST(Cohort, AddingEventsNeverCausesMeasurementExclusions) {
  for (std::size_t i = 0; i < 200; ++i) {
    CounterRng rng(i);
    auto s = hourly_stay("s", static_cast<double>(rng.integer(8, 60)));
    std::erase_if(s.events, [&](const EventRecord&) { return rng.bernoulli(0.6); });
    const char* before = base_exclusion_reason(s, cat());
    auto more = s;
    more.events.push_back({"s", rng.uniform(0, *s.stay.icu_discharge), "map", 70});
    std::stable_sort(more.events.begin(), more.events.end(),
                     [](const EventRecord& a, const EventRecord& b) { return a.time < b.time; });
    const char* after = base_exclusion_reason(more, cat());
    if (before == nullptr) EXPECT_EQ(after, nullptr) << i;
    if (after && (std::string(after) == criteria::kFewMeasuredBins || std::string(after) == criteria::kMeasurementGap))
      EXPECT_NE(before, nullptr) << i;
  }
}

// ---- featurizer ----------------------------------------------------------------

TEST(Featurizer, DiscretiseMeansWithinHour) {
  StayTimeline t;
  t.stay.stay_id = "s";
  t.stay.icu_discharge = 5;
  t.events = {{"s", 1.2, "hr", 80}, {"s", 1.8, "hr", 90}, {"s", 2.0, "map", 70}, {"s", -1.0, "map", 10}};
  const auto g = discretise(t, cat(), 168);
  const auto hr = *cat().dynamic_index("hr");
  const auto map = *cat().dynamic_index("map");
  EXPECT_EQ(g.hours, 5u);
  EXPECT_DOUBLE_EQ(g.values(1, hr), 85.0);
  EXPECT_TRUE(g.is_observed(1, hr));
  EXPECT_FALSE(g.is_observed(0, hr));
  EXPECT_TRUE(g.is_observed(2, map));
  EXPECT_FALSE(g.is_observed(0, map));  // pre-admission values stay out of the grid
  const auto last = discretise(t, cat(), 168, BinAggregation::kLast);
  EXPECT_DOUBLE_EQ(last.values(1, hr), 90.0);
}

TEST(Featurizer, LocfCarriesForwardAndIsIdempotent) {
  StayTimeline t;
  t.stay.stay_id = "s";
  t.stay.icu_discharge = 6;
  t.events = {{"s", 0.5, "hr", 1.0}, {"s", 3.5, "hr", 2.0}};
  const auto g = locf_impute(discretise(t, cat(), 168));
  const auto hr = *cat().dynamic_index("hr");
  const double expect[] = {1, 1, 1, 2, 2, 2};
  for (std::size_t h = 0; h < 6; ++h) EXPECT_EQ(g.values(h, hr), expect[h]);
  EXPECT_TRUE(std::isnan(g.values(0, *cat().dynamic_index("map"))));
  const auto twice = locf_impute(g);
  for (std::size_t i = 0; i < g.values.size(); ++i)
    EXPECT_TRUE(g.values[i] == twice.values[i] || (std::isnan(g.values[i]) && std::isnan(twice.values[i])));
  EXPECT_EQ(g.observed, twice.observed);
}

TEST(Featurizer, NormStatsAndFinalize) {
  StayTimeline a, b;
  a.stay.stay_id = "a";
  a.stay.icu_discharge = 2;
  a.stay.height = 170;
  a.events = {{"a", 1.5, "hr", 1.0}};
  b.stay.stay_id = "b";
  b.stay.icu_discharge = 2;
  b.events = {{"b", 0.5, "hr", 3.0}, {"b", 0.6, "temp", 37.0}};
  const std::vector<HourlyGrid> grids{locf_impute(discretise(a, cat(), 168)), locf_impute(discretise(b, cat(), 168))};
  const auto stats = fit_norm_stats(grids);
  const auto hr = kStaticCount + *cat().dynamic_index("hr");
  const auto temp = kStaticCount + *cat().dynamic_index("temp");
  EXPECT_DOUBLE_EQ(stats.mean[hr], 2.0);
  EXPECT_DOUBLE_EQ(stats.sd[hr], 1.0);
  EXPECT_DOUBLE_EQ(stats.sd[temp], kMinStandardDeviation);
  const auto x = finalize(grids[0], stats);
  ASSERT_EQ(x.cols(), kFeatureWidth);
  EXPECT_EQ(x(0, hr), 0.0);  // leading missing: mean-filled, so 0 after normalisation
  EXPECT_EQ(x(0, kConceptCount + hr), 1.0);
  EXPECT_EQ(x(1, hr), -1.0);
  EXPECT_EQ(x(1, kConceptCount + hr), 0.0);
  const auto height = *cat().static_index("height");
  const auto xb = finalize(grids[1], stats);
  EXPECT_EQ(xb(0, height), 0.0);
  EXPECT_EQ(xb(0, kConceptCount + height), 1.0);
  for (const double v : x.values()) EXPECT_FALSE(std::isnan(v));
  std::stringstream js;
  stats.write_json(js);
  EXPECT_TRUE(NormStats::read_json(js) == stats);
}

TEST(Featurizer, TrainingCellsAreStandardised) {
  auto data = generate_domain(DomainProfile{"a", 60}, 5);
  const auto stays = assemble_stays(data.statics, data.events);
  std::vector<HourlyGrid> grids;
  for (const auto& s : stays) grids.push_back(locf_impute(discretise(s, cat(), 168)));
  const auto stats = fit_norm_stats(grids);
  for (std::size_t j = 0; j < kDynamicCount; ++j) {
    double s = 0, s2 = 0, n = 0;
    for (const auto& g : grids) {
      const auto x = finalize(g, stats);
      for (std::size_t t = 0; t < g.hours; ++t) {
        if (!g.is_observed(t, j)) continue;
        const double v = x(t, kStaticCount + j);
        s += v;
        s2 += v * v;
        ++n;
      }
    }
    if (n < 2) continue;
    EXPECT_NEAR(s / n, 0.0, 1e-6) << j;
    if (stats.sd[kStaticCount + j] > kMinStandardDeviation) EXPECT_NEAR(s2 / n, 1.0, 1e-3) << j;
  }
}

TEST(Featurizer, TensorDumpRoundTrip) {
  const std::vector<std::string> ids{"x", "y"};
  const std::vector<Matrix> t{fixtures::random_matrix(3, kFeatureWidth, 1), fixtures::random_matrix(1, kFeatureWidth, 2)};
  std::stringstream ss;
  write_tensor_dump(ss, ids, t, cat());
  const auto d = read_tensor_dump(ss);
  EXPECT_EQ(d.stay_ids, ids);
  ASSERT_EQ(d.tensors.size(), 2u);
  EXPECT_NEAR(d.tensors[0](2, 7), static_cast<float>(t[0](2, 7)), 0.0);
  EXPECT_EQ(d.columns, feature_columns(cat()));
}

// ---- synthgen ------------------------------------------------------------------

TEST(Synthgen, DeterministicAndSized) {
  DomainProfile p{"a", 40};
  const auto x = generate_domain(p, 9), y = generate_domain(p, 9);
  EXPECT_EQ(x.statics, y.statics);
  EXPECT_EQ(x.events, y.events);
  EXPECT_EQ(generate_domain(DomainProfile{"a", 1}, 9).statics.size(), 1u);
  EXPECT_ANY_THROW(generate_domain(DomainProfile{"a", 0}, 9));
  EXPECT_NE(generate_domain(p, 10).events, x.events);
}

TEST(Synthgen, PrevalenceMultiplierScalesPrevalence) {
  auto rate = [](double m) {
    DomainProfile p{"a", 5000};
    p.shift.prevalence_multiplier = m;
    const auto d = generate_domain(p, 17);
    double deaths = 0;
    for (const auto& s : d.statics) deaths += s.died_in_icu;
    return deaths / static_cast<double>(d.statics.size());
  };
  const double r1 = rate(1.0), r2 = rate(2.0);
  EXPECT_NEAR(r2 / r1, 2.0, 0.4) << r1 << " " << r2;
}

TEST(Synthgen, MultisiteRejectsDuplicateDomains) {
  GeneratorConfig c{1, {DomainProfile{"a", 5}, DomainProfile{"a", 5}}};
  EXPECT_ANY_THROW(generate_multisite(c));
}

TEST(Synthgen, ProducesLabelAndModelConcepts) {
  const auto d = generate_domain(DomainProfile{"a", 200}, 3);
  std::set<std::string> concepts;
  for (const auto& e : d.events) concepts.insert(e.concept_id);
  for (const char* c : {"crea", "urine", "sofa", "antibiotic", "culture", "hr"}) EXPECT_TRUE(concepts.count(c)) << c;
  for (const auto& e : d.events) EXPECT_TRUE(cat().accepts_event_concept(e.concept_id));
}
