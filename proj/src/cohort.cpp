#include "icudg/cohort.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "icudg/error.hpp"

namespace icudg {

namespace {

void record(ExclusionReport& report, const StayTimeline& s, const std::string& criterion) {
  for (std::size_t i = 0; i < report.criteria.size(); ++i) {
    if (report.criteria[i] == criterion) {
      ++report.counts[i];
      break;
    }
  }
  ++report.by_domain[{criterion, s.stay.domain_id}];
  report.excluded.push_back({s.stay.stay_id, s.stay.domain_id, criterion});
}

ExclusionReport empty_report(std::vector<std::string> criteria, std::size_t n) {
  ExclusionReport report;
  report.counts.assign(criteria.size(), 0);
  report.criteria = std::move(criteria);
  report.input_count = n;
  return report;
}

}  // namespace

std::vector<std::string> base_criteria() {
  return {criteria::kInvalidTimes, criteria::kShortStay, criteria::kFewMeasuredBins,
          criteria::kMeasurementGap};
}

std::vector<std::string> task_criteria(Task task) {
  switch (task) {
    case Task::kMortality: return {criteria::kEndsBefore30h};
    case Task::kAki:
      return {criteria::kOnsetOutsideIcu, criteria::kEarlyOnset, criteria::kBaselineCreatinine,
              criteria::kHospitalWithoutCases};
    case Task::kSepsis:
      return {criteria::kOnsetOutsideIcu, criteria::kEarlyOnset,
              criteria::kHospitalWithoutCases};
  }
  throw DataError("unknown task");
}

std::size_t ExclusionReport::count(const std::string& criterion) const {
  for (std::size_t i = 0; i < criteria.size(); ++i)
    if (criteria[i] == criterion) return counts[i];
  return 0;
}

std::size_t ExclusionReport::count(const std::string& criterion, const std::string& domain) const {
  auto it = by_domain.find({criterion, domain});
  return it == by_domain.end() ? 0 : it->second;
}

std::set<std::string> ExclusionReport::domains() const {
  std::set<std::string> out;
  for (const auto& [key, n] : by_domain) out.insert(key.second);
  return out;
}

void ExclusionReport::write_csv(std::ostream& out) const {
  out << "criterion,domain,n_excluded\n";
  const auto doms = domains();
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    for (const auto& d : doms) out << criteria[i] << ',' << d << ',' << count(criteria[i], d) << '\n';
    out << criteria[i] << ",all," << counts[i] << '\n';
  }
}

std::set<long> measured_hourly_bins(const StayTimeline& timeline, const ConceptCatalog& catalog) {
  std::set<long> bins;
  if (!timeline.stay.icu_discharge) return bins;
  const double los = *timeline.stay.icu_discharge;
  for (const auto& e : timeline.events) {
    if (e.time < 0.0 || e.time >= los) continue;
    if (!catalog.dynamic_index(e.concept_id)) continue;
    bins.insert(static_cast<long>(std::floor(e.time)));
  }
  return bins;
}

const char* base_exclusion_reason(const StayTimeline& timeline, const ConceptCatalog& catalog,
                                  const CohortRules& rules) {
  const auto& s = timeline.stay;
  if (!s.icu_discharge || !(*s.icu_discharge > 0.0) ||
      (s.death_time && *s.death_time > *s.icu_discharge)) {
    return criteria::kInvalidTimes;
  }
  const double los = *s.icu_discharge;
  if (los < rules.min_los_hours) return criteria::kShortStay;
  const auto bins = measured_hourly_bins(timeline, catalog);
  if (bins.size() < rules.min_measured_bins) return criteria::kFewMeasuredBins;

  // Gaps are measured between consecutive measured hours, with the first and
  // last hour of the stay acting as boundaries.
  const long final_bin = static_cast<long>(std::ceil(los)) - 1;
  long previous = 0;
  for (const long b : bins) {
    if (b - previous >= rules.max_gap_hours) return criteria::kMeasurementGap;
    previous = b;
  }
  if (final_bin - previous >= rules.max_gap_hours) return criteria::kMeasurementGap;
  return nullptr;
}

CohortSelection apply_base_exclusions(std::span<const StayTimeline> stays,
                                      const ConceptCatalog& catalog, const CohortRules& rules) {
  std::vector<const char*> reasons(stays.size(), nullptr);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::size_t i = 0; i < stays.size(); ++i)
    reasons[i] = base_exclusion_reason(stays[i], catalog, rules);

  CohortSelection sel;
  sel.report = empty_report(base_criteria(), stays.size());
  for (std::size_t i = 0; i < stays.size(); ++i) {
    if (reasons[i]) {
      record(sel.report, stays[i], reasons[i]);
    } else {
      sel.included.push_back(i);
    }
  }
  sel.report.included_count = sel.included.size();
  return sel;
}

CohortSelection apply_task_exclusions(std::span<const StayTimeline> stays, Task task,
                                      std::span<const labels::OnsetResult> onsets,
                                      const CohortRules& rules) {
  if (task != Task::kMortality && onsets.size() != stays.size()) {
    throw ShapeError("task exclusions need one onset result per stay");
  }
  CohortSelection sel;
  sel.report = empty_report(task_criteria(task), stays.size());

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < stays.size(); ++i) {
    const auto& s = stays[i].stay;
    const char* reason = nullptr;
    if (task == Task::kMortality) {
      double end = s.icu_discharge.value_or(0.0);
      if (s.death_time) end = std::min(end, *s.death_time);
      if (end < rules.mortality_min_hours) reason = criteria::kEndsBefore30h;
    } else {
      const auto& onset = onsets[i];
      if (onset.outside_icu) {
        reason = criteria::kOnsetOutsideIcu;
      } else if (onset.onset_time && *onset.onset_time < rules.min_onset_hours) {
        reason = criteria::kEarlyOnset;
      } else if (task == Task::kAki) {
        const auto base = labels::admission_baseline_creatinine(stays[i]);
        if (base && *base > rules.max_baseline_creatinine) reason = criteria::kBaselineCreatinine;
      }
    }
    if (reason) {
      record(sel.report, stays[i], reason);
    } else {
      kept.push_back(i);
    }
  }

  if (task != Task::kMortality) {
    // Hospitals (within a domain) contributing no cases among the kept stays.
    std::map<std::pair<std::string, std::string>, std::size_t> cases;
    for (const auto i : kept) {
      const auto& s = stays[i].stay;
      if (!s.hospital_id) continue;
      auto& n = cases[{s.domain_id, *s.hospital_id}];
      if (onsets[i].onset_time) ++n;
    }
    std::vector<std::size_t> still;
    for (const auto i : kept) {
      const auto& s = stays[i].stay;
      if (s.hospital_id && cases[{s.domain_id, *s.hospital_id}] == 0) {
        record(sel.report, stays[i], criteria::kHospitalWithoutCases);
      } else {
        still.push_back(i);
      }
    }
    kept = std::move(still);
  }
  sel.included = std::move(kept);
  sel.report.included_count = sel.included.size();
  return sel;
}

std::vector<StayTimeline> select_stays(std::span<const StayTimeline> stays,
                                       std::span<const std::size_t> indices) {
  std::vector<StayTimeline> out;
  out.reserve(indices.size());
  for (const auto i : indices) out.push_back(stays[i]);
  return out;
}

}  // namespace icudg
