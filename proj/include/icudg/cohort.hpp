#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "icudg/catalog.hpp"
#include "icudg/events.hpp"
#include "icudg/labels.hpp"

namespace icudg {

struct CohortRules {
  double min_los_hours = 6.0;
  std::size_t min_measured_bins = 4;
  /// Stays with a run of this many hours (or more) without any feature
  /// measurement are excluded.
  long max_gap_hours = 12;
  double mortality_min_hours = 30.0;
  double min_onset_hours = 6.0;
  double max_baseline_creatinine = 4.0;
};

namespace criteria {
inline constexpr const char* kInvalidTimes = "invalid_admission_discharge";
inline constexpr const char* kShortStay = "los_lt_6h";
inline constexpr const char* kFewMeasuredBins = "lt_4_measured_hours";
inline constexpr const char* kMeasurementGap = "measurement_gap_ge_12h";
inline constexpr const char* kEndsBefore30h = "ends_before_30h";
inline constexpr const char* kOnsetOutsideIcu = "onset_outside_icu";
inline constexpr const char* kEarlyOnset = "onset_lt_6h";
inline constexpr const char* kBaselineCreatinine = "baseline_creatinine_gt_4";
inline constexpr const char* kHospitalWithoutCases = "hospital_without_cases";
}  // namespace criteria

/// Ordered criterion names applied for the base cohort and for each task.
std::vector<std::string> base_criteria();
std::vector<std::string> task_criteria(Task task);

struct ExcludedStay {
  std::string stay_id;
  std::string domain_id;
  std::string criterion;
};

struct ExclusionReport {
  std::vector<std::string> criteria;  // application order
  std::vector<std::size_t> counts;    // parallel to criteria
  /// (criterion, domain) -> count
  std::map<std::pair<std::string, std::string>, std::size_t> by_domain;
  std::vector<ExcludedStay> excluded;
  std::size_t input_count = 0;
  std::size_t included_count = 0;

  std::size_t count(const std::string& criterion) const;
  std::size_t count(const std::string& criterion, const std::string& domain) const;
  std::set<std::string> domains() const;

  /// CSV `criterion,domain,n_excluded`, one row per criterion and domain,
  /// followed by the all-domain total for that criterion.
  void write_csv(std::ostream& out) const;
};

struct CohortSelection {
  std::vector<std::size_t> included;  // indices into the input
  ExclusionReport report;
};

/// Hour indices floor(time) of catalogue feature events with 0 <= time < los.
std::set<long> measured_hourly_bins(const StayTimeline& timeline, const ConceptCatalog& catalog);

/// First failing base criterion, or nullptr when the stay is kept.
const char* base_exclusion_reason(const StayTimeline& timeline, const ConceptCatalog& catalog,
                                  const CohortRules& rules = {});

CohortSelection apply_base_exclusions(std::span<const StayTimeline> stays,
                                      const ConceptCatalog& catalog,
                                      const CohortRules& rules = {});

/// `onsets` is parallel to `stays` (ignored for mortality).
CohortSelection apply_task_exclusions(std::span<const StayTimeline> stays, Task task,
                                      std::span<const labels::OnsetResult> onsets,
                                      const CohortRules& rules = {});

/// Copies the selected stays in index order.
std::vector<StayTimeline> select_stays(std::span<const StayTimeline> stays,
                                       std::span<const std::size_t> indices);

}  // namespace icudg
