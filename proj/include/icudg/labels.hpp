#pragma once

// Outcome derivation for the three prediction tasks: ICU mortality, onset of
// acute kidney injury (KDIGO stage >= 1) and onset of sepsis (Sepsis-3).
//
// All times are hours relative to ICU admission. Windows written (t - W, t]
// are half-open on the left. Comparisons against clinical thresholds use a
// tolerance of kThresholdEps so that values such as 1.35 / 0.9 land on the
// intended side of 1.5.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icudg/events.hpp"

namespace icudg {

enum class Task { kMortality, kAki, kSepsis };

std::string_view to_string(Task task);
/// Throws DataError for unknown names.
Task task_from_string(std::string_view name);

namespace labels {

inline constexpr double kThresholdEps = 1e-9;

inline constexpr double kBaselineWindowHours = 168.0;
inline constexpr double kCreatinineRiseWindowHours = 48.0;
inline constexpr double kCreatinineRiseMgDl = 0.3;
inline constexpr double kCreatinineStage3MgDl = 4.0;
inline constexpr double kUrineMaxGapHours = 24.0;
inline constexpr double kDefaultWeightKg = 75.0;
/// Sustained low-urine windows need an observation at least this often.
inline constexpr double kUrineMaxObservationGapHours = 12.0;

inline constexpr double kAbxMaxDoseGapHours = 24.0;
inline constexpr double kAbxMinCourseHours = 72.0;
inline constexpr double kCultureAfterAbxHours = 24.0;
inline constexpr double kAbxAfterCultureHours = 72.0;
inline constexpr double kSofaWindowHours = 24.0;
inline constexpr double kSofaRise = 2.0;
inline constexpr double kSepsisBeforeSuspicionHours = 48.0;
inline constexpr double kSepsisAfterSuspicionHours = 24.0;

inline constexpr int kPositiveWindowHours = 6;
inline constexpr int kMaxTrackHours = 168;
inline constexpr int kMortalityInputHours = 24;

enum class SepsisMode { kAbxAndCulture, kAbxOnly };

std::string_view to_string(SepsisMode mode);
SepsisMode sepsis_mode_from_string(std::string_view name);

enum class OnsetCause { kNone, kKdigo1, kKdigo2, kKdigo3, kSofaRise };

struct OnsetResult {
  /// Onset inside the ICU stay (0 <= onset <= discharge); absent otherwise.
  std::optional<double> onset_time;
  OnsetCause cause = OnsetCause::kNone;
  /// Criteria were first met before admission or after discharge.
  bool outside_icu = false;
  /// First time the criteria were met, wherever it falls.
  std::optional<double> raw_onset;
};

// ---- ICU mortality --------------------------------------------------------

/// True iff the patient died in the ICU. Eligibility (alive and present at
/// 30 h) is enforced by the cohort module.
bool mortality_label(const StayStatic& stay);

// ---- KDIGO ------------------------------------------------------------------

/// Lowest creatinine over (t - 168 h, t]; absent when the window is empty.
std::optional<double> kdigo_baseline_creatinine(std::span<const TimedValue> crea, double t);

struct UrineRate {
  double time;
  double rate;          // ml/kg/h
  double covered_from;  // start of the interval the volume was collected over
};

/// Urine output rates per observation. Observations sharing a timestamp are
/// summed first. The first output (or the first after a gap > 24 h) is divided
/// by one hour; rates use the admission weight or 75 kg when missing.
std::vector<UrineRate> urine_rates(std::span<const TimedValue> urine, std::optional<double> weight_kg);

/// Rate of the observation recorded at time t; absent if none was.
std::optional<double> urine_rate(std::span<const TimedValue> urine, std::optional<double> weight_kg,
                                 double t);

/// KDIGO stage at time t using all observations up to t. Creatinine criteria
/// compare the latest value in the baseline window with the 7-day minimum and
/// the 48-hour minimum. A sustained urine criterion of D hours holds at t when
/// every observation in (t - D, t] meets the rate condition, the first of them
/// covers back to t - D, and consecutive observations (and t itself) are at
/// most 12 h apart. Renal replacement therapy is not modelled.
int kdigo_stage(std::span<const TimedValue> crea, std::span<const TimedValue> urine,
                std::optional<double> weight_kg, double t);

/// KDIGO stages evaluated at every integer hour in [first_hour, last_hour].
std::vector<int> kdigo_stages_hourly(std::span<const TimedValue> crea,
                                     std::span<const TimedValue> urine,
                                     std::optional<double> weight_kg, int first_hour,
                                     int last_hour);

/// Earliest integer hour with KDIGO stage >= 1.
OnsetResult aki_onset(const StayTimeline& stay);

/// Creatinine used for the end-stage renal disease exclusion: last value
/// before admission if any, else the earliest value in the ICU.
std::optional<double> admission_baseline_creatinine(const StayTimeline& stay);

// ---- Sepsis-3 ---------------------------------------------------------------

struct AntibioticDose {
  double time;
  bool whole_stay = false;
};

struct AntibioticEpisode {
  double start;
  double end;
  friend bool operator==(const AntibioticEpisode&, const AntibioticEpisode&) = default;
};

/// Qualifying antibiotic courses. Doses chain while consecutive doses are at
/// most 24 h apart; a chain qualifies if it spans >= 72 h, or if death occurs
/// within 24 h of its last dose. A whole-stay prescription qualifies on its own
/// and runs to discharge (or death).
std::vector<AntibioticEpisode> antibiotic_episodes(std::span<const AntibioticDose> doses,
                                                   std::optional<double> death_time,
                                                   std::optional<double> discharge_time);

enum class SuspicionSource { kAbxFirst, kCultureFirst };

struct SuspicionEvent {
  double time;
  SuspicionSource source;
  friend bool operator==(const SuspicionEvent&, const SuspicionEvent&) = default;
};

/// Suspicion of infection, sorted by time without duplicates. In paired mode a
/// culture <= 24 h after an antibiotic course start, or a course started
/// <= 72 h after a culture, gives a suspicion at the earlier of the two. In
/// antibiotics-only mode every qualifying course start is a suspicion.
std::vector<SuspicionEvent> suspicion_of_infection(std::span<const AntibioticEpisode> episodes,
                                                   std::span<const double> culture_times,
                                                   SepsisMode mode);

/// SOFA observation times where the score exceeds the minimum over the
/// preceding (t - 24 h, t] by at least 2 points (sorted, unique).
std::vector<double> sofa_dysfunction_times(std::span<const TimedValue> sofa);

/// Earliest organ dysfunction within [s - 48 h, s + 24 h] of some suspicion s.
std::optional<double> first_dysfunction_near_suspicion(std::span<const double> dysfunction,
                                                       std::span<const SuspicionEvent> suspicion);

OnsetResult sepsis_onset(const StayTimeline& stay, SepsisMode mode);

// ---- label tracks -----------------------------------------------------------

enum class HourLabel : std::uint8_t { kNegative = 0, kPositive = 1, kCensored = 2 };

struct LabelTrack {
  enum class Kind { kSingleAt24h, kHourly };

  Task task = Task::kMortality;
  std::string stay_id;
  Kind kind = Kind::kHourly;
  /// Hours 0..end (inclusive) for hourly tasks; anything past the end is censored.
  std::vector<HourLabel> hourly;
  bool single_label = false;
  std::optional<double> onset_time;

  /// Label at an hour index, kCensored past the end of the track.
  HourLabel at(std::size_t hour) const {
    return hour < hourly.size() ? hourly[hour] : HourLabel::kCensored;
  }
  /// Number of hours carrying a label (1 for mortality).
  std::size_t labelled_hours() const {
    return kind == Kind::kSingleAt24h ? 1 : hourly.size();
  }
};

/// Mortality gives a single label predicted from hours 0..23. Hourly tasks
/// label hours 0.. up to the first of onset + 6 h, discharge, death or 168 h;
/// hours from onset - 6 h on are positive.
LabelTrack build_label_track(const StayTimeline& stay, Task task, const OnsetResult& onset);

/// Onset for the hourly tasks (absent result for mortality).
OnsetResult task_onset(const StayTimeline& stay, Task task, SepsisMode mode);

/// CSV `stay_id,task,hour,label`; mortality rows use hour 23.
void write_label_csv(std::ostream& out, std::span<const LabelTrack> tracks);
/// CSV `stay_id,task,onset_hour` (empty when there is no onset).
void write_onset_csv(std::ostream& out, std::span<const LabelTrack> tracks);

}  // namespace labels
}  // namespace icudg
