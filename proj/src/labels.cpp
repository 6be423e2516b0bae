#include "icudg/labels.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>

#include "icudg/error.hpp"

namespace icudg {

std::string_view to_string(Task task) {
  switch (task) {
    case Task::kMortality: return "mortality";
    case Task::kAki: return "aki";
    case Task::kSepsis: return "sepsis";
  }
  return "mortality";
}

Task task_from_string(std::string_view name) {
  if (name == "mortality") return Task::kMortality;
  if (name == "aki") return Task::kAki;
  if (name == "sepsis") return Task::kSepsis;
  throw DataError("unknown task '" + std::string(name) + "' (expected mortality, aki or sepsis)");
}

namespace labels {

namespace {

bool at_least(double value, double threshold) { return value >= threshold - kThresholdEps; }

struct CreatinineState {
  std::optional<double> current;
  std::optional<double> min_week;
  std::optional<double> min_48h;
};

int creatinine_stage(const CreatinineState& s) {
  if (!s.current) return 0;
  int stage = 0;
  const double cur = *s.current;
  if (s.min_week && *s.min_week > 0.0) {
    const double ratio = cur / *s.min_week;
    if (at_least(ratio, 3.0)) {
      stage = 3;
    } else if (at_least(ratio, 2.0)) {
      stage = 2;
    } else if (at_least(ratio, 1.5)) {
      stage = 1;
    }
  }
  if (s.min_48h) {
    const double rise = cur - *s.min_48h;
    if (at_least(rise, kCreatinineRiseMgDl)) {
      stage = std::max(stage, 1);
      if (at_least(cur, kCreatinineStage3MgDl)) stage = 3;
    }
  }
  return stage;
}

struct UrineCondition {
  double hours;
  int stage;
  bool (*holds)(double rate);
};

constexpr UrineCondition kUrineConditions[] = {
    {6.0, 1, [](double r) { return r < 0.5; }},
    {12.0, 2, [](double r) { return r < 0.5; }},
    {24.0, 3, [](double r) { return r < 0.3; }},
    {12.0, 3, [](double r) { return r <= 0.0; }},
};

// Precomputed per-observation lookups for the sustained-urine test.
struct UrineIndex {
  std::vector<UrineRate> rates;
  std::vector<double> times;
  // Per condition: last index <= k whose rate violates it (-1 if none).
  std::vector<std::vector<long>> last_violation;
  // Last index j <= k with times[j] - times[j-1] above the observation gap (0 if none).
  std::vector<long> last_big_gap;

  UrineIndex(std::span<const TimedValue> urine, std::optional<double> weight)
      : rates(urine_rates(urine, weight)) {
    const std::size_t n = rates.size();
    times.resize(n);
    for (std::size_t i = 0; i < n; ++i) times[i] = rates[i].time;
    last_violation.assign(std::size(kUrineConditions), std::vector<long>(n, -1));
    for (std::size_t c = 0; c < std::size(kUrineConditions); ++c) {
      long last = -1;
      for (std::size_t i = 0; i < n; ++i) {
        if (!kUrineConditions[c].holds(rates[i].rate)) last = static_cast<long>(i);
        last_violation[c][i] = last;
      }
    }
    last_big_gap.assign(n, 0);
    long big = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (times[i] - times[i - 1] > kUrineMaxObservationGapHours) big = static_cast<long>(i);
      last_big_gap[i] = big;
    }
  }

  int stage_at(double t) const {
    const auto last_it = std::upper_bound(times.begin(), times.end(), t);
    if (last_it == times.begin()) return 0;
    const long last = static_cast<long>(last_it - times.begin()) - 1;
    if (t - times[last] > kUrineMaxObservationGapHours) return 0;
    int stage = 0;
    for (std::size_t c = 0; c < std::size(kUrineConditions); ++c) {
      const auto& cond = kUrineConditions[c];
      if (cond.stage <= stage) continue;
      const double window_start = t - cond.hours;
      const long first =
          static_cast<long>(std::upper_bound(times.begin(), times.end(), window_start) - times.begin());
      if (first > last) continue;
      if (last_violation[c][last] >= first) continue;
      if (rates[first].covered_from > window_start) continue;
      if (last_big_gap[last] > first) continue;
      stage = cond.stage;
    }
    return stage;
  }
};

std::vector<double> times_of(const StayTimeline& stay, std::string_view concept_id) {
  std::vector<double> out;
  for (const auto& e : stay.events)
    if (e.concept_id == concept_id) out.push_back(e.time);
  return out;
}

OnsetResult finish_onset(std::optional<double> raw, OnsetCause cause, const StayStatic& stay) {
  OnsetResult result;
  if (!raw) return result;
  result.raw_onset = raw;
  result.cause = cause;
  const bool before = *raw < 0.0;
  const bool after = stay.icu_discharge && *raw > *stay.icu_discharge;
  if (before || after) {
    result.outside_icu = true;
  } else {
    result.onset_time = raw;
  }
  return result;
}

}  // namespace

std::string_view to_string(SepsisMode mode) {
  return mode == SepsisMode::kAbxOnly ? "abx_only" : "abx_and_culture";
}

SepsisMode sepsis_mode_from_string(std::string_view name) {
  if (name == "abx_and_culture") return SepsisMode::kAbxAndCulture;
  if (name == "abx_only") return SepsisMode::kAbxOnly;
  throw DataError("unknown sepsis mode '" + std::string(name) +
                  "' (expected abx_and_culture or abx_only)");
}

bool mortality_label(const StayStatic& stay) { return stay.died_in_icu; }

std::optional<double> kdigo_baseline_creatinine(std::span<const TimedValue> crea, double t) {
  std::optional<double> best;
  for (const auto& c : crea) {
    if (c.time > t - kBaselineWindowHours && c.time <= t) {
      if (!best || c.value < *best) best = c.value;
    }
  }
  return best;
}

std::vector<UrineRate> urine_rates(std::span<const TimedValue> urine,
                                   std::optional<double> weight_kg) {
  const double weight = weight_kg.value_or(kDefaultWeightKg);
  std::vector<TimedValue> merged;
  for (const auto& u : urine) {
    if (!merged.empty() && merged.back().time == u.time) {
      merged.back().value += u.value;
    } else {
      merged.push_back(u);
    }
  }
  std::vector<UrineRate> out;
  out.reserve(merged.size());
  for (std::size_t i = 0; i < merged.size(); ++i) {
    double hours = 1.0;
    if (i > 0) {
      const double gap = merged[i].time - merged[i - 1].time;
      if (gap <= kUrineMaxGapHours) hours = gap;
    }
    out.push_back({merged[i].time, merged[i].value / hours / weight, merged[i].time - hours});
  }
  return out;
}

std::optional<double> urine_rate(std::span<const TimedValue> urine,
                                 std::optional<double> weight_kg, double t) {
  for (const auto& r : urine_rates(urine, weight_kg))
    if (r.time == t) return r.rate;
  return std::nullopt;
}

int kdigo_stage(std::span<const TimedValue> crea, std::span<const TimedValue> urine,
                std::optional<double> weight_kg, double t) {
  CreatinineState s;
  for (const auto& c : crea) {
    if (c.time > t) break;
    if (c.time > t - kBaselineWindowHours) {
      s.current = c.value;
      s.min_week = s.min_week ? std::min(*s.min_week, c.value) : c.value;
    }
    if (c.time > t - kCreatinineRiseWindowHours) {
      s.min_48h = s.min_48h ? std::min(*s.min_48h, c.value) : c.value;
    }
  }
  const int cr = creatinine_stage(s);
  if (cr == 3) return 3;
  return std::max(cr, UrineIndex(urine, weight_kg).stage_at(t));
}

std::vector<int> kdigo_stages_hourly(std::span<const TimedValue> crea,
                                     std::span<const TimedValue> urine,
                                     std::optional<double> weight_kg, int first_hour,
                                     int last_hour) {
  std::vector<int> out;
  if (last_hour < first_hour) return out;
  out.reserve(static_cast<std::size_t>(last_hour - first_hour + 1));
  const UrineIndex urine_index(urine, weight_kg);

  // Monotone deques of indices holding increasing creatinine values.
  std::deque<std::size_t> week, recent;
  std::size_t next = 0;
  auto push = [&](std::deque<std::size_t>& dq, std::size_t i) {
    while (!dq.empty() && crea[dq.back()].value >= crea[i].value) dq.pop_back();
    dq.push_back(i);
  };
  for (int hour = first_hour; hour <= last_hour; ++hour) {
    const double t = hour;
    while (next < crea.size() && crea[next].time <= t) {
      push(week, next);
      push(recent, next);
      ++next;
    }
    while (!week.empty() && crea[week.front()].time <= t - kBaselineWindowHours) week.pop_front();
    while (!recent.empty() && crea[recent.front()].time <= t - kCreatinineRiseWindowHours)
      recent.pop_front();
    CreatinineState s;
    if (next > 0 && crea[next - 1].time > t - kBaselineWindowHours) {
      s.current = crea[next - 1].value;
      s.min_week = crea[week.front()].value;
      if (!recent.empty()) s.min_48h = crea[recent.front()].value;
    }
    const int cr = creatinine_stage(s);
    out.push_back(cr == 3 ? 3 : std::max(cr, urine_index.stage_at(t)));
  }
  return out;
}

OnsetResult aki_onset(const StayTimeline& stay) {
  const auto crea = stay.series(kCreatinine);
  const auto urine = stay.series(kUrine);
  if (crea.empty() && urine.empty()) return {};
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto* s : {&crea, &urine}) {
    if (s->empty()) continue;
    lo = std::min(lo, s->front().time);
    hi = std::max(hi, s->back().time);
  }
  // Sustained urine criteria can complete up to one observation gap after the
  // last measurement.
  const int first = static_cast<int>(std::floor(lo));
  const int last = static_cast<int>(std::ceil(hi + kUrineMaxObservationGapHours)) + 1;
  const auto stages = kdigo_stages_hourly(crea, urine, stay.stay.weight, first, last);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i] >= 1) {
      const auto cause = stages[i] == 1   ? OnsetCause::kKdigo1
                         : stages[i] == 2 ? OnsetCause::kKdigo2
                                          : OnsetCause::kKdigo3;
      return finish_onset(static_cast<double>(first + static_cast<int>(i)), cause, stay.stay);
    }
  }
  return {};
}

std::optional<double> admission_baseline_creatinine(const StayTimeline& stay) {
  std::optional<double> before, inside;
  for (const auto& e : stay.events) {
    if (e.concept_id != kCreatinine) continue;
    if (e.time < 0.0) {
      before = e.value;
    } else if (!inside) {
      inside = e.value;
    }
  }
  return before ? before : inside;
}

std::vector<AntibioticEpisode> antibiotic_episodes(std::span<const AntibioticDose> doses,
                                                   std::optional<double> death_time,
                                                   std::optional<double> discharge_time) {
  std::vector<AntibioticEpisode> out;
  std::vector<double> times;
  for (const auto& d : doses) {
    if (d.whole_stay) {
      const double end = death_time ? *death_time : discharge_time.value_or(d.time);
      out.push_back({d.time, std::max(d.time, end)});
    } else {
      times.push_back(d.time);
    }
  }
  std::sort(times.begin(), times.end());
  std::size_t i = 0;
  while (i < times.size()) {
    std::size_t j = i;
    while (j + 1 < times.size() && times[j + 1] - times[j] <= kAbxMaxDoseGapHours) ++j;
    const double start = times[i];
    const double end = times[j];
    const bool long_course = at_least(end - start, kAbxMinCourseHours);
    const bool until_death = death_time && *death_time <= end + kAbxMaxDoseGapHours;
    if (long_course || until_death) out.push_back({start, end});
    i = j + 1;
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.start != b.start ? a.start < b.start : a.end < b.end;
  });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<SuspicionEvent> suspicion_of_infection(std::span<const AntibioticEpisode> episodes,
                                                   std::span<const double> culture_times,
                                                   SepsisMode mode) {
  std::vector<SuspicionEvent> out;
  for (const auto& ep : episodes) {
    const double a = ep.start;
    if (mode == SepsisMode::kAbxOnly) {
      out.push_back({a, SuspicionSource::kAbxFirst});
      continue;
    }
    for (const double c : culture_times) {
      if (c >= a && c - a <= kCultureAfterAbxHours) {
        out.push_back({a, SuspicionSource::kAbxFirst});
      } else if (c < a && a - c <= kAbxAfterCultureHours) {
        out.push_back({c, SuspicionSource::kCultureFirst});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    return x.time != y.time ? x.time < y.time : x.source < y.source;
  });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<double> sofa_dysfunction_times(std::span<const TimedValue> sofa) {
  std::vector<double> out;
  std::size_t lo = 0;
  for (std::size_t i = 0; i < sofa.size(); ++i) {
    const double t = sofa[i].time;
    while (lo < sofa.size() && sofa[lo].time <= t - kSofaWindowHours) ++lo;
    double window_min = sofa[i].value;
    for (std::size_t j = lo; j < sofa.size() && sofa[j].time <= t; ++j)
      window_min = std::min(window_min, sofa[j].value);
    if (at_least(sofa[i].value - window_min, kSofaRise)) {
      if (out.empty() || out.back() != t) out.push_back(t);
    }
  }
  return out;
}

std::optional<double> first_dysfunction_near_suspicion(std::span<const double> dysfunction,
                                                       std::span<const SuspicionEvent> suspicion) {
  for (const double d : dysfunction) {
    for (const auto& s : suspicion) {
      if (s.time - kSepsisBeforeSuspicionHours <= d && d <= s.time + kSepsisAfterSuspicionHours)
        return d;
    }
  }
  return std::nullopt;
}

OnsetResult sepsis_onset(const StayTimeline& stay, SepsisMode mode) {
  std::vector<AntibioticDose> doses;
  for (const auto* e : stay.events_of(aux_concepts::kAntibiotic))
    doses.push_back({e->time, e->whole_stay});
  const auto episodes = antibiotic_episodes(doses, stay.stay.death_time, stay.stay.icu_discharge);
  const auto cultures = times_of(stay, aux_concepts::kCulture);
  const auto suspicion = suspicion_of_infection(episodes, cultures, mode);
  if (suspicion.empty()) return {};
  const auto sofa = stay.series(aux_concepts::kSofa);
  std::vector<double> dysfunction = sofa_dysfunction_times(sofa);
  return finish_onset(first_dysfunction_near_suspicion(dysfunction, suspicion),
                      OnsetCause::kSofaRise, stay.stay);
}

OnsetResult task_onset(const StayTimeline& stay, Task task, SepsisMode mode) {
  switch (task) {
    case Task::kMortality: return {};
    case Task::kAki: return aki_onset(stay);
    case Task::kSepsis: return sepsis_onset(stay, mode);
  }
  return {};
}

LabelTrack build_label_track(const StayTimeline& stay, Task task, const OnsetResult& onset) {
  LabelTrack track;
  track.task = task;
  track.stay_id = stay.stay.stay_id;
  if (task == Task::kMortality) {
    track.kind = LabelTrack::Kind::kSingleAt24h;
    track.single_label = mortality_label(stay.stay);
    return track;
  }
  track.kind = LabelTrack::Kind::kHourly;
  track.onset_time = onset.onset_time;
  if (!stay.stay.icu_discharge || *stay.stay.icu_discharge <= 0.0) return track;

  long last = static_cast<long>(std::ceil(*stay.stay.icu_discharge)) - 1;
  if (stay.stay.death_time)
    last = std::min(last, static_cast<long>(std::ceil(*stay.stay.death_time)) - 1);
  last = std::min<long>(last, kMaxTrackHours);
  long first_positive = std::numeric_limits<long>::max();
  if (onset.onset_time) {
    const long onset_hour = static_cast<long>(std::floor(*onset.onset_time));
    last = std::min<long>(last, onset_hour + kPositiveWindowHours);
    first_positive = onset_hour - kPositiveWindowHours;
  }
  if (last < 0) return track;
  track.hourly.resize(static_cast<std::size_t>(last + 1), HourLabel::kNegative);
  for (long h = std::max(0L, first_positive); h <= last; ++h)
    track.hourly[static_cast<std::size_t>(h)] = HourLabel::kPositive;
  return track;
}

void write_label_csv(std::ostream& out, std::span<const LabelTrack> tracks) {
  out << "stay_id,task,hour,label\n";
  for (const auto& t : tracks) {
    if (t.kind == LabelTrack::Kind::kSingleAt24h) {
      out << t.stay_id << ',' << to_string(t.task) << ',' << (kMortalityInputHours - 1) << ','
          << (t.single_label ? 1 : 0) << '\n';
      continue;
    }
    for (std::size_t h = 0; h < t.hourly.size(); ++h) {
      if (t.hourly[h] == HourLabel::kCensored) continue;
      out << t.stay_id << ',' << to_string(t.task) << ',' << h << ','
          << (t.hourly[h] == HourLabel::kPositive ? 1 : 0) << '\n';
    }
  }
}

void write_onset_csv(std::ostream& out, std::span<const LabelTrack> tracks) {
  out << "stay_id,task,onset_hour\n";
  for (const auto& t : tracks) {
    out << t.stay_id << ',' << to_string(t.task) << ',';
    if (t.onset_time) out << static_cast<long>(std::floor(*t.onset_time));
    out << '\n';
  }
}

}  // namespace labels
}  // namespace icudg
