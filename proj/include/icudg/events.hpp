#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "icudg/catalog.hpp"

namespace icudg {

enum class Sex { kFemale, kMale, kUnknown };

std::string_view to_string(Sex sex);

/// Static description of one ICU stay. Times are hours relative to ICU
/// admission, which is time 0.
struct StayStatic {
  std::string stay_id;
  std::string domain_id;
  double age = 0.0;
  Sex sex = Sex::kUnknown;
  std::optional<double> height;
  std::optional<double> weight;
  std::optional<double> icu_discharge;
  bool died_in_icu = false;
  std::optional<double> death_time;
  std::optional<std::string> hospital_id;

  friend bool operator==(const StayStatic&, const StayStatic&) = default;
};

struct EventRecord {
  std::string stay_id;
  double time = 0.0;
  std::string concept_id;
  double value = 0.0;
  /// Antibiotic prescription covering the whole ICU stay (prescription-style data).
  bool whole_stay = false;

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct TimedValue {
  double time;
  double value;
  friend bool operator==(const TimedValue&, const TimedValue&) = default;
};

struct StayTimeline {
  StayStatic stay;
  std::vector<EventRecord> events;  // ascending by time, stable for ties

  /// (time, value) pairs of one concept, in timeline order.
  std::vector<TimedValue> series(std::string_view concept_id) const;
  /// Events of one concept, in timeline order.
  std::vector<const EventRecord*> events_of(std::string_view concept_id) const;
};

/// Parses events from headered CSV (`stay_id,time_hours,concept,value`, with an
/// optional trailing `whole_stay` column) or NDJSON with the same keys. The
/// format is detected from the first non-blank character.
std::vector<EventRecord> parse_events(std::istream& in, const ConceptCatalog& catalog);
void write_events(std::ostream& out, const std::vector<EventRecord>& events);

/// Parses the statics CSV; empty fields are missing values. An optional
/// trailing `hospital_id` column is accepted.
std::vector<StayStatic> parse_statics(std::istream& in);
void write_statics(std::ostream& out, const std::vector<StayStatic>& statics);

/// Removes stays of patients younger than 18; returns the number removed.
std::size_t drop_minors(std::vector<StayStatic>& statics);

/// One timeline per static row (input order); events partitioned by stay and
/// stably sorted by time. Stays without events are kept.
std::vector<StayTimeline> assemble_stays(std::vector<StayStatic> statics,
                                         std::vector<EventRecord> events);

/// Drops events whose value lies outside the concept's plausible range.
std::pair<StayTimeline, std::size_t> apply_plausibility_filter(StayTimeline timeline,
                                                               const ConceptCatalog& catalog);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace icudg
