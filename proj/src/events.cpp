#include "icudg/events.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>
#include <unordered_map>

#include "icudg/error.hpp"

namespace icudg {

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

std::optional<double> to_double(std::string_view s) {
  s = trim_cr(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

double finite_field(std::string_view s, std::size_t line, const char* field) {
  auto v = to_double(s);
  if (!v) throw ParseError(line, std::string(field) + " is not a number: '" + std::string(s) + "'");
  if (!std::isfinite(*v)) throw ParseError(line, std::string(field) + " is not finite");
  return *v;
}

std::optional<double> optional_field(std::string_view s, std::size_t line, const char* field) {
  if (trim_cr(s).empty()) return std::nullopt;
  return finite_field(s, line, field);
}

bool bool_field(std::string_view s, std::size_t line, const char* field) {
  s = trim_cr(s);
  if (s == "1" || s == "true" || s == "TRUE") return true;
  if (s == "0" || s == "false" || s == "FALSE" || s.empty()) return false;
  throw ParseError(line, std::string(field) + " is not a boolean: '" + std::string(s) + "'");
}

void check_concepts(const std::vector<EventRecord>& events, const ConceptCatalog& catalog) {
  std::set<std::string> unknown;
  for (const auto& e : events)
    if (!catalog.accepts_event_concept(e.concept_id)) unknown.insert(e.concept_id);
  if (!unknown.empty()) {
    std::string list;
    for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
    throw DataError("unknown concept ids: " + list);
  }
}

std::vector<EventRecord> parse_ndjson(std::istream& in) {
  std::vector<EventRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim_cr(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      EventRecord e;
      e.stay_id = j.at("stay_id").is_string() ? j.at("stay_id").get<std::string>()
                                              : j.at("stay_id").dump();
      e.time = j.at("time_hours").get<double>();
      e.concept_id = j.at("concept").get<std::string>();
      e.value = j.at("value").get<double>();
      if (j.contains("whole_stay")) {
        const auto& w = j.at("whole_stay");
        e.whole_stay = w.is_boolean() ? w.get<bool>() : w.get<int>() != 0;
      }
      if (!std::isfinite(e.time) || !std::isfinite(e.value)) {
        throw ParseError(lineno, "non-finite time or value");
      }
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& err) {
      throw ParseError(lineno, std::string("malformed event object: ") + err.what());
    }
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string_view to_string(Sex sex) {
  switch (sex) {
    case Sex::kFemale: return "female";
    case Sex::kMale: return "male";
    case Sex::kUnknown: return "unknown";
  }
  return "unknown";
}

std::vector<TimedValue> StayTimeline::series(std::string_view concept_id) const {
  std::vector<TimedValue> out;
  for (const auto& e : events)
    if (e.concept_id == concept_id) out.push_back({e.time, e.value});
  return out;
}

std::vector<const EventRecord*> StayTimeline::events_of(std::string_view concept_id) const {
  std::vector<const EventRecord*> out;
  for (const auto& e : events)
    if (e.concept_id == concept_id) out.push_back(&e);
  return out;
}

std::vector<EventRecord> parse_events(std::istream& in, const ConceptCatalog& catalog) {
  // Peek past whitespace to pick the format.
  while (in && std::isspace(in.peek())) in.get();
  if (!in || in.peek() == std::char_traits<char>::eof()) return {};
  if (in.peek() == '{') {
    auto events = parse_ndjson(in);
    check_concepts(events, catalog);
    return events;
  }

  std::string line;
  std::getline(in, line);
  const auto header = split_csv(trim_cr(line));
  const bool canonical = header.size() >= 4 && header[0] == "stay_id" &&
                         header[1] == "time_hours" && header[2] == "concept" &&
                         header[3] == "value";
  const bool with_flag = header.size() == 5 && header[4] == "whole_stay";
  if (!canonical || (header.size() != 4 && !with_flag)) {
    throw ParseError(1, "expected header 'stay_id,time_hours,concept,value[,whole_stay]'");
  }

  std::vector<EventRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view row = trim_cr(line);
    if (row.empty()) continue;
    const auto f = split_csv(row);
    if (f.size() != header.size()) {
      throw ParseError(lineno, "expected " + std::to_string(header.size()) + " fields, found " +
                                   std::to_string(f.size()));
    }
    EventRecord e;
    e.stay_id = std::string(trim_cr(f[0]));
    if (e.stay_id.empty()) throw ParseError(lineno, "empty stay_id");
    e.time = finite_field(f[1], lineno, "time_hours");
    e.concept_id = std::string(trim_cr(f[2]));
    e.value = finite_field(f[3], lineno, "value");
    if (with_flag) e.whole_stay = bool_field(f[4], lineno, "whole_stay");
    out.push_back(std::move(e));
  }
  check_concepts(out, catalog);
  return out;
}

void write_events(std::ostream& out, const std::vector<EventRecord>& events) {
  const bool with_flag =
      std::any_of(events.begin(), events.end(), [](const auto& e) { return e.whole_stay; });
  out << "stay_id,time_hours,concept,value" << (with_flag ? ",whole_stay" : "") << '\n';
  for (const auto& e : events) {
    out << e.stay_id << ',' << format_double(e.time) << ',' << e.concept_id << ','
        << format_double(e.value);
    if (with_flag) out << ',' << (e.whole_stay ? 1 : 0);
    out << '\n';
  }
}

std::vector<StayStatic> parse_statics(std::istream& in) {
  static const std::vector<std::string_view> kColumns = {
      "stay_id", "domain", "age", "sex", "height", "weight",
      "icu_discharge_hours", "died_in_icu", "death_time_hours"};
  std::string line;
  if (!std::getline(in, line)) return {};
  const auto header = split_csv(trim_cr(line));
  bool ok = header.size() == kColumns.size() ||
            (header.size() == kColumns.size() + 1 && header.back() == "hospital_id");
  for (std::size_t i = 0; ok && i < kColumns.size(); ++i) ok = header[i] == kColumns[i];
  if (!ok) {
    throw ParseError(1,
                     "expected header 'stay_id,domain,age,sex,height,weight,icu_discharge_hours,"
                     "died_in_icu,death_time_hours[,hospital_id]'");
  }
  const bool with_hospital = header.size() > kColumns.size();

  std::vector<StayStatic> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view row = trim_cr(line);
    if (row.empty()) continue;
    const auto f = split_csv(row);
    if (f.size() != header.size()) {
      throw ParseError(lineno, "expected " + std::to_string(header.size()) + " fields, found " +
                                   std::to_string(f.size()));
    }
    StayStatic s;
    s.stay_id = std::string(trim_cr(f[0]));
    if (s.stay_id.empty()) throw ParseError(lineno, "empty stay_id");
    s.domain_id = std::string(trim_cr(f[1]));
    s.age = finite_field(f[2], lineno, "age");
    const auto sex = trim_cr(f[3]);
    if (sex == "female" || sex == "F" || sex == "f") {
      s.sex = Sex::kFemale;
    } else if (sex == "male" || sex == "M" || sex == "m") {
      s.sex = Sex::kMale;
    } else if (sex.empty() || sex == "unknown") {
      s.sex = Sex::kUnknown;
    } else {
      throw ParseError(lineno, "sex must be female, male, unknown or empty");
    }
    s.height = optional_field(f[4], lineno, "height");
    s.weight = optional_field(f[5], lineno, "weight");
    s.icu_discharge = optional_field(f[6], lineno, "icu_discharge_hours");
    s.died_in_icu = bool_field(f[7], lineno, "died_in_icu");
    s.death_time = optional_field(f[8], lineno, "death_time_hours");
    if (with_hospital) {
      const auto h = trim_cr(f[9]);
      if (!h.empty()) s.hospital_id = std::string(h);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_statics(std::ostream& out, const std::vector<StayStatic>& statics) {
  const bool with_hospital = std::any_of(statics.begin(), statics.end(),
                                         [](const auto& s) { return s.hospital_id.has_value(); });
  out << "stay_id,domain,age,sex,height,weight,icu_discharge_hours,died_in_icu,death_time_hours"
      << (with_hospital ? ",hospital_id" : "") << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& s : statics) {
    out << s.stay_id << ',' << s.domain_id << ',' << format_double(s.age) << ','
        << to_string(s.sex) << ',' << opt(s.height) << ',' << opt(s.weight) << ','
        << opt(s.icu_discharge) << ',' << (s.died_in_icu ? 1 : 0) << ',' << opt(s.death_time);
    if (with_hospital) out << ',' << s.hospital_id.value_or("");
    out << '\n';
  }
}

std::size_t drop_minors(std::vector<StayStatic>& statics) {
  const auto before = statics.size();
  std::erase_if(statics, [](const StayStatic& s) { return s.age < 18.0; });
  return before - statics.size();
}

std::vector<StayTimeline> assemble_stays(std::vector<StayStatic> statics,
                                         std::vector<EventRecord> events) {
  std::unordered_map<std::string, std::size_t> index;
  std::vector<StayTimeline> out;
  out.reserve(statics.size());
  for (auto& s : statics) {
    if (!index.emplace(s.stay_id, out.size()).second) {
      throw DataError("duplicate stay_id '" + s.stay_id + "' in statics");
    }
    out.push_back(StayTimeline{std::move(s), {}});
  }
  for (auto& e : events) {
    auto it = index.find(e.stay_id);
    if (it == index.end()) throw DataError("event references unknown stay_id '" + e.stay_id + "'");
    out[it->second].events.push_back(std::move(e));
  }
  for (auto& t : out) {
    std::stable_sort(t.events.begin(), t.events.end(),
                     [](const EventRecord& a, const EventRecord& b) { return a.time < b.time; });
  }
  return out;
}

std::pair<StayTimeline, std::size_t> apply_plausibility_filter(StayTimeline timeline,
                                                               const ConceptCatalog& catalog) {
  const auto before = timeline.events.size();
  std::erase_if(timeline.events, [&](const EventRecord& e) {
    const ConceptEntry* entry = catalog.find(e.concept_id);
    return entry && entry->range && !entry->range->contains(e.value);
  });
  const auto removed = before - timeline.events.size();
  return {std::move(timeline), removed};
}

}  // namespace icudg
