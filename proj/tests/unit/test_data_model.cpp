#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "icudg/catalog.hpp"
#include "icudg/error.hpp"
#include "icudg/events.hpp"
#include "icudg/rng.hpp"

using namespace icudg;

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  CounterRng a(CounterRng::derive(7, {1, 2})), b(CounterRng::derive(7, {1, 2})), c(CounterRng::derive(7, {2, 1}));
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(Rng, DrawsStayInRange) {
  CounterRng rng(3);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 5000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    const auto k = rng.integer(-2, 2);
    EXPECT_GE(k, -2);
    EXPECT_LE(k, 2);
    seen.insert(k);
    EXPECT_LT(rng.below(7), 7u);
  }
  EXPECT_EQ(seen.size(), 5u);
}

TEST(Rng, NormalMoments) {
  CounterRng rng(11);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Catalog, BuiltinMatchesShippedFile) {
  const auto& builtin = ConceptCatalog::builtin();
  EXPECT_EQ(builtin.size(), kConceptCount);
  const auto shipped = ConceptCatalog::load(std::string(ICUDG_SOURCE_DIR) + "/config/concepts.ini");
  EXPECT_TRUE(shipped == builtin);
  std::stringstream ss;
  builtin.write(ss);
  EXPECT_TRUE(ConceptCatalog::parse(ss) == builtin);
  EXPECT_TRUE(builtin.dynamic_index(kCreatinine).has_value());
  EXPECT_TRUE(builtin.accepts_event_concept(aux_concepts::kSofa));
  EXPECT_FALSE(builtin.contains("sofa"));
}

TEST(Catalog, RejectsDuplicateIds) {
  auto entries = ConceptCatalog::builtin().entries();
  entries[10].id = entries[11].id;
  EXPECT_ANY_THROW(ConceptCatalog{entries});
}

TEST(Events, ParsesCsvRow) {
  std::istringstream in("stay_id,time_hours,concept,value\ns1,2.5,hr,80\n");
  const auto ev = parse_events(in, ConceptCatalog::builtin());
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0], (EventRecord{"s1", 2.5, "hr", 80.0, false}));
}

TEST(Events, MalformedNumberReportsLine) {
  std::istringstream in("stay_id,time_hours,concept,value\ns1,1,hr,70\ns1,abc,hr,80\n");
  try {
    parse_events(in, ConceptCatalog::builtin());
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Events, EmptyStreamGivesNoEvents) {
  std::istringstream in("");
  EXPECT_TRUE(parse_events(in, ConceptCatalog::builtin()).empty());
}

TEST(Events, NdjsonAndUnknownConcepts) {
  std::istringstream in(R"({"stay_id":"s1","time_hours":1.0,"concept":"antibiotic","value":1,"whole_stay":true})"
                        "\n");
  const auto ev = parse_events(in, ConceptCatalog::builtin());
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_TRUE(ev[0].whole_stay);
  std::istringstream bad("stay_id,time_hours,concept,value\ns1,1,nonsense,3\n");
  EXPECT_ANY_THROW(parse_events(bad, ConceptCatalog::builtin()));
}

TEST(Events, CsvRoundTrip) {
  const std::vector<EventRecord> events{{"s1", 0.1, "hr", 1.0 / 3.0, false},
                                        {"s2", -4.25, "crea", 1.2, false},
                                        {"s2", 7.0, "antibiotic", 1.0, true}};
  std::stringstream ss;
  write_events(ss, events);
  EXPECT_EQ(parse_events(ss, ConceptCatalog::builtin()), events);

  std::vector<StayStatic> statics(2);
  statics[0].stay_id = "s1";
  statics[0].domain_id = "a";
  statics[0].age = 70.5;
  statics[0].sex = Sex::kFemale;
  statics[0].icu_discharge = 40;
  statics[0].hospital_id = "h1";
  statics[1].stay_id = "s2";
  statics[1].domain_id = "a";
  statics[1].age = 30;
  statics[1].weight = 81.2;
  statics[1].died_in_icu = true;
  statics[1].death_time = 12.5;
  statics[1].icu_discharge = 12.5;
  statics[1].hospital_id = "h2";
  std::stringstream st;
  write_statics(st, statics);
  EXPECT_EQ(parse_statics(st), statics);
}

TEST(Events, AssembleSortsAndSplits) {
  std::vector<StayStatic> statics(2);
  statics[0].stay_id = "a";
  statics[1].stay_id = "b";
  const std::vector<EventRecord> events{{"a", 5, "hr", 1}, {"b", 2, "hr", 1}, {"a", 1, "hr", 2}};
  const auto t = assemble_stays(statics, events);
  ASSERT_EQ(t.size(), 2u);
  ASSERT_EQ(t[0].events.size(), 2u);
  EXPECT_EQ(t[0].events[0].time, 1);
  EXPECT_EQ(t[0].events[1].time, 5);
  EXPECT_EQ(t[1].events.size(), 1u);
}

TEST(Events, OrphanEventNamesTheStay) {
  std::vector<StayStatic> statics(1);
  statics[0].stay_id = "a";
  try {
    assemble_stays(statics, {{"ghost", 1, "hr", 1}});
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(Events, PlausibilityFilter) {
  StayTimeline t;
  t.stay.stay_id = "s";
  t.events = {{"s", 1, "hr", 900}, {"s", 2, "hr", 80}, {"s", 3, "antibiotic", 1e9}};
  auto [kept, removed] = apply_plausibility_filter(t, ConceptCatalog::builtin());
  EXPECT_EQ(removed, 1u);
  ASSERT_EQ(kept.events.size(), 2u);
  EXPECT_EQ(kept.events[0].value, 80);
  // Idempotent.
  auto [again, removed_again] = apply_plausibility_filter(kept, ConceptCatalog::builtin());
  EXPECT_EQ(removed_again, 0u);
  EXPECT_EQ(again.events, kept.events);
}

TEST(Events, DropMinors) {
  std::vector<StayStatic> s(3);
  s[0].age = 17.9;
  s[1].age = 18;
  s[2].age = 50;
  EXPECT_EQ(drop_minors(s), 1u);
  EXPECT_EQ(s.size(), 2u);
}

TEST(Events, FormatDoubleRoundTrips) {
  for (const double v : {0.1, 1.0 / 3.0, -2.5e-12, 1e300, 80.0}) EXPECT_EQ(std::stod(format_double(v)), v);
}
