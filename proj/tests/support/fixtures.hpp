#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "icudg/cohort.hpp"
#include "icudg/events.hpp"
#include "icudg/labels.hpp"
#include "icudg/matrix.hpp"
#include "icudg/rng.hpp"
#include "icudg/training.hpp"

namespace fixtures {

/// Small random stay (at most 50 events) exercising creatinine, urine, SOFA,
/// antibiotic and culture rules. Times sit on a quarter-hour grid so that
/// window edges are hit exactly.
icudg::StayTimeline random_label_stay(std::uint64_t seed, std::size_t index);

struct PlantedCohort {
  std::vector<icudg::StayStatic> statics;
  std::vector<icudg::EventRecord> events;
  /// stay id -> criterion, for base exclusions and for each task.
  std::map<std::string, std::string> base;
  std::map<icudg::Task, std::map<std::string, std::string>> task;
};

/// One stay per exclusion criterion plus clean stays (including one case per
/// hospital and task so that only the planted hospital is dropped).
PlantedCohort planted_cohort();

/// Random model-ready samples: x is T x P, labels 0/1 with some unlabelled hours.
std::vector<icudg::Sample> random_samples(std::size_t n, std::size_t max_steps, std::size_t features,
                                          const std::string& domain, std::uint64_t seed,
                                          double shift = 0.0);

icudg::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed);

}  // namespace fixtures
