#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "icudg/catalog.hpp"
#include "icudg/events.hpp"
#include "icudg/matrix.hpp"

namespace icudg {

inline constexpr std::size_t kFeatureWidth = 2 * kConceptCount;  // 104

enum class BinAggregation { kMean, kLast };

std::string_view to_string(BinAggregation agg);
BinAggregation bin_aggregation_from_string(std::string_view name);

struct HourlyGrid {
  std::string stay_id;
  std::size_t hours = 0;
  Matrix values;                      // hours x 48, NaN where missing
  std::vector<std::uint8_t> observed; // hours x 48, raw observation mask
  std::array<double, kStaticCount> statics{};
  std::array<bool, kStaticCount> static_observed{};

  bool is_observed(std::size_t t, std::size_t j) const { return observed[t * kDynamicCount + j] != 0; }
};

struct NormStats {
  std::array<double, kConceptCount> mean{};  // statics then dynamics
  std::array<double, kConceptCount> sd{};

  void write_json(std::ostream& out) const;
  static NormStats read_json(std::istream& in);
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

inline constexpr double kMinStandardDeviation = 1e-6;

/// Hourly bins [0, hours) with hours = min(ceil(los), horizon_cap). Events
/// before admission or past the horizon do not enter the grid.
HourlyGrid discretise(const StayTimeline& timeline, const ConceptCatalog& catalog,
                      std::size_t horizon_cap, BinAggregation agg = BinAggregation::kMean);

/// Carries the last observed value forward; the observation mask is unchanged.
HourlyGrid locf_impute(HourlyGrid grid);

/// Mean and population standard deviation per concept over observed cells
/// (dynamic) or observed stays (static). Concepts never observed get mean 0 and
/// sd 1.
NormStats fit_norm_stats(std::span<const HourlyGrid> grids);
NormStats fit_norm_stats(std::span<const HourlyGrid* const> grids);

/// hours x 104 matrix: normalised statics (4), normalised dynamics (48),
/// static missing indicators (4), dynamic missing indicators (48).
Matrix finalize(const HourlyGrid& grid, const NormStats& stats);

/// Column names of the finalized tensor.
std::vector<std::string> feature_columns(const ConceptCatalog& catalog);

/// JSON header line followed by little-endian float32 values, stay after stay.
void write_tensor_dump(std::ostream& out, std::span<const std::string> stay_ids,
                       std::span<const Matrix> tensors, const ConceptCatalog& catalog);

struct TensorDump {
  std::vector<std::string> stay_ids;
  std::vector<Matrix> tensors;
  std::vector<std::string> columns;
};
TensorDump read_tensor_dump(std::istream& in);

}  // namespace icudg
