#include "icudg/featurizer.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <nlohmann/json.hpp>
#include <ostream>

#include "icudg/error.hpp"

namespace icudg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Running moments combined with Chan et al.'s pairwise update.
struct Moments {
  double n = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    n += 1.0;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  void merge(const Moments& o) {
    if (o.n == 0.0) return;
    if (n == 0.0) {
      *this = o;
      return;
    }
    const double total = n + o.n;
    const double d = o.mean - mean;
    mean += d * o.n / total;
    m2 += o.m2 + d * d * n * o.n / total;
    n = total;
  }
};

std::optional<double> static_value(const StayStatic& s, std::size_t i,
                                   const ConceptCatalog& catalog) {
  std::optional<double> v;
  switch (i) {
    case 0: v = s.age; break;
    case 1:
      if (s.sex != Sex::kUnknown) v = s.sex == Sex::kFemale ? 1.0 : 0.0;
      break;
    case 2: v = s.height; break;
    case 3: v = s.weight; break;
  }
  const auto& range = catalog.static_entry(i).range;
  if (v && (!std::isfinite(*v) || (range && !range->contains(*v)))) v.reset();
  return v;
}

void put_f32_le(std::ostream& out, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

float get_f32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("tensor dump truncated");
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

std::string_view to_string(BinAggregation agg) {
  return agg == BinAggregation::kLast ? "last" : "mean";
}

BinAggregation bin_aggregation_from_string(std::string_view name) {
  if (name == "mean") return BinAggregation::kMean;
  if (name == "last") return BinAggregation::kLast;
  throw DataError("unknown bin aggregation '" + std::string(name) + "' (expected mean or last)");
}

HourlyGrid discretise(const StayTimeline& timeline, const ConceptCatalog& catalog,
                      std::size_t horizon_cap, BinAggregation agg) {
  HourlyGrid grid;
  grid.stay_id = timeline.stay.stay_id;
  const auto& discharge = timeline.stay.icu_discharge;
  const double los = discharge && *discharge > 0.0 ? *discharge : 0.0;
  grid.hours = std::min(static_cast<std::size_t>(std::ceil(los)), horizon_cap);
  grid.values = Matrix(grid.hours, kDynamicCount, kNaN);
  grid.observed.assign(grid.hours * kDynamicCount, 0);

  std::vector<double> counts(grid.hours * kDynamicCount, 0.0);
  for (const auto& e : timeline.events) {
    if (e.time < 0.0 || e.time >= los) continue;
    const auto j = catalog.dynamic_index(e.concept_id);
    if (!j) continue;
    const auto t = static_cast<std::size_t>(std::floor(e.time));
    if (t >= grid.hours) continue;
    const std::size_t cell = t * kDynamicCount + *j;
    if (agg == BinAggregation::kLast || counts[cell] == 0.0) {
      grid.values[cell] = e.value;
      counts[cell] = 1.0;
    } else {
      counts[cell] += 1.0;
      grid.values[cell] += (e.value - grid.values[cell]) / counts[cell];
    }
    grid.observed[cell] = 1;
  }
  for (std::size_t i = 0; i < kStaticCount; ++i) {
    const auto v = static_value(timeline.stay, i, catalog);
    grid.static_observed[i] = v.has_value();
    grid.statics[i] = v.value_or(kNaN);
  }
  return grid;
}

HourlyGrid locf_impute(HourlyGrid grid) {
  for (std::size_t j = 0; j < kDynamicCount; ++j) {
    double last = kNaN;
    for (std::size_t t = 0; t < grid.hours; ++t) {
      double& v = grid.values(t, j);
      if (std::isnan(v)) {
        v = last;
      } else {
        last = v;
      }
    }
  }
  return grid;
}

NormStats fit_norm_stats(std::span<const HourlyGrid> grids) {
  std::vector<const HourlyGrid*> ptrs;
  ptrs.reserve(grids.size());
  for (const auto& g : grids) ptrs.push_back(&g);
  return fit_norm_stats(std::span<const HourlyGrid* const>(ptrs));
}

NormStats fit_norm_stats(std::span<const HourlyGrid* const> grids) {
  std::vector<std::array<Moments, kConceptCount>> partial(grids.size());
#pragma omp parallel for schedule(dynamic, 32)
  for (std::size_t g = 0; g < grids.size(); ++g) {
    const auto& grid = *grids[g];
    auto& m = partial[g];
    for (std::size_t i = 0; i < kStaticCount; ++i)
      if (grid.static_observed[i]) m[i].add(grid.statics[i]);
    for (std::size_t t = 0; t < grid.hours; ++t)
      for (std::size_t j = 0; j < kDynamicCount; ++j)
        if (grid.is_observed(t, j)) m[kStaticCount + j].add(grid.values(t, j));
  }
  std::array<Moments, kConceptCount> total{};
  for (const auto& p : partial)
    for (std::size_t i = 0; i < kConceptCount; ++i) total[i].merge(p[i]);

  NormStats stats;
  for (std::size_t i = 0; i < kConceptCount; ++i) {
    if (total[i].n == 0.0) {
      stats.mean[i] = 0.0;
      stats.sd[i] = 1.0;
      continue;
    }
    stats.mean[i] = total[i].mean;
    stats.sd[i] = std::max(std::sqrt(total[i].m2 / total[i].n), kMinStandardDeviation);
  }
  return stats;
}

Matrix finalize(const HourlyGrid& grid, const NormStats& stats) {
  Matrix out(grid.hours, kFeatureWidth, 0.0);
  const std::size_t dyn = kStaticCount;
  const std::size_t static_ind = kConceptCount;
  const std::size_t dyn_ind = kConceptCount + kStaticCount;
  for (std::size_t t = 0; t < grid.hours; ++t) {
    for (std::size_t i = 0; i < kStaticCount; ++i) {
      if (grid.static_observed[i]) {
        out(t, i) = (grid.statics[i] - stats.mean[i]) / stats.sd[i];
      } else {
        out(t, static_ind + i) = 1.0;
      }
    }
    for (std::size_t j = 0; j < kDynamicCount; ++j) {
      const double v = grid.values(t, j);
      if (!std::isnan(v)) out(t, dyn + j) = (v - stats.mean[dyn + j]) / stats.sd[dyn + j];
      if (!grid.is_observed(t, j)) out(t, dyn_ind + j) = 1.0;
    }
  }
  return out;
}

std::vector<std::string> feature_columns(const ConceptCatalog& catalog) {
  std::vector<std::string> cols;
  for (const auto& e : catalog.entries()) cols.push_back(e.id);
  for (const auto& e : catalog.entries()) cols.push_back("missing_" + e.id);
  return cols;
}

void NormStats::write_json(std::ostream& out) const {
  nlohmann::json j;
  j["mean"] = std::vector<double>(mean.begin(), mean.end());
  j["sd"] = std::vector<double>(sd.begin(), sd.end());
  out << j.dump(1) << '\n';
}

NormStats NormStats::read_json(std::istream& in) {
  NormStats s;
  try {
    const auto j = nlohmann::json::parse(in);
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto sd = j.at("sd").get<std::vector<double>>();
    if (mean.size() != kConceptCount || sd.size() != kConceptCount) {
      throw DataError("normalisation stats must have " + std::to_string(kConceptCount) + " entries");
    }
    std::copy(mean.begin(), mean.end(), s.mean.begin());
    std::copy(sd.begin(), sd.end(), s.sd.begin());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed normalisation stats: ") + e.what());
  }
  return s;
}

void write_tensor_dump(std::ostream& out, std::span<const std::string> stay_ids,
                       std::span<const Matrix> tensors, const ConceptCatalog& catalog) {
  if (stay_ids.size() != tensors.size()) throw ShapeError("one stay id per tensor required");
  nlohmann::json header;
  header["format"] = "icudg-tensor-v1";
  header["dtype"] = "float32";
  header["byte_order"] = "little";
  header["P"] = kFeatureWidth;
  header["columns"] = feature_columns(catalog);
  auto& stays = header["stays"] = nlohmann::json::array();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].cols() != kFeatureWidth) throw ShapeError("tensor width must be 104");
    stays.push_back({{"stay_id", stay_ids[i]}, {"T", tensors[i].rows()}});
  }
  out << header.dump() << '\n';
  for (const auto& m : tensors)
    for (const double v : m.values()) put_f32_le(out, static_cast<float>(v));
}

TensorDump read_tensor_dump(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty tensor dump");
  TensorDump dump;
  std::size_t width = 0;
  std::vector<std::size_t> lengths;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("format") != "icudg-tensor-v1") throw DataError("unsupported tensor format");
    width = header.at("P").get<std::size_t>();
    dump.columns = header.at("columns").get<std::vector<std::string>>();
    for (const auto& s : header.at("stays")) {
      dump.stay_ids.push_back(s.at("stay_id").get<std::string>());
      lengths.push_back(s.at("T").get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed tensor header: ") + e.what());
  }
  for (const auto t : lengths) {
    Matrix m(t, width);
    for (auto& v : m.values()) v = get_f32_le(in);
    dump.tensors.push_back(std::move(m));
  }
  return dump;
}

}  // namespace icudg
