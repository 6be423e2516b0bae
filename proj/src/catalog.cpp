#include "icudg/catalog.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "icudg/error.hpp"

namespace icudg {

std::string_view to_string(ConceptKind kind) {
  switch (kind) {
    case ConceptKind::kStatic: return "static";
    case ConceptKind::kVital: return "vital";
    case ConceptKind::kLab: return "lab";
    case ConceptKind::kInOut: return "inout";
  }
  return "lab";
}

ConceptKind concept_kind_from_string(std::string_view s) {
  if (s == "static") return ConceptKind::kStatic;
  if (s == "vital") return ConceptKind::kVital;
  if (s == "lab") return ConceptKind::kLab;
  if (s == "inout") return ConceptKind::kInOut;
  throw DataError("unknown concept kind '" + std::string(s) + "'");
}

ConceptCatalog::ConceptCatalog(std::vector<ConceptEntry> entries) : entries_(std::move(entries)) {
  if (entries_.size() != kConceptCount) {
    throw DataError("concept catalogue must list " + std::to_string(kConceptCount) +
                    " concepts, found " + std::to_string(entries_.size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const bool is_static = entries_[i].kind == ConceptKind::kStatic;
    if (is_static != (i < kStaticCount)) {
      throw DataError("concept catalogue must list the " + std::to_string(kStaticCount) +
                      " static concepts first (offending entry '" + entries_[i].id + "')");
    }
    if (entries_[i].range && entries_[i].range->min > entries_[i].range->max) {
      throw DataError("concept '" + entries_[i].id + "': min exceeds max");
    }
    if (!index_.emplace(entries_[i].id, i).second) {
      throw DataError("duplicate concept id '" + entries_[i].id + "'");
    }
  }
}

const ConceptCatalog& ConceptCatalog::builtin() {
  using K = ConceptKind;
  auto e = [](const char* id, K kind, const char* unit, double lo, double hi) {
    return ConceptEntry{id, kind, unit, PlausibleRange{lo, hi}};
  };
  static const ConceptCatalog catalog(std::vector<ConceptEntry>{
      e("age", K::kStatic, "years", 0, 120),
      ConceptEntry{"sex", K::kStatic, "female=1", std::nullopt},
      e("height", K::kStatic, "cm", 50, 250),
      e("weight", K::kStatic, "kg", 20, 400),
      e("sbp", K::kVital, "mmHg", 0, 300),
      e("dbp", K::kVital, "mmHg", 0, 200),
      e("hr", K::kVital, "beats/minute", 0, 300),
      e("map", K::kVital, "mmHg", 0, 250),
      e("o2sat", K::kVital, "%", 50, 100),
      e("resp", K::kVital, "breaths/minute", 0, 120),
      e("temp", K::kVital, "C", 25, 45),
      e("alb", K::kLab, "g/dL", 0, 10),
      e("alp", K::kLab, "IU/L", 0, 5000),
      e("alt", K::kLab, "IU/L", 0, 10000),
      e("ast", K::kLab, "IU/L", 0, 20000),
      e("be", K::kLab, "mmol/L", -40, 40),
      e("bicar", K::kLab, "mmol/L", 0, 70),
      e("bili", K::kLab, "mg/dL", 0, 80),
      e("bili_dir", K::kLab, "mg/dL", 0, 60),
      e("bnd", K::kLab, "%", 0, 100),
      e("bun", K::kLab, "mg/dL", 0, 300),
      e("ca", K::kLab, "mg/dL", 0, 20),
      e("cai", K::kLab, "mmol/L", 0, 5),
      e("crea", K::kLab, "mg/dL", 0, 30),
      e("ck", K::kLab, "IU/L", 0, 100000),
      e("ckmb", K::kLab, "ng/mL", 0, 1000),
      e("cl", K::kLab, "mmol/L", 50, 200),
      e("pco2", K::kLab, "mmHg", 5, 250),
      e("crp", K::kLab, "mg/L", 0, 1000),
      e("fgn", K::kLab, "mg/dL", 0, 2000),
      e("glu", K::kLab, "mg/dL", 0, 2000),
      e("hgb", K::kLab, "g/dL", 0, 30),
      e("inr_pt", K::kLab, "-", 0, 20),
      e("lact", K::kLab, "mmol/L", 0, 50),
      e("lymph", K::kLab, "%", 0, 100),
      e("mch", K::kLab, "pg", 0, 100),
      e("mchc", K::kLab, "%", 10, 60),
      e("mcv", K::kLab, "fL", 40, 200),
      e("methb", K::kLab, "%", 0, 100),
      e("mg", K::kLab, "mg/dL", 0, 20),
      e("neut", K::kLab, "%", 0, 100),
      e("po2", K::kLab, "mmHg", 0, 800),
      e("ptt", K::kLab, "sec", 0, 250),
      e("ph", K::kLab, "-", 6.5, 8),
      e("phos", K::kLab, "mg/dL", 0, 40),
      e("plt", K::kLab, "1000/uL", 0, 2000),
      e("k", K::kLab, "mmol/L", 0, 15),
      e("na", K::kLab, "mmol/L", 80, 200),
      e("tnt", K::kLab, "ng/mL", 0, 100),
      e("wbc", K::kLab, "1000/uL", 0, 500),
      e("fio2", K::kInOut, "%", 21, 100),
      e("urine", K::kInOut, "mL", 0, 5000),
  });
  return catalog;
}

ConceptCatalog ConceptCatalog::parse(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& err) {
    throw ParseError(err.line(), err.message());
  }
  std::vector<ConceptEntry> entries;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw DataError("catalogue: key '" + section + "' outside a concept section");
    ConceptEntry entry;
    entry.id = section;
    std::optional<double> lo, hi;
    bool has_kind = false;
    for (const auto& [key, node] : body) {
      const std::string v = node.get_value<std::string>();
      if (key == "kind") {
        entry.kind = concept_kind_from_string(v);
        has_kind = true;
      } else if (key == "unit") {
        entry.unit = v;
      } else if (key == "min" || key == "max") {
        double d = 0;
        std::istringstream is(v);
        if (!(is >> d) || !is.eof()) {
          throw DataError("catalogue: " + section + "." + key + " is not a number: '" + v + "'");
        }
        (key == "min" ? lo : hi) = d;
      } else {
        throw DataError("catalogue: unknown key " + section + "." + key);
      }
    }
    if (!has_kind) throw DataError("catalogue: " + section + ".kind missing");
    if (lo.has_value() != hi.has_value()) {
      throw DataError("catalogue: " + section + " needs both min and max, or neither");
    }
    if (lo) entry.range = PlausibleRange{*lo, *hi};
    entries.push_back(std::move(entry));
  }
  return ConceptCatalog(std::move(entries));
}

ConceptCatalog ConceptCatalog::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("cannot open concept catalogue '" + path + "'");
  return parse(in);
}

void ConceptCatalog::write(std::ostream& out) const {
  out << std::setprecision(17);
  bool first = true;
  for (const auto& e : entries_) {
    if (!first) out << '\n';
    first = false;
    out << '[' << e.id << "]\n"
        << "kind = " << to_string(e.kind) << '\n'
        << "unit = " << e.unit << '\n';
    if (e.range) out << "min = " << e.range->min << "\nmax = " << e.range->max << '\n';
  }
}

const ConceptEntry* ConceptCatalog::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

std::optional<std::size_t> ConceptCatalog::dynamic_index(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end() || it->second < kStaticCount) return std::nullopt;
  return it->second - kStaticCount;
}

std::optional<std::size_t> ConceptCatalog::static_index(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end() || it->second >= kStaticCount) return std::nullopt;
  return it->second;
}

bool ConceptCatalog::accepts_event_concept(std::string_view id) const {
  if (id == aux_concepts::kSofa || id == aux_concepts::kAntibiotic || id == aux_concepts::kCulture)
    return true;
  return dynamic_index(id).has_value();
}

}  // namespace icudg
