#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace icudg {

enum class ConceptKind { kStatic, kVital, kLab, kInOut };

std::string_view to_string(ConceptKind kind);
ConceptKind concept_kind_from_string(std::string_view s);

struct PlausibleRange {
  double min = 0.0;
  double max = 0.0;
  bool contains(double v) const { return v >= min && v <= max; }
  friend bool operator==(const PlausibleRange&, const PlausibleRange&) = default;
};

struct ConceptEntry {
  std::string id;
  ConceptKind kind = ConceptKind::kLab;
  std::string unit;
  std::optional<PlausibleRange> range;
  friend bool operator==(const ConceptEntry&, const ConceptEntry&) = default;
};

/// Reserved concept ids that carry label inputs but are not model features.
namespace aux_concepts {
inline constexpr std::string_view kSofa = "sofa";
inline constexpr std::string_view kAntibiotic = "antibiotic";
inline constexpr std::string_view kCulture = "culture";
}  // namespace aux_concepts

/// Feature concepts used as label inputs.
inline constexpr std::string_view kCreatinine = "crea";
inline constexpr std::string_view kUrine = "urine";

inline constexpr std::size_t kStaticCount = 4;
inline constexpr std::size_t kDynamicCount = 48;
inline constexpr std::size_t kConceptCount = kStaticCount + kDynamicCount;

/// The 52 model input concepts: 4 static followed by 48 time-varying, in the
/// canonical column order used by the featurizer.
class ConceptCatalog {
 public:
  /// Validates the entry list (52 entries, 4 static first, unique ids).
  explicit ConceptCatalog(std::vector<ConceptEntry> entries);

  /// Catalogue compiled into the library; identical to config/concepts.ini.
  static const ConceptCatalog& builtin();
  /// Parses the sectioned key-value catalogue format (one section per concept).
  static ConceptCatalog parse(std::istream& in);
  static ConceptCatalog load(const std::string& path);
  void write(std::ostream& out) const;

  const std::vector<ConceptEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  const ConceptEntry* find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id) != nullptr; }
  /// Index among the 48 time-varying concepts, if `id` is one of them.
  std::optional<std::size_t> dynamic_index(std::string_view id) const;
  /// Index among the 4 static concepts.
  std::optional<std::size_t> static_index(std::string_view id) const;
  const ConceptEntry& dynamic_entry(std::size_t i) const { return entries_[kStaticCount + i]; }
  const ConceptEntry& static_entry(std::size_t i) const { return entries_[i]; }

  /// True for catalogue concepts and reserved auxiliary label concepts.
  bool accepts_event_concept(std::string_view id) const;

  friend bool operator==(const ConceptCatalog& a, const ConceptCatalog& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<ConceptEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace icudg
