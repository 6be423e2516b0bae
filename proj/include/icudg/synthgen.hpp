#pragma once

// Synthetic multi-site ICU populations.
//
// Each stay draws a standardised latent deviation u_c for every dynamic
// concept (shifted by the domain's feature offsets). A fixed subset of
// concepts forms the latent risk r = sum_k beta_k u_k; the logistic of
// a_task + slope * r (times the prevalence multiplier) gives the probability
// that the stay dies in the ICU, develops AKI or develops sepsis. Domains can
// perturb beta (concept shift), shift feature marginals (covariate shift) and
// scale measurement frequencies.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "icudg/events.hpp"

namespace icudg {

struct LogNormal {
  double mu = 3.9;  // exp(3.9) ~ 49 h median stay
  double sigma = 0.7;
};

struct OutcomeParams {
  double intercept = -2.0;
  double slope = 1.0;
};

struct ShiftKnobs {
  /// Offsets of the latent deviation, in units of the concept's spread.
  std::map<std::string, double> feature_mean_offsets;
  double prevalence_multiplier = 1.0;
  double measurement_rate_multiplier = 1.0;
  /// Standard deviation of per-domain noise added to the risk coefficients.
  double coefficient_perturbation = 0.0;
};

struct DomainProfile {
  std::string domain_id;
  std::size_t n_stays = 1000;
  LogNormal los_hours;
  /// Per-concept measurements per hour; concepts not listed use built-in rates.
  std::map<std::string, double> measurement_rate;
  OutcomeParams mortality{-2.6, 1.2};
  OutcomeParams aki{-2.2, 0.8};
  OutcomeParams sepsis{-2.4, 0.8};
  ShiftKnobs shift;
  /// Number of hospitals the stays are spread over; 0 leaves hospital_id empty.
  std::size_t n_hospitals = 0;
  /// Antibiotics recorded as one whole-stay prescription (prescription-style source).
  bool antibiotics_whole_stay = false;

  /// Throws ConfigError on n_stays == 0, negative rates or multiplier <= 0.
  void validate() const;
};

struct GeneratorConfig {
  std::uint64_t seed = 0;
  std::vector<DomainProfile> profiles;
};

struct SyntheticDataset {
  std::vector<StayStatic> statics;
  std::vector<EventRecord> events;
};

/// Latent risk coefficients shared by every domain before perturbation.
const std::map<std::string, double>& base_risk_coefficients();

/// Coefficients in effect for a domain after its perturbation.
std::map<std::string, double> domain_risk_coefficients(const DomainProfile& profile,
                                                       std::uint64_t seed);

/// Deterministic in (profile, seed); stays are generated independently and
/// emitted in stay-index order.
SyntheticDataset generate_domain(const DomainProfile& profile, std::uint64_t seed);

/// One dataset per profile; each domain's seed is derived from the config seed
/// and its domain_id. Throws ConfigError on duplicate domain ids.
std::map<std::string, SyntheticDataset> generate_multisite(const GeneratorConfig& config);

}  // namespace icudg
