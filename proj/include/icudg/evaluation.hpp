#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace icudg::eval {

/// Mann-Whitney AUROC with midranks for ties: P(s+ > s-) + P(s+ = s-) / 2.
/// Throws DataError ("undefined AUROC") unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Least-squares fit of a non-decreasing sequence to `y` with weights `w`
/// (pool adjacent violators). Returns one fitted value per input.
std::vector<double> pava(std::span<const double> y, std::span<const double> w);

/// Non-decreasing step function from scores to probabilities.
class IsotonicModel {
 public:
  IsotonicModel() = default;
  IsotonicModel(std::vector<double> thresholds, std::vector<double> values);

  /// Value of the last block whose lowest score is <= s (first block below it).
  double predict(double s) const;
  std::vector<double> predict(std::span<const double> s) const;

  const std::vector<double>& thresholds() const { return thresholds_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> thresholds_;
  std::vector<double> values_;
};

/// Isotonic regression of labels on scores. Equal scores are pooled first so
/// the fit is a function of the score.
IsotonicModel isotonic_fit(std::span<const double> scores, std::span<const double> labels);

/// Type-7 (linear interpolation) sample quantile.
double quantile(std::span<const double> values, double q);

struct CalibrationBin {
  double mean_pred = 0.0;
  double frac_pos = 0.0;
  std::size_t n = 0;
};

/// Equal-width bins on [0, m], where m is the winsor_q quantile of the
/// predictions and predictions above m are set to m. Empty bins are omitted.
std::vector<CalibrationBin> calibration_curve(std::span<const double> probs,
                                              std::span<const int> labels, std::size_t n_bins,
                                              double winsor_q);

/// Unweighted mean over bins of |mean_pred - frac_pos|.
double mean_calibration_deviation(std::span<const CalibrationBin> bins);

/// Exact two-sided Wilcoxon signed-rank test on paired samples. Zero
/// differences are dropped and tied magnitudes get midranks; the null
/// distribution is enumerated over all 2^n sign patterns. Returns 1 when no
/// non-zero differences remain.
double wilcoxon_paired(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1) divided by sqrt(n); 0 for n < 2.
double standard_error(std::span<const double> v);

// ---- experiment tables ----------------------------------------------------------

struct ResultRow {
  std::string task;
  std::string setting;
  std::string train_domains;  // '+'-joined
  std::string test_domain;
  std::size_t fold = 0;
  double auroc = 0.0;
};

struct SummaryRow {
  std::string task;
  std::string setting;
  std::string train_domains;
  std::string test_domain;
  std::size_t n = 0;
  double mean = 0.0;
  double se = 0.0;
  std::optional<double> p_vs_erm;
};

/// Setting names carry the objective after a colon ("pooled_n_minus_1:coral");
/// ERM rows have no suffix. DG rows are compared with the matching ERM row
/// fold by fold.
std::vector<SummaryRow> summarise(std::span<const ResultRow> rows);

void write_results_csv(std::ostream& out, std::span<const ResultRow> rows);
void write_summary_csv(std::ostream& out, std::span<const SummaryRow> rows);

}  // namespace icudg::eval
