#include "icudg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <tuple>

#include "icudg/error.hpp"
#include "icudg/events.hpp"

namespace icudg::eval {

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (const int l : labels) n_pos += l != 0 ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("undefined AUROC: labels contain a single class");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of positive midranks, kept doubled so every quantity stays integral.
  double doubled_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double doubled_midrank = static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] != 0) doubled_rank_sum += doubled_midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double wins = (doubled_rank_sum - np * (np + 1.0)) / 2.0;
  return wins / (np * static_cast<double>(n_neg));
}

std::vector<double> pava(std::span<const double> y, std::span<const double> w) {
  if (y.size() != w.size()) throw ShapeError("pava: values and weights differ in length");
  struct Block {
    double sum_wy, sum_w;
    std::size_t count;
    double value() const { return sum_wy / sum_w; }
  };
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < y.size(); ++i) {
    blocks.push_back({w[i] * y[i], w[i], 1});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].value() > blocks.back().value()) {
      Block last = blocks.back();
      blocks.pop_back();
      blocks.back().sum_wy += last.sum_wy;
      blocks.back().sum_w += last.sum_w;
      blocks.back().count += last.count;
    }
  }
  std::vector<double> out;
  out.reserve(y.size());
  for (const auto& b : blocks) out.insert(out.end(), b.count, b.value());
  return out;
}

IsotonicModel::IsotonicModel(std::vector<double> thresholds, std::vector<double> values)
    : thresholds_(std::move(thresholds)), values_(std::move(values)) {
  if (thresholds_.size() != values_.size() || thresholds_.empty()) {
    throw ShapeError("isotonic model needs one value per threshold");
  }
}

double IsotonicModel::predict(double s) const {
  if (values_.empty()) throw Error("isotonic model is not fitted");
  const auto it = std::upper_bound(thresholds_.begin(), thresholds_.end(), s);
  if (it == thresholds_.begin()) return values_.front();
  return values_[static_cast<std::size_t>(it - thresholds_.begin()) - 1];
}

std::vector<double> IsotonicModel::predict(std::span<const double> s) const {
  std::vector<double> out;
  out.reserve(s.size());
  for (const double v : s) out.push_back(predict(v));
  return out;
}

IsotonicModel isotonic_fit(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw ShapeError("isotonic_fit: length mismatch");
  if (scores.empty()) throw DataError("isotonic_fit: no points");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::vector<double> xs, ys, ws;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) sum += labels[order[j++]];
    xs.push_back(scores[order[i]]);
    ws.push_back(static_cast<double>(j - i));
    ys.push_back(sum / static_cast<double>(j - i));
    i = j;
  }
  const auto fitted = pava(ys, ws);
  // Collapse runs of equal fitted values to one threshold each.
  std::vector<double> thresholds, values;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (values.empty() || fitted[i] != values.back()) {
      thresholds.push_back(xs[i]);
      values.push_back(fitted[i]);
    }
  }
  return IsotonicModel(std::move(thresholds), std::move(values));
}

double quantile(std::span<const double> values, double q) {
  if (values.empty()) throw DataError("quantile of an empty sample");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  q = std::clamp(q, 0.0, 1.0);
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<CalibrationBin> calibration_curve(std::span<const double> probs,
                                              std::span<const int> labels, std::size_t n_bins,
                                              double winsor_q) {
  if (probs.size() != labels.size()) throw ShapeError("calibration_curve: length mismatch");
  if (n_bins == 0) throw ConfigError("eval.calibration_bins", "must be positive");
  if (probs.empty()) return {};
  const double top = winsor_q >= 1.0 ? *std::max_element(probs.begin(), probs.end())
                                     : quantile(probs, winsor_q);
  std::vector<double> sum_p(n_bins, 0.0), sum_y(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::min(probs[i], top);
    std::size_t b = 0;
    if (top > 0.0) {
      b = static_cast<std::size_t>(std::floor(p / top * static_cast<double>(n_bins)));
      b = std::min(b, n_bins - 1);
    }
    sum_p[b] += p;
    sum_y[b] += labels[i] != 0 ? 1.0 : 0.0;
    ++count[b];
  }
  std::vector<CalibrationBin> out;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const double n = static_cast<double>(count[b]);
    out.push_back({sum_p[b] / n, sum_y[b] / n, count[b]});
  }
  return out;
}

double mean_calibration_deviation(std::span<const CalibrationBin> bins) {
  if (bins.empty()) return 0.0;
  double s = 0.0;
  for (const auto& b : bins) s += std::abs(b.mean_pred - b.frac_pos);
  return s / static_cast<double>(bins.size());
}

double wilcoxon_paired(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("wilcoxon_paired: samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
  const std::size_t n = d.size();
  if (n == 0) return 1.0;
  if (n > 24) throw DataError("wilcoxon_paired: exact enumeration limited to 24 pairs");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
  // Doubled midranks keep the statistic integral.
  std::vector<long> rank2(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = static_cast<long>(i + 1 + j + 1);
    i = j + 1;
  }
  long total = 0, observed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += rank2[i];
    if (d[i] > 0) observed += rank2[i];
  }
  // |2 W+ - total| measures the distance from the null mean (doubled twice).
  const long obs_dev = std::labs(2 * observed - total);
  std::size_t extreme = 0;
  const std::size_t patterns = std::size_t{1} << n;
  for (std::size_t mask = 0; mask < patterns; ++mask) {
    long w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (std::size_t{1} << i)) w += rank2[i];
    if (std::labs(2 * w - total) >= obs_dev) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(patterns);
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double standard_error(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (const double x : v) ss += (x - m) * (x - m);
  const double n = static_cast<double>(v.size());
  return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

std::vector<SummaryRow> summarise(std::span<const ResultRow> rows) {
  using Key = std::tuple<std::string, std::string, std::string, std::string>;
  std::map<Key, std::map<std::size_t, double>> groups;
  for (const auto& r : rows) groups[{r.task, r.setting, r.train_domains, r.test_domain}][r.fold] = r.auroc;

  std::vector<SummaryRow> out;
  for (const auto& [key, folds] : groups) {
    SummaryRow s;
    std::tie(s.task, s.setting, s.train_domains, s.test_domain) = key;
    std::vector<double> values;
    for (const auto& [f, v] : folds) values.push_back(v);
    s.n = values.size();
    s.mean = mean(values);
    s.se = standard_error(values);
    const auto colon = s.setting.find(':');
    if (colon != std::string::npos) {
      auto it = groups.find({s.task, s.setting.substr(0, colon), s.train_domains, s.test_domain});
      if (it != groups.end()) {
        std::vector<double> a, b;
        for (const auto& [f, v] : folds) {
          auto jt = it->second.find(f);
          if (jt == it->second.end()) continue;
          a.push_back(v);
          b.push_back(jt->second);
        }
        if (!a.empty()) s.p_vs_erm = wilcoxon_paired(a, b);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_results_csv(std::ostream& out, std::span<const ResultRow> rows) {
  out << "task,setting,train_domains,test_domain,fold,auroc\n";
  for (const auto& r : rows) {
    out << r.task << ',' << r.setting << ',' << r.train_domains << ',' << r.test_domain << ','
        << r.fold << ',' << format_double(r.auroc) << '\n';
  }
}

void write_summary_csv(std::ostream& out, std::span<const SummaryRow> rows) {
  out << "task,setting,train_domains,test_domain,n_folds,mean_auroc,se,p_vs_erm\n";
  for (const auto& r : rows) {
    out << r.task << ',' << r.setting << ',' << r.train_domains << ',' << r.test_domain << ','
        << r.n << ',' << format_double(r.mean) << ',' << format_double(r.se) << ',';
    if (r.p_vs_erm) out << format_double(*r.p_vs_erm);
    out << '\n';
  }
}

}  // namespace icudg::eval
