#pragma once

// Reference implementations for metrics and gradients: slow, direct, and
// written from the definitions.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace oracle {

/// AUROC by counting every (positive, negative) pair; ties count one half.
double auroc_pairs(std::span<const double> scores, std::span<const int> labels);

/// Best weighted least-squares non-decreasing fit, found by trying every
/// partition of the sequence into contiguous blocks (n <= 16).
std::vector<double> isotonic_exhaustive(std::span<const double> y, std::span<const double> w);

/// Two-sided exact p-value of the signed-rank statistic by enumerating every
/// sign assignment of the non-zero differences.
double signed_rank_p(std::span<const double> a, std::span<const double> b);

struct GradCheck {
  double max_rel_error = 0.0;  // elementwise |a - n| / max(|a|, |n|, floor)
  double norm_rel_error = 0.0; // ||a - n|| / max(||a||, ||n||)
  std::size_t worst = 0;
};

/// Five-point central differences of f at theta.
std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::vector<double> theta, double h = 1e-4);

GradCheck compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                            double floor = 1e-6);

/// numeric_gradient compared with `analytic`.
GradCheck finite_difference(const std::function<double(std::span<const double>)>& f,
                            std::vector<double> theta, std::span<const double> analytic,
                            double h = 1e-4, double floor = 1e-6);

}  // namespace oracle
