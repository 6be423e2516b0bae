#include "icudg/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "icudg/error.hpp"

namespace icudg {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Matrix: " + std::to_string(data_.size()) + " values for shape " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::column_vector(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

namespace {

void check(bool ok, const char* op, const Matrix& a, const Matrix& b, const Matrix& out) {
  if (!ok) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + ", " +
                     b.shape_string() + " -> " + out.shape_string());
  }
}

}  // namespace

namespace kernels {

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.cols() == b.rows() && out.rows() == a.rows() && out.cols() == b.cols(), "gemm_nn", a,
        b, out);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* A = a.data();
  const double* B = b.data();
  double* C = out.data();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long long i = 0; i < rows; ++i) {
    double* c = C + i * n;
    const double* ai = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * bp[j];
    }
  }
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.cols() == b.cols() && out.rows() == a.rows() && out.cols() == b.rows(), "gemm_nt", a,
        b, out);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const double* A = a.data();
  const double* B = b.data();
  double* C = out.data();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long long i = 0; i < rows; ++i) {
    const double* ai = A + i * k;
    double* c = C + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = B + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[j] += s;
    }
  }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols(), "gemm_tn", a,
        b, out);
  const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
  const double* A = a.data();
  const double* B = b.data();
  double* C = out.data();
  const long long rows = static_cast<long long>(m);
  // Each thread owns output rows i; the reduction over p runs in a fixed order.
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long long i = 0; i < rows; ++i) {
    double* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[p * m + i];
      if (av == 0.0) continue;
      const double* bp = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * bp[j];
    }
  }
}

namespace serial {

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.cols() == b.rows() && out.rows() == a.rows() && out.cols() == b.cols(), "gemm_nn", a,
        b, out);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      out(i, j) += s;
    }
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.cols() == b.cols() && out.rows() == a.rows() && out.cols() == b.rows(), "gemm_nt", a,
        b, out);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(j, p);
      out(i, j) += s;
    }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols(), "gemm_tn", a,
        b, out);
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.rows(); ++p) s += a(p, i) * b(p, j);
      out(i, j) += s;
    }
}

}  // namespace serial
}  // namespace kernels

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  kernels::gemm_nn(a, b, out);
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

double max_relative_difference(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_relative_difference: " + a.shape_string() + " vs " + b.shape_string());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace icudg
