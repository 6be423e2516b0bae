#include "icudg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "icudg/error.hpp"

namespace icudg::ad {

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("item: node is " + v.shape_string() + ", expected 1x1");
  return v[0];
}

Var Tape::make(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return make(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.op = "const";
  return make(std::move(n));
}

Var Tape::record(const char* op, Matrix value, std::vector<std::size_t> parents,
                 BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                [&](std::size_t p) { return nodes_[p].requires_grad; });
  if (n.requires_grad) n.backward = std::move(backward);
  n.parents = std::move(parents);
  return make(std::move(n));
}

const Matrix& Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.same_shape(n.value)) return n.grad;
  empty_grad_scratch_ = Matrix(n.value.rows(), n.value.cols());
  return empty_grad_scratch_;
}

Matrix& Tape::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad.same_shape(n.value)) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error("backward: loss node belongs to another tape");
  const Matrix& lv = value(loss.id());
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be scalar (1x1), got " + lv.shape_string());
  }
  for (auto& n : nodes_) n.grad = Matrix();
  if (!nodes_[loss.id()].requires_grad) return;
  grad_ref(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || !n.grad.same_shape(n.value)) continue;
    n.backward(*this, i);
  }
}

namespace {

[[noreturn]] void shape_fail(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

void check_same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw Error(std::string(op) + ": operands on different or null tapes");
  }
}

bool broadcastable(const Matrix& a, const Matrix& b) {
  return (b.rows() == a.rows() || b.rows() == 1) && (b.cols() == a.cols() || b.cols() == 1);
}

// Index of b's element paired with a(i, j) under broadcasting.
inline std::size_t bidx(const Matrix& b, std::size_t i, std::size_t j) {
  return (b.rows() == 1 ? 0 : i) * b.cols() + (b.cols() == 1 ? 0 : j);
}

template <class F>
Var unary(Var a, const char* op, F forward, double (*deriv)(double x, double y)) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = forward(av[i]);
  std::size_t ai = a.id();
  return a.tape()->record(op, std::move(out), {ai}, [ai, deriv](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(ai);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad_ref(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

enum class BinOp { kAdd, kSub, kMul };

Var binary(Var a, Var b, BinOp kind, const char* op) {
  check_same_tape(a, b, op);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (!broadcastable(av, bv)) shape_fail(op, av, bv);
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) {
      const double x = av(i, j), y = bv[bidx(bv, i, j)];
      out(i, j) = kind == BinOp::kAdd ? x + y : kind == BinOp::kSub ? x - y : x * y;
    }
  std::size_t ai = a.id(), bi = b.id();
  return a.tape()->record(op, std::move(out), {ai, bi}, [ai, bi, kind](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(ai);
    const Matrix& y = t.value(bi);
    if (t.requires_grad(ai)) {
      Matrix& ga = t.grad_ref(ai);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j)
          ga(i, j) += kind == BinOp::kMul ? g(i, j) * y[bidx(y, i, j)] : g(i, j);
    }
    if (t.requires_grad(bi)) {
      Matrix& gb = t.grad_ref(bi);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) {
          const double d = kind == BinOp::kAdd   ? g(i, j)
                           : kind == BinOp::kSub ? -g(i, j)
                                                 : g(i, j) * x(i, j);
          gb[bidx(y, i, j)] += d;
        }
    }
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_fail("matmul", av, bv);
  Matrix out(av.rows(), bv.cols());
  kernels::gemm_nn(av, bv, out);
  std::size_t ai = a.id(), bi = b.id();
  return a.tape()->record("matmul", std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ai)) kernels::gemm_nt(g, t.value(bi), t.grad_ref(ai));
    if (t.requires_grad(bi)) kernels::gemm_tn(t.value(ai), g, t.grad_ref(bi));
  });
}

Var add(Var a, Var b) { return binary(a, b, BinOp::kAdd, "add"); }
Var sub(Var a, Var b) { return binary(a, b, BinOp::kSub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, BinOp::kMul, "mul"); }

Var scale(Var a, double c) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = c * av[i];
  std::size_t ai = a.id();
  return a.tape()->record("scale", std::move(out), {ai}, [ai, c](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_ref(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Var add_scalar(Var a, double c) {
  return unary(
      a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var sigmoid(Var a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  // The derivative at 0 is taken as 0 (subgradient), so norms of exactly
  // matching statistics do not poison the backward pass.
  return unary(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var relu(Var a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sum(Var a) {
  const Matrix& av = a.value();
  double s = 0.0;
  for (double v : av.values()) s += v;
  std::size_t ai = a.id();
  return a.tape()->record("sum", Matrix::scalar(s), {ai}, [ai](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Matrix& ga = t.grad_ref(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean(Var a) {
  const Matrix& av = a.value();
  if (av.empty()) throw ShapeError("mean: empty operand");
  double s = 0.0;
  for (double v : av.values()) s += v;
  const double n = static_cast<double>(av.size());
  std::size_t ai = a.id();
  return a.tape()->record("mean", Matrix::scalar(s / n), {ai}, [ai, n](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0] / n;
    Matrix& ga = t.grad_ref(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var sum_rows(Var a) {
  const Matrix& av = a.value();
  Matrix out(1, av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out[j] += av(i, j);
  std::size_t ai = a.id();
  return a.tape()->record("sum_rows", std::move(out), {ai}, [ai](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_ref(ai);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g[j];
  });
}

Var mean_rows(Var a) {
  const std::size_t n = a.rows();
  if (n == 0) throw ShapeError("mean_rows: operand has no rows");
  return scale(sum_rows(a), 1.0 / static_cast<double>(n));
}

Var variance_rows(Var a, std::size_t ddof) {
  const Matrix& av = a.value();
  const std::size_t n = av.rows();
  if (n <= ddof) {
    throw ShapeError("variance_rows: " + std::to_string(n) + " rows with ddof " +
                     std::to_string(ddof));
  }
  const double denom = static_cast<double>(n - ddof);
  Matrix mu(1, av.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) mu[j] += av(i, j);
  for (std::size_t j = 0; j < av.cols(); ++j) mu[j] /= static_cast<double>(n);
  Matrix out(1, av.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) {
      const double d = av(i, j) - mu[j];
      out[j] += d * d;
    }
  for (std::size_t j = 0; j < av.cols(); ++j) out[j] /= denom;
  std::size_t ai = a.id();
  return a.tape()->record("variance_rows", std::move(out), {ai},
                          [ai, denom, mu = std::move(mu)](Tape& t, std::size_t self) {
                            const Matrix& g = t.grad(self);
                            const Matrix& x = t.value(ai);
                            Matrix& ga = t.grad_ref(ai);
                            for (std::size_t i = 0; i < x.rows(); ++i)
                              for (std::size_t j = 0; j < x.cols(); ++j)
                                ga(i, j) += g[j] * 2.0 * (x(i, j) - mu[j]) / denom;
                          });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p, "concat_rows");
    if (p.cols() != cols) shape_fail("concat_rows", parts[0].value(), p.value());
    rows += p.rows();
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  std::size_t r0 = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    std::copy(v.data(), v.data() + v.size(), out.data() + r0 * cols);
    r0 += v.rows();
  }
  Tape* tape = parts[0].tape();
  auto parents = ids;
  return tape->record("concat_rows", std::move(out), std::move(parents),
                      [ids](Tape& t, std::size_t self) {
                        const Matrix& g = t.grad(self);
                        std::size_t offset = 0;
                        for (std::size_t id : ids) {
                          const std::size_t n = t.value(id).size();
                          if (t.requires_grad(id)) {
                            Matrix& gp = t.grad_ref(id);
                            for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
                          }
                          offset += n;
                        }
                      });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p, "concat_cols");
    if (p.rows() != rows) shape_fail("concat_cols", parts[0].value(), p.value());
    cols += p.cols();
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  std::size_t c0 = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, c0 + j) = v(i, j);
    c0 += v.cols();
  }
  Tape* tape = parts[0].tape();
  auto parents = ids;
  return tape->record("concat_cols", std::move(out), std::move(parents),
                      [ids](Tape& t, std::size_t self) {
                        const Matrix& g = t.grad(self);
                        std::size_t c0 = 0;
                        for (std::size_t id : ids) {
                          const std::size_t w = t.value(id).cols();
                          if (t.requires_grad(id)) {
                            Matrix& gp = t.grad_ref(id);
                            for (std::size_t i = 0; i < g.rows(); ++i)
                              for (std::size_t j = 0; j < w; ++j) gp(i, j) += g(i, c0 + j);
                          }
                          c0 += w;
                        }
                      });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Matrix& av = a.value();
  if (begin + count > av.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + av.shape_string());
  }
  const std::size_t cols = av.cols();
  Matrix out(count, cols);
  std::copy(av.data() + begin * cols, av.data() + (begin + count) * cols, out.data());
  std::size_t ai = a.id();
  return a.tape()->record("slice_rows", std::move(out), {ai},
                          [ai, begin, cols](Tape& t, std::size_t self) {
                            const Matrix& g = t.grad(self);
                            Matrix& ga = t.grad_ref(ai);
                            double* dst = ga.data() + begin * cols;
                            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                          });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Matrix& av = a.value();
  if (begin + count > av.cols()) {
    throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + av.shape_string());
  }
  Matrix out(av.rows(), count);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = av(i, begin + j);
  std::size_t ai = a.id();
  return a.tape()->record("slice_cols", std::move(out), {ai}, [ai, begin](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_ref(ai);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, begin + j) += g(i, j);
  });
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
  const Matrix& av = a.value();
  const std::size_t cols = av.cols();
  Matrix out(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= av.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[r]) + " out of " +
                       av.shape_string());
    }
    std::copy(av.data() + rows[r] * cols, av.data() + (rows[r] + 1) * cols, out.data() + r * cols);
  }
  std::size_t ai = a.id();
  return a.tape()->record("gather_rows", std::move(out), {ai},
                          [ai, cols, rows = std::move(rows)](Tape& t, std::size_t self) {
                            const Matrix& g = t.grad(self);
                            Matrix& ga = t.grad_ref(ai);
                            for (std::size_t r = 0; r < rows.size(); ++r)
                              for (std::size_t j = 0; j < cols; ++j)
                                ga(rows[r], j) += g(r, j);
                          });
}

Var transpose(Var a) {
  std::size_t ai = a.id();
  return a.tape()->record("transpose", icudg::transpose(a.value()), {ai},
                          [ai](Tape& t, std::size_t self) {
                            const Matrix& g = t.grad(self);
                            Matrix& ga = t.grad_ref(ai);
                            for (std::size_t i = 0; i < g.rows(); ++i)
                              for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
                          });
}

Var bce_with_logits(Var logits, const Matrix& targets) {
  const Matrix& lv = logits.value();
  if (!lv.same_shape(targets)) shape_fail("bce_with_logits", lv, targets);
  Matrix out(lv.rows(), lv.cols());
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const double l = lv[i];
    out[i] = std::max(l, 0.0) - l * targets[i] + std::log1p(std::exp(-std::abs(l)));
  }
  std::size_t li = logits.id();
  return logits.tape()->record(
      "bce_with_logits", std::move(out), {li}, [li, targets](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& l = t.value(li);
        Matrix& gl = t.grad_ref(li);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = l[i] >= 0 ? 1.0 / (1.0 + std::exp(-l[i]))
                                     : std::exp(l[i]) / (1.0 + std::exp(l[i]));
          gl[i] += g[i] * (s - targets[i]);
        }
      });
}

}  // namespace icudg::ad
