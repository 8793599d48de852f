#include "mdmo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mdmo/error.hpp"

namespace mdmo {

namespace {

void check_shape(bool ok, const char* op) {
  if (!ok) fail(ErrorCode::kContractViolation, std::string("shape mismatch in ") + op);
}

double stable_log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

bool Matrix::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

Matrix Matrix::column(std::span<const double> values) {
  Matrix m(static_cast<int>(values.size()), 1);
  std::copy(values.begin(), values.end(), m.data.begin());
  return m;
}

// ---------------------------------------------------------------------------
// ParamVector

const Segment& ParamVector::add_segment(std::string name, int rows, int cols) {
  require(rows > 0 && cols > 0, "segment '" + name + "' must have positive shape");
  require(!has_segment(name), "duplicate segment name '" + name + "'");
  Segment seg{std::move(name), values_.size(), rows, cols};
  values_.resize(values_.size() + seg.size(), 0.0);
  segments_.push_back(std::move(seg));
  return segments_.back();
}

const Segment& ParamVector::segment(std::string_view name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return s;
  }
  fail(ErrorCode::kInvalidArgument, "unknown segment '" + std::string(name) + "'");
}

bool ParamVector::has_segment(std::string_view name) const {
  return std::any_of(segments_.begin(), segments_.end(), [&](const Segment& s) { return s.name == name; });
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (segments_.size() != other.segments_.size()) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& a = segments_[i];
    const auto& b = other.segments_[i];
    if (a.name != b.name || a.offset != b.offset || a.rows != b.rows || a.cols != b.cols) return false;
  }
  return true;
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out = *this;
  std::fill(out.values_.begin(), out.values_.end(), 0.0);
  return out;
}

const Segment& ParamVector::segment_of(std::size_t index) const {
  for (const auto& s : segments_) {
    if (index >= s.offset && index < s.offset + s.size()) return s;
  }
  fail(ErrorCode::kInvalidArgument, "coordinate out of range");
}

void ParamVector::validate_finite() const {
  for (const auto& s : segments_) {
    for (double v : view(s)) {
      if (!std::isfinite(v)) fail(ErrorCode::kNumericFailure, "non-finite value in segment '" + s.name + "'");
    }
  }
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
  check_shape(other.size() == size(), "ParamVector +=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double factor) {
  for (double& v : values_) v *= factor;
  return *this;
}

double ParamVector::norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Var / Tape

const Matrix& Var::value() const {
  if (!tape_) fail(ErrorCode::kContractViolation, "use of an empty Var");
  return tape_->value(id_);
}

double Var::scalar() const {
  const Matrix& m = value();
  if (m.rows != 1 || m.cols != 1) fail(ErrorCode::kContractViolation, "scalar() on a non-scalar node");
  return m.data[0];
}

void Tape::track(const ParamVector& source) {
  if (!tracking(source)) tracked_.push_back(&source);
}

bool Tape::tracking(const ParamVector& source) const {
  return std::find(tracked_.begin(), tracked_.end(), &source) != tracked_.end();
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::scalar_constant(double value) { return constant(Matrix(1, 1, value)); }

Var Tape::param(const ParamVector& source, std::string_view segment) {
  const Segment& seg = source.segment(segment);
  const LeafKey key{&source, seg.offset};
  if (auto it = leaves_.find(key); it != leaves_.end()) return Var(this, it->second);
  Node n;
  n.value = Matrix(seg.rows, seg.cols);
  auto src = source.view(seg);
  std::copy(src.begin(), src.end(), n.value.data.begin());
  n.requires_grad = tracking(source);
  n.source = &source;
  n.offset = seg.offset;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  leaves_.emplace(key, id);
  return Var(this, id);
}

Var Tape::push(Matrix value, std::initializer_list<Var> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (p.tape_ != this) fail(ErrorCode::kContractViolation, "node from a different tape");
    if (nodes_[static_cast<std::size_t>(p.id_)].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::accumulate(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.reached) {
    n.grad = Matrix(n.value.rows, n.value.cols);
    n.reached = true;
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape_ != this) fail(ErrorCode::kContractViolation, "backward root from a different tape");
  const Matrix& rv = value(root.id_);
  if (rv.rows != 1 || rv.cols != 1) fail(ErrorCode::kContractViolation, "backward requires a scalar (1x1) root");
  for (auto& n : nodes_) {
    n.reached = false;
    n.grad = Matrix();
  }
  if (!nodes_[static_cast<std::size_t>(root.id_)].requires_grad) return;
  accumulate(root.id_).data[0] = 1.0;
  for (int id = root.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.reached || !n.backward) continue;
    n.backward(*this);
  }
}

ParamVector Tape::gradient(const ParamVector& source) const {
  ParamVector out = source.zeros_like();
  auto dst = out.values();
  for (const auto& n : nodes_) {
    if (n.source != &source || !n.reached) continue;
    for (std::size_t i = 0; i < n.grad.size(); ++i) dst[n.offset + i] += n.grad.data[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// ops

namespace ops {

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) fail(ErrorCode::kContractViolation, "operation on an empty Var");
  return *a.tape();
}

// C += A * B  (A: n x k, B: k x m)
void gemm_nn(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * m;
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T  (A: n x k, B: m x k)
void gemm_nt(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// C += A^T * B  (A: k x n, B: k x m)
void gemm_tn(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<std::size_t>(p) * n;
    const double* brow = b + static_cast<std::size_t>(p) * m;
    for (int i = 0; i < n; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_shape(av.cols == bv.rows, "matmul");
  Matrix out(av.rows, bv.cols);
  gemm_nn(av.data.data(), bv.data.data(), out.data.data(), av.rows, av.cols, bv.cols);
  const int ai = a.id(), bi = b.id();
  return t.push(std::move(out), {a, b}, [ai, bi, self = static_cast<int>(t.node_count())](Tape& tp) {
    const Matrix& g = tp.grad(self);
    const Matrix& A = tp.value(ai);
    const Matrix& B = tp.value(bi);
    if (tp.requires_grad(ai)) gemm_nt(g.data.data(), B.data.data(), tp.accumulate(ai).data.data(), A.rows, B.cols, A.cols);
    if (tp.requires_grad(bi)) gemm_tn(A.data.data(), g.data.data(), tp.accumulate(bi).data.data(), A.cols, A.rows, B.cols);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_shape(av.rows == bv.rows && av.cols == bv.cols, "add");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  const int ai = a.id(), bi = b.id(), self = static_cast<int>(t.node_count());
  return t.push(std::move(out), {a, b}, [ai, bi, self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    for (int id : {ai, bi}) {
      if (!tp.requires_grad(id)) continue;
      Matrix& d = tp.accumulate(id);
      for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i];
    }
  });
}

Var sub(Var a, Var b) { return add(a, negate(b)); }

Var mul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_shape(av.rows == bv.rows && av.cols == bv.cols, "mul");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  const int ai = a.id(), bi = b.id(), self = static_cast<int>(t.node_count());
  return t.push(std::move(out), {a, b}, [ai, bi, self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    const Matrix& A = tp.value(ai);
    const Matrix& B = tp.value(bi);
    if (tp.requires_grad(ai)) {
      Matrix& d = tp.accumulate(ai);
      for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i] * B.data[i];
    }
    if (tp.requires_grad(bi)) {
      Matrix& d = tp.accumulate(bi);
      for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i] * A.data[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (double& v : out.data) v *= factor;
  const int ai = a.id(), self = static_cast<int>(t.node_count());
  return t.push(std::move(out), {a}, [ai, self, factor](Tape& tp) {
    const Matrix& g = tp.grad(self);
    Matrix& d = tp.accumulate(ai);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i] * factor;
  });
}

Var negate(Var x) { return scale(x, -1.0); }

Var add_scalar(Var a, double c) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (double& v : out.data) v += c;
  const int ai = a.id(), self = static_cast<int>(t.node_count());
  return t.push(std::move(out), {a}, [ai, self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    Matrix& d = tp.accumulate(ai);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i];
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  check_shape(rv.rows == 1 && rv.cols == av.cols, "add_row");
  Matrix out = av;
  for (int i = 0; i < out.rows; ++i) {
    auto r = out.row(i);
    for (int j = 0; j < out.cols; ++j) r[j] += rv.data[j];
  }
  const int ai = a.id(), ri = row.id(), self = static_cast<int>(t.node_count());
  return t.push(std::move(out), {a, row}, [ai, ri, self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ai)) {
      Matrix& d = tp.accumulate(ai);
      for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i];
    }
    if (tp.requires_grad(ri)) {
      Matrix& d = tp.accumulate(ri);
      for (int i = 0; i < g.rows; ++i) {
        auto gr = g.row(i);
        for (int j = 0; j < g.cols; ++j) d.data[j] += gr[j];
      }
    }
  });
}

Var sub_broadcast(Var a, Var s) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  check_shape(s.rows() == 1 && s.cols() == 1, "sub_broadcast");
  const double sv = s.scalar();
  Matrix out = av;
  for (double& v : out.data) v -= sv;
  const int ai = a.id(), si = s.id(), self = static_cast<int>(t.node_count());
  return t.push(std::move(out), {a, s}, [ai, si, self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    double total = 0.0;
    for (double v : g.data) total += v;
    if (tp.requires_grad(ai)) {
      Matrix& d = tp.accumulate(ai);
      for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i];
    }
    if (tp.requires_grad(si)) tp.accumulate(si).data[0] -= total;
  });
}

Var mul_const(Var a, const Matrix& c) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  check_shape(av.rows == c.rows && av.cols == c.cols, "mul_const");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= c.data[i];
  const int ai = a.id(), self = static_cast<int>(t.node_count());
  return t.push(std::move(out), {a}, [ai, self, c](Tape& tp) {
    const Matrix& g = tp.grad(self);
    Matrix& d = tp.accumulate(ai);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i] * c.data[i];
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Matrix& tv = table.value();
  Matrix out(static_cast<int>(ids.size()), tv.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows) fail(ErrorCode::kContractViolation, "gather_rows index out of range");
    auto src = tv.row(ids[i]);
    std::copy(src.begin(), src.end(), out.row(static_cast<int>(i)).begin());
  }
  std::vector<int> idv(ids.begin(), ids.end());
  const int ti = table.id(), self = static_cast<int>(t.node_count());
  return t.push(std::move(out), {table}, [ti, self, idv = std::move(idv)](Tape& tp) {
    const Matrix& g = tp.grad(self);
    Matrix& d = tp.accumulate(ti);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      auto gr = g.row(static_cast<int>(i));
      auto dr = d.row(idv[i]);
      for (int j = 0; j < g.cols; ++j) dr[j] += gr[j];
    }
  });
}

Var broadcast_row(Var table, int row, int n) {
  std::vector<int> ids(static_cast<std::size_t>(n), row);
  return gather_rows(table, ids);
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  check_shape(gv.rows == 1 && gv.cols == xv.cols && bv.rows == 1 && bv.cols == xv.cols, "layer_norm");
  const int n = xv.rows, h = xv.cols;
  Matrix out(n, h);
  Matrix xhat(n, h);
  std::vector<double> inv_std(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto xr = xv.row(i);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= h;
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= h;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < h; ++j) {
      const double xh = (xr[j] - mean) * is;
      xhat(i, j) = xh;
      out(i, j) = xh * gv.data[j] + bv.data[j];
    }
  }
  const int xi = x.id(), gi = gain.id(), bi = bias.id(), self = static_cast<int>(t.node_count());
  return t.push(std::move(out), {x, gain, bias},
                [xi, gi, bi, self, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp) {
                  const Matrix& g = tp.grad(self);
                  const Matrix& gv = tp.value(gi);
                  const int n = g.rows, h = g.cols;
                  if (tp.requires_grad(gi)) {
                    Matrix& d = tp.accumulate(gi);
                    for (int i = 0; i < n; ++i)
                      for (int j = 0; j < h; ++j) d.data[j] += g(i, j) * xhat(i, j);
                  }
                  if (tp.requires_grad(bi)) {
                    Matrix& d = tp.accumulate(bi);
                    for (int i = 0; i < n; ++i)
                      for (int j = 0; j < h; ++j) d.data[j] += g(i, j);
                  }
                  if (tp.requires_grad(xi)) {
                    Matrix& d = tp.accumulate(xi);
                    for (int i = 0; i < n; ++i) {
                      double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                      for (int j = 0; j < h; ++j) {
                        const double dxh = g(i, j) * gv.data[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xhat(i, j);
                      }
                      mean_dxh /= h;
                      mean_dxh_xh /= h;
                      const double is = inv_std[static_cast<std::size_t>(i)];
                      for (int j = 0; j < h; ++j) {
                        const double dxh = g(i, j) * gv.data[j];
                        d(i, j) += is * (dxh - mean_dxh - xhat(i, j) * mean_dxh_xh);
                      }
                    }
                  }
                });
}

namespace {

// Element-wise op with derivative computed from (x, y).
template <typename F, typename D>
Var elementwise(Var x, F f, D dfdx) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  Matrix out(xv.rows, xv.cols);
  for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = f(xv.data[i]);
  const int xi = x.id(), self = static_cast<int>(t.node_count());
  return t.push(std::move(out), {x}, [xi, self, dfdx](Tape& tp) {
    const Matrix& g = tp.grad(self);
    const Matrix& X = tp.value(xi);
    const Matrix& Y = tp.value(self);
    Matrix& d = tp.accumulate(xi);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i] * dfdx(X.data[i], Y.data[i]);
  });
}

constexpr double kSqrt2OverPi = 0.7978845608028654;

}  // namespace

Var gelu(Var x) {
  return elementwise(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + 0.044715 * v * v * v))); },
      [](double v, double) {
        const double u = kSqrt2OverPi * (v + 0.044715 * v * v * v);
        const double th = std::tanh(u);
        const double du = kSqrt2OverPi * (1.0 + 3.0 * 0.044715 * v * v);
        return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
      });
}

Var sigmoid(Var x) {
  return elementwise(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var log_sigmoid(Var x) {
  return elementwise(x, stable_log_sigmoid, [](double v, double) { return stable_sigmoid(-v); });
}

Var exp(Var x) {
  return elementwise(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return elementwise(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var clamp_min(Var x, double floor) {
  return elementwise(
      x, [floor](double v) { return std::max(v, floor); }, [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

Var log_softmax_rows(Var x) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  Matrix out(xv.rows, xv.cols);
  for (int i = 0; i < xv.rows; ++i) {
    auto xr = xv.row(i);
    const double mx = *std::max_element(xr.begin(), xr.end());
    double s = 0.0;
    for (double v : xr) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    auto orow = out.row(i);
    for (int j = 0; j < xv.cols; ++j) orow[j] = xr[j] - lse;
  }
  const int xi = x.id(), self = static_cast<int>(t.node_count());
  return t.push(std::move(out), {x}, [xi, self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    const Matrix& Y = tp.value(self);
    Matrix& d = tp.accumulate(xi);
    for (int i = 0; i < g.rows; ++i) {
      double gs = 0.0;
      for (int j = 0; j < g.cols; ++j) gs += g(i, j);
      for (int j = 0; j < g.cols; ++j) d(i, j) += g(i, j) - std::exp(Y(i, j)) * gs;
    }
  });
}

Var softmax_rows(Var x) { return exp(log_softmax_rows(x)); }

Var attention(Var q, Var k, Var v, int heads) {
  Tape& t = tape_of(q);
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  check_shape(Q.rows == K.rows && Q.rows == V.rows && Q.cols == K.cols && Q.cols == V.cols, "attention");
  check_shape(heads > 0 && Q.cols % heads == 0, "attention heads");
  const int n = Q.rows, h = Q.cols, dh = h / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs: heads blocks of n x n
  std::vector<double> probs(static_cast<std::size_t>(heads) * n * n);
  Matrix out(n, h);
  for (int hd = 0; hd < heads; ++hd) {
    const int c0 = hd * dh;
    double* P = probs.data() + static_cast<std::size_t>(hd) * n * n;
    for (int i = 0; i < n; ++i) {
      double mx = -INFINITY;
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += Q(i, c0 + c) * K(j, c0 + c);
        s *= inv;
        P[i * n + j] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (int j = 0; j < n; ++j) {
        P[i * n + j] = std::exp(P[i * n + j] - mx);
        z += P[i * n + j];
      }
      for (int j = 0; j < n; ++j) P[i * n + j] /= z;
      for (int j = 0; j < n; ++j) {
        const double p = P[i * n + j];
        for (int c = 0; c < dh; ++c) out(i, c0 + c) += p * V(j, c0 + c);
      }
    }
  }
  const int qi = q.id(), ki = k.id(), vi = v.id(), self = static_cast<int>(t.node_count());
  return t.push(std::move(out), {q, k, v}, [qi, ki, vi, self, heads, probs = std::move(probs)](Tape& tp) {
    const Matrix& g = tp.grad(self);
    const Matrix& Q = tp.value(qi);
    const Matrix& K = tp.value(ki);
    const Matrix& V = tp.value(vi);
    const int n = Q.rows, h = Q.cols, dh = h / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool gq = tp.requires_grad(qi), gk = tp.requires_grad(ki), gv = tp.requires_grad(vi);
    Matrix* dQ = gq ? &tp.accumulate(qi) : nullptr;
    Matrix* dK = gk ? &tp.accumulate(ki) : nullptr;
    Matrix* dV = gv ? &tp.accumulate(vi) : nullptr;
    std::vector<double> dS(static_cast<std::size_t>(n) * n);
    for (int hd = 0; hd < heads; ++hd) {
      const int c0 = hd * dh;
      const double* P = probs.data() + static_cast<std::size_t>(hd) * n * n;
      for (int i = 0; i < n; ++i) {
        double row_dot = 0.0;
        for (int j = 0; j < n; ++j) {
          double dp = 0.0;
          for (int c = 0; c < dh; ++c) dp += g(i, c0 + c) * V(j, c0 + c);
          dS[i * n + j] = dp;
          row_dot += dp * P[i * n + j];
        }
        for (int j = 0; j < n; ++j) dS[i * n + j] = P[i * n + j] * (dS[i * n + j] - row_dot) * inv;
      }
      if (dV) {
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const double p = P[i * n + j];
            for (int c = 0; c < dh; ++c) (*dV)(j, c0 + c) += p * g(i, c0 + c);
          }
      }
      if (dQ) {
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const double s = dS[i * n + j];
            for (int c = 0; c < dh; ++c) (*dQ)(i, c0 + c) += s * K(j, c0 + c);
          }
      }
      if (dK) {
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const double s = dS[i * n + j];
            for (int c = 0; c < dh; ++c) (*dK)(j, c0 + c) += s * Q(i, c0 + c);
          }
      }
    }
  });
}

Var pick(Var x, std::span<const int> idx) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  check_shape(static_cast<int>(idx.size()) == xv.rows, "pick");
  Matrix out(xv.rows, 1);
  for (int i = 0; i < xv.rows; ++i) {
    if (idx[static_cast<std::size_t>(i)] < 0 || idx[static_cast<std::size_t>(i)] >= xv.cols)
      fail(ErrorCode::kContractViolation, "pick index out of range");
    out.data[static_cast<std::size_t>(i)] = xv(i, idx[static_cast<std::size_t>(i)]);
  }
  std::vector<int> iv(idx.begin(), idx.end());
  const int xi = x.id(), self = static_cast<int>(t.node_count());
  return t.push(std::move(out), {x}, [xi, self, iv = std::move(iv)](Tape& tp) {
    const Matrix& g = tp.grad(self);
    Matrix& d = tp.accumulate(xi);
    for (int i = 0; i < g.rows; ++i) d(i, iv[static_cast<std::size_t>(i)]) += g.data[static_cast<std::size_t>(i)];
  });
}

Var masked_max(Var x, std::span<const int> mask) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  check_shape(xv.cols == 1 && static_cast<int>(mask.size()) == xv.rows, "masked_max");
  int arg = -1;
  for (int i = 0; i < xv.rows; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    if (arg < 0 || xv.data[static_cast<std::size_t>(i)] > xv.data[static_cast<std::size_t>(arg)]) arg = i;
  }
  if (arg < 0) fail(ErrorCode::kContractViolation, "masked_max over an empty mask");
  const int xi = x.id(), self = static_cast<int>(t.node_count());
  return t.push(Matrix(1, 1, xv.data[static_cast<std::size_t>(arg)]), {x}, [xi, self, arg](Tape& tp) {
    tp.accumulate(xi).data[static_cast<std::size_t>(arg)] += tp.grad(self).data[0];
  });
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  double s = 0.0;
  for (double v : xv.data) s += v;
  const int xi = x.id(), self = static_cast<int>(t.node_count());
  return t.push(Matrix(1, 1, s), {x}, [xi, self](Tape& tp) {
    const double g = tp.grad(self).data[0];
    Matrix& d = tp.accumulate(xi);
    for (double& v : d.data) v += g;
  });
}

Var weighted_sum(Var x, const Matrix& w) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  check_shape(xv.rows == w.rows && xv.cols == w.cols, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (w.data[i] != 0.0) s += xv.data[i] * w.data[i];
  }
  const int xi = x.id(), self = static_cast<int>(t.node_count());
  return t.push(Matrix(1, 1, s), {x}, [xi, self, w](Tape& tp) {
    const double g = tp.grad(self).data[0];
    Matrix& d = tp.accumulate(xi);
    for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += g * w.data[i];
  });
}

Var bernoulli_kl_sum(Var q, Var log_p, Var log_1mp, std::span<const int> mask) {
  Tape& t = tape_of(q);
  const Matrix& qv = q.value();
  const Matrix& lp = log_p.value();
  const Matrix& l1 = log_1mp.value();
  check_shape(qv.cols == 1 && lp.cols == 1 && l1.cols == 1 && qv.rows == lp.rows && qv.rows == l1.rows &&
                  static_cast<int>(mask.size()) == qv.rows,
              "bernoulli_kl_sum");
  double total = 0.0;
  for (int i = 0; i < qv.rows; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const double qi = qv.data[static_cast<std::size_t>(i)];
    double kl = 0.0;
    if (qi > 0.0) {
      if (std::isinf(lp.data[static_cast<std::size_t>(i)])) fail(ErrorCode::kInfiniteKl, "KL infinite: q > 0 with p = 0");
      kl += qi * (std::log(qi) - lp.data[static_cast<std::size_t>(i)]);
    }
    if (qi < 1.0) {
      if (std::isinf(l1.data[static_cast<std::size_t>(i)])) fail(ErrorCode::kInfiniteKl, "KL infinite: q < 1 with p = 1");
      kl += (1.0 - qi) * (std::log1p(-qi) - l1.data[static_cast<std::size_t>(i)]);
    }
    total += kl;
  }
  std::vector<int> mv(mask.begin(), mask.end());
  const int qi_ = q.id(), pi = log_p.id(), p1 = log_1mp.id(), self = static_cast<int>(t.node_count());
  return t.push(Matrix(1, 1, total), {q, log_p, log_1mp}, [qi_, pi, p1, self, mv = std::move(mv)](Tape& tp) {
    const double g = tp.grad(self).data[0];
    const Matrix& Qv = tp.value(qi_);
    const Matrix& Lp = tp.value(pi);
    const Matrix& L1 = tp.value(p1);
    Matrix* dq = tp.requires_grad(qi_) ? &tp.accumulate(qi_) : nullptr;
    Matrix* dp = tp.requires_grad(pi) ? &tp.accumulate(pi) : nullptr;
    Matrix* d1 = tp.requires_grad(p1) ? &tp.accumulate(p1) : nullptr;
    for (std::size_t i = 0; i < mv.size(); ++i) {
      if (!mv[i]) continue;
      const double qv = Qv.data[i];
      if (dq && qv > 0.0 && qv < 1.0) {
        dq->data[i] += g * (std::log(qv) - Lp.data[i] - std::log1p(-qv) + L1.data[i]);
      }
      if (dp) dp->data[i] -= g * qv;
      if (d1) d1->data[i] -= g * (1.0 - qv);
    }
  });
}

Var bernoulli_log_mass_sum(Var q, std::span<const int> r, std::span<const int> mask) {
  Tape& t = tape_of(q);
  const Matrix& qv = q.value();
  check_shape(qv.cols == 1 && static_cast<int>(r.size()) == qv.rows && static_cast<int>(mask.size()) == qv.rows,
              "bernoulli_log_mass_sum");
  double total = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!mask[i]) {
      if (r[i]) fail(ErrorCode::kImpossibleTrajectory, "reveal at a position that is not masked");
      continue;
    }
    const double qi = qv.data[i];
    if (qi == 1.0) {
      if (!r[i]) fail(ErrorCode::kImpossibleTrajectory, "r = 0 at a position with q = 1");
      continue;
    }
    if (r[i]) {
      if (qi <= 0.0) fail(ErrorCode::kImpossibleTrajectory, "r = 1 at a position with q = 0");
      total += std::log(qi);
    } else {
      total += std::log1p(-qi);
    }
  }
  std::vector<int> rv(r.begin(), r.end());
  std::vector<int> mv(mask.begin(), mask.end());
  const int qi_ = q.id(), self = static_cast<int>(t.node_count());
  return t.push(Matrix(1, 1, total), {q}, [qi_, self, rv = std::move(rv), mv = std::move(mv)](Tape& tp) {
    const double g = tp.grad(self).data[0];
    const Matrix& Qv = tp.value(qi_);
    Matrix& d = tp.accumulate(qi_);
    for (std::size_t i = 0; i < rv.size(); ++i) {
      if (!mv[i] || Qv.data[i] == 1.0) continue;
      d.data[i] += rv[i] ? g / Qv.data[i] : -g / (1.0 - Qv.data[i]);
    }
  });
}

}  // namespace ops

}  // namespace mdmo
