#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mdmo {

/// Dense row-major matrix of doubles.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }

  std::size_t size() const { return data.size(); }
  bool all_finite() const;

  static Matrix column(std::span<const double> values);
};

struct Segment {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

/// Flat parameter storage with a named-segment layout. Segment names are
/// unique; the total length is the sum of segment lengths.
class ParamVector {
 public:
  const Segment& add_segment(std::string name, int rows, int cols);

  const Segment& segment(std::string_view name) const;
  bool has_segment(std::string_view name) const;
  const std::vector<Segment>& segments() const { return segments_; }

  std::span<double> values() & { return values_; }
  std::span<const double> values() const& { return values_; }
  std::span<const double> values() && = delete;
  std::span<double> view(const Segment& seg) { return {values_.data() + seg.offset, seg.size()}; }
  std::span<const double> view(const Segment& seg) const { return {values_.data() + seg.offset, seg.size()}; }

  std::size_t size() const { return values_.size(); }
  bool same_layout(const ParamVector& other) const;
  ParamVector zeros_like() const;

  /// Name of the segment holding flat coordinate `index`.
  const Segment& segment_of(std::size_t index) const;

  /// Throws kNumericFailure naming the first segment with a non-finite value.
  void validate_finite() const;

  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator*=(double factor);
  double norm() const;

 private:
  std::vector<double> values_;
  std::vector<Segment> segments_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  int rows() const { return value().rows; }
  int cols() const { return value().cols; }
  double scalar() const;
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode differentiation tape over matrix-valued nodes.
///
/// Parameters enter through `param()`, which binds a leaf to a segment of a
/// ParamVector. Only sources registered with `track()` receive gradients; the
/// rest behave as constants, and any subgraph that depends solely on constants
/// is skipped during the backward sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void track(const ParamVector& source);
  bool tracking(const ParamVector& source) const;

  Var constant(Matrix value);
  Var scalar_constant(double value);
  Var param(const ParamVector& source, std::string_view segment);

  /// Runs the backward sweep from a 1x1 root. Node gradients are reset first,
  /// so repeated calls on the same graph give identical results.
  void backward(Var root);

  /// Gradient of the last backward root with respect to `source`, using the
  /// source's layout. Untracked sources yield zeros.
  ParamVector gradient(const ParamVector& source) const;

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Upstream gradient of a node during the backward sweep.
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// Gradient buffer of an input in the backward sweep; marks it reached.
  /// Callers must check `requires_grad(id)` first.
  Matrix& accumulate(int id);

  /// Creates a node. `parents` decide whether it requires a gradient.
  Var push(Matrix value, std::initializer_list<Var> parents, BackwardFn backward);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool reached = false;
    BackwardFn backward;
    const ParamVector* source = nullptr;
    std::size_t offset = 0;
  };

  struct LeafKey {
    const ParamVector* source;
    std::size_t offset;
    bool operator==(const LeafKey&) const = default;
  };
  struct LeafKeyHash {
    std::size_t operator()(const LeafKey& k) const noexcept {
      return std::hash<const void*>()(k.source) ^ (k.offset * 0x9e3779b97f4a7c15ULL);
    }
  };

  std::vector<Node> nodes_;
  std::vector<const ParamVector*> tracked_;
  std::unordered_map<LeafKey, int, LeafKeyHash> leaves_;
};

// Differentiable operations. Shapes are checked and mismatches raise
// kContractViolation.
namespace ops {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double c);
/// a (n x m) + row (1 x m) broadcast over rows.
Var add_row(Var a, Var row);
/// a (n x m) - s (1 x 1) broadcast.
Var sub_broadcast(Var a, Var s);
/// Element-wise product with a constant matrix of the same shape.
Var mul_const(Var a, const Matrix& c);
/// Row lookup: out[i] = table[ids[i]].
Var gather_rows(Var table, std::span<const int> ids);
/// Broadcast one row of `table` to `n` rows.
Var broadcast_row(Var table, int row, int n);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var gelu(Var x);
Var sigmoid(Var x);
Var log_sigmoid(Var x);
Var exp(Var x);
Var log(Var x);
Var negate(Var x);
/// Row-wise log-softmax.
Var log_softmax_rows(Var x);
/// Row-wise softmax.
Var softmax_rows(Var x);
/// Bidirectional multi-head attention over full rows: q, k, v are n x H.
Var attention(Var q, Var k, Var v, int heads);
/// out[i] = x(i, idx[i]) as an n x 1 column.
Var pick(Var x, std::span<const int> idx);
/// Element-wise max(x, floor); zero gradient where the floor binds.
Var clamp_min(Var x, double floor);
/// Maximum of column x over rows with mask[i] != 0, as 1 x 1. Ties route the
/// gradient to the lowest index.
Var masked_max(Var x, std::span<const int> mask);
Var sum(Var x);
/// Sum of x(i, j) * w(i, j) with constant w, as 1 x 1.
Var weighted_sum(Var x, const Matrix& w);

/// Sum over rows with mask[i] != 0 of KL(Bern(q_i) || Bern(p_i)), where p is
/// passed as log p and log(1 - p). Uses 0 log 0 = 0. Positions with q exactly
/// 0 or 1 do not propagate a gradient to q (their local derivative is
/// unbounded while dq is zero there).
Var bernoulli_kl_sum(Var q, Var log_p, Var log_1mp, std::span<const int> mask);

/// Sum over rows with mask[i] != 0 of log Bern(r_i; q_i). Rows where q is
/// exactly 1 (deterministic reveals) contribute nothing.
Var bernoulli_log_mass_sum(Var q, std::span<const int> r, std::span<const int> mask);

}  // namespace ops

}  // namespace mdmo
