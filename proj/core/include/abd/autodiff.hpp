#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "abd/dual.hpp"

namespace abd {

class ParamStore;
class Gradients;

namespace ad {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

/// Reverse-mode differentiation tape over dense row-major matrices.
///
/// Nodes are appended in evaluation order; backward() walks them in
/// reverse and accumulates into the gradient buffers of parameter leaves.
/// A tape is single-use and not thread-safe; build one per loss
/// evaluation.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// With gradients disabled, parameter leaves are treated as constants and
  /// no backward closures are recorded (inference mode).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  Var constant(int rows, int cols, std::vector<double> values);
  Var scalar(double v) { return constant(1, 1, {v}); }
  /// Leaf viewing parameter `index` of `params`; values are not copied, so
  /// the store must outlive the tape.
  Var param(const ParamStore& params, int index);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  /// a (n x c) + row (1 x c) broadcast over rows.
  Var add_row(Var a, Var row);
  Var silu(Var a);
  Var softplus(Var a);
  Var square(Var a);
  Var concat_cols(std::span<const Var> parts);
  /// Output row r is the concatenation of table rows idx[r*groups + g],
  /// g = 0..groups-1; index -1 contributes a zero block.
  Var gather_rows(Var table, std::vector<int> idx, int groups);
  /// 1 x c column means.
  Var mean_rows(Var a);
  /// Repeats a 1 x c row n times.
  Var broadcast_rows(Var a, int rows);
  Var log_softmax_rows(Var a);
  /// n x 1: element (r, cols[r]) of each row.
  Var pick(Var a, std::vector<int> cols);
  /// Row-wise matrix-vector product with constant 3x3 matrices:
  /// out_r = M_r * a_r, with M_r row-major in mats[9r..9r+8].
  Var row_matvec3(std::vector<double> mats, Var a);
  Var sum(Var a);
  /// Rows of `a` that fall below `floor` are replaced by the constant floor
  /// (and receive no gradient).
  Var clamp_min(Var a, double floor);

  /// Applies a K -> M kernel to every row of an n x K node; the Jacobian
  /// comes from forward-mode Dual<K> evaluation of the same kernel.
  /// f(row_index, inputs) must be callable with std::array<Dual<K>, K>.
  template <int K, int M, class F>
  Var map_rows(Var a, F&& f);

  int rows(Var v) const { return nodes_[v.id].rows; }
  int cols(Var v) const { return nodes_[v.id].cols; }
  std::span<const double> value(Var v) const;
  double item(Var v) const { return value(v)[0]; }

  /// Seeds d(out)/d(out) = 1 on a 1x1 node and accumulates parameter
  /// gradients into `grads` (which must match the store used for params).
  void backward(Var out, Gradients& grads);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<double> val;
    const double* ext = nullptr;
    std::vector<double> grad;
    std::function<void()> back;
    int param = -1;
    bool needs_grad = false;

    const double* data() const { return ext ? ext : val.data(); }
    std::size_t numel() const { return static_cast<std::size_t>(rows) * cols; }
  };

  Var push(int rows, int cols, std::vector<double> val, bool needs_grad);
  Node& node(Var v) { return nodes_[v.id]; }
  const Node& node(Var v) const { return nodes_[v.id]; }
  std::vector<double>& grad_of(int id);
  bool any_grad(std::initializer_list<Var> vs) const;

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

template <int K, int M, class F>
Var Tape::map_rows(Var a, F&& f) {
  const int n = rows(a);
  std::vector<double> out(static_cast<std::size_t>(n) * M);
  const bool ng = node(a).needs_grad;
  std::vector<double> jac(ng ? static_cast<std::size_t>(n) * M * K : 0);
  const double* in = node(a).data();
  for (int r = 0; r < n; ++r) {
    std::array<Dual<K>, K> x;
    for (int k = 0; k < K; ++k) x[k] = Dual<K>::variable(in[r * K + k], k);
    const std::array<Dual<K>, M> y = f(r, x);
    for (int m = 0; m < M; ++m) {
      out[r * M + m] = y[m].v;
      if (ng)
        for (int k = 0; k < K; ++k) jac[(static_cast<std::size_t>(r) * M + m) * K + k] = y[m].d[k];
    }
  }
  Var o = push(n, M, std::move(out), ng);
  if (ng) {
    const int aid = a.id, oid = o.id;
    nodes_[oid].back = [this, aid, oid, n, jac = std::move(jac)]() {
      const auto& go = nodes_[oid].grad;
      auto& ga = grad_of(aid);
      for (int r = 0; r < n; ++r)
        for (int m = 0; m < M; ++m) {
          const double g = go[r * M + m];
          if (g == 0.0) continue;
          for (int k = 0; k < K; ++k) ga[r * K + k] += g * jac[(static_cast<std::size_t>(r) * M + m) * K + k];
        }
    };
  }
  return o;
}

}  // namespace ad
}  // namespace abd
