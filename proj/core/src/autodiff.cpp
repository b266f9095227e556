#include "abd/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <fmt/format.h>

#include "abd/errors.hpp"
#include "abd/params.hpp"

namespace abd::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

void require(bool ok, const char* op, int ar, int ac, int br, int bc) {
  if (!ok) throw DomainError(fmt::format("ad::{}: shape mismatch {}x{} vs {}x{}", op, ar, ac, br, bc));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Tape::push(int rows, int cols, std::vector<double> val, bool needs_grad) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

std::vector<double>& Tape::grad_of(int id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.numel(), 0.0);
  return n.grad;
}

bool Tape::any_grad(std::initializer_list<Var> vs) const {
  return std::any_of(vs.begin(), vs.end(), [&](Var v) { return nodes_[v.id].needs_grad; });
}

std::span<const double> Tape::value(Var v) const {
  const auto& n = node(v);
  return {n.data(), n.numel()};
}

Var Tape::constant(int rows, int cols, std::vector<double> values) {
  if (values.size() != static_cast<std::size_t>(rows) * cols)
    throw DomainError(fmt::format("ad::constant: {} values for {}x{}", values.size(), rows, cols));
  return push(rows, cols, std::move(values), false);
}

Var Tape::param(const ParamStore& params, int index) {
  Node n;
  n.rows = params.rows(index);
  n.cols = params.cols(index);
  n.ext = params.data(index).data();
  n.param = index;
  n.needs_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::matmul(Var a, Var b) {
  const int n = rows(a), k = cols(a), m = cols(b);
  require(k == rows(b), "matmul", n, k, rows(b), m);
  std::vector<double> out(static_cast<std::size_t>(n) * m);
  MMap(out.data(), n, m).noalias() = CMap(node(a).data(), n, k) * CMap(node(b).data(), k, m);
  Var o = push(n, m, std::move(out), any_grad({a, b}));
  if (node(o).needs_grad) {
    node(o).back = [this, a, b, o, n, k, m]() {
      CMap go(nodes_[o.id].grad.data(), n, m);
      if (nodes_[a.id].needs_grad) MMap(grad_of(a.id).data(), n, k).noalias() += go * CMap(node(b).data(), k, m).transpose();
      if (nodes_[b.id].needs_grad) MMap(grad_of(b.id).data(), k, m).noalias() += CMap(node(a).data(), n, k).transpose() * go;
    };
  }
  return o;
}

Var Tape::add(Var a, Var b) {
  require(rows(a) == rows(b) && cols(a) == cols(b), "add", rows(a), cols(a), rows(b), cols(b));
  const auto va = value(a), vb = value(b);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  Var o = push(rows(a), cols(a), std::move(out), any_grad({a, b}));
  if (node(o).needs_grad) {
    node(o).back = [this, a, b, o]() {
      const auto& go = nodes_[o.id].grad;
      for (Var in : {a, b}) {
        if (!nodes_[in.id].needs_grad) continue;
        auto& g = grad_of(in.id);
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
      }
    };
  }
  return o;
}

Var Tape::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Tape::mul(Var a, Var b) {
  require(rows(a) == rows(b) && cols(a) == cols(b), "mul", rows(a), cols(a), rows(b), cols(b));
  const auto va = value(a), vb = value(b);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  Var o = push(rows(a), cols(a), std::move(out), any_grad({a, b}));
  if (node(o).needs_grad) {
    node(o).back = [this, a, b, o]() {
      const auto& go = nodes_[o.id].grad;
      const double* pa = node(a).data();
      const double* pb = node(b).data();
      if (nodes_[a.id].needs_grad) {
        auto& g = grad_of(a.id);
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * pb[i];
      }
      if (nodes_[b.id].needs_grad) {
        auto& g = grad_of(b.id);
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * pa[i];
      }
    };
  }
  return o;
}

Var Tape::scale(Var a, double c) {
  const auto va = value(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * va[i];
  Var o = push(rows(a), cols(a), std::move(out), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).back = [this, a, o, c]() {
      const auto& go = nodes_[o.id].grad;
      auto& g = grad_of(a.id);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += c * go[i];
    };
  }
  return o;
}

Var Tape::add_scalar(Var a, double c) {
  const auto va = value(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + c;
  Var o = push(rows(a), cols(a), std::move(out), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).back = [this, a, o]() {
      const auto& go = nodes_[o.id].grad;
      auto& g = grad_of(a.id);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
    };
  }
  return o;
}

Var Tape::add_row(Var a, Var row) {
  const int n = rows(a), c = cols(a);
  require(rows(row) == 1 && cols(row) == c, "add_row", n, c, rows(row), cols(row));
  const auto va = value(a), vr = value(row);
  std::vector<double> out(va.size());
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < c; ++j) out[r * c + j] = va[r * c + j] + vr[j];
  Var o = push(n, c, std::move(out), any_grad({a, row}));
  if (node(o).needs_grad) {
    node(o).back = [this, a, row, o, n, c]() {
      const auto& go = nodes_[o.id].grad;
      if (nodes_[a.id].needs_grad) {
        auto& g = grad_of(a.id);
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
      }
      if (nodes_[row.id].needs_grad) {
        auto& g = grad_of(row.id);
        for (int r = 0; r < n; ++r)
          for (int j = 0; j < c; ++j) g[j] += go[r * c + j];
      }
    };
  }
  return o;
}

Var Tape::silu(Var a) {
  const auto va = value(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * sigmoid(va[i]);
  Var o = push(rows(a), cols(a), std::move(out), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).back = [this, a, o]() {
      const auto& go = nodes_[o.id].grad;
      const double* x = node(a).data();
      auto& g = grad_of(a.id);
      for (std::size_t i = 0; i < go.size(); ++i) {
        const double s = sigmoid(x[i]);
        g[i] += go[i] * s * (1.0 + x[i] * (1.0 - s));
      }
    };
  }
  return o;
}

Var Tape::softplus(Var a) {
  const auto va = value(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = va[i];
    out[i] = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  Var o = push(rows(a), cols(a), std::move(out), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).back = [this, a, o]() {
      const auto& go = nodes_[o.id].grad;
      const double* x = node(a).data();
      auto& g = grad_of(a.id);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * sigmoid(x[i]);
    };
  }
  return o;
}

Var Tape::square(Var a) { return mul(a, a); }

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DomainError("ad::concat_cols: no inputs");
  const int n = rows(parts[0]);
  int total = 0;
  bool ng = false;
  for (Var p : parts) {
    require(rows(p) == n, "concat_cols", n, 0, rows(p), cols(p));
    total += cols(p);
    ng = ng || node(p).needs_grad;
  }
  std::vector<double> out(static_cast<std::size_t>(n) * total);
  int off = 0;
  for (Var p : parts) {
    const int c = cols(p);
    const double* src = node(p).data();
    for (int r = 0; r < n; ++r) std::copy(src + r * c, src + (r + 1) * c, out.begin() + r * total + off);
    off += c;
  }
  Var o = push(n, total, std::move(out), ng);
  if (ng) {
    std::vector<Var> ps(parts.begin(), parts.end());
    node(o).back = [this, ps = std::move(ps), o, n, total]() {
      const auto& go = nodes_[o.id].grad;
      int off = 0;
      for (Var p : ps) {
        const int c = nodes_[p.id].cols;
        if (nodes_[p.id].needs_grad) {
          auto& g = grad_of(p.id);
          for (int r = 0; r < n; ++r)
            for (int j = 0; j < c; ++j) g[r * c + j] += go[r * total + off + j];
        }
        off += c;
      }
    };
  }
  return o;
}

Var Tape::gather_rows(Var table, std::vector<int> idx, int groups) {
  const int c = cols(table);
  if (groups < 1 || idx.size() % groups != 0) throw DomainError("ad::gather_rows: bad grouping");
  const int n = static_cast<int>(idx.size()) / groups;
  const double* src = node(table).data();
  std::vector<double> out(static_cast<std::size_t>(n) * groups * c, 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0) continue;
    if (idx[i] >= rows(table)) throw DomainError("ad::gather_rows: index out of range");
    std::copy(src + idx[i] * c, src + (idx[i] + 1) * c, out.begin() + i * c);
  }
  Var o = push(n, groups * c, std::move(out), node(table).needs_grad);
  if (node(o).needs_grad) {
    node(o).back = [this, table, o, c, idx = std::move(idx)]() {
      const auto& go = nodes_[o.id].grad;
      auto& g = grad_of(table.id);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        for (int j = 0; j < c; ++j) g[idx[i] * c + j] += go[i * c + j];
      }
    };
  }
  return o;
}

Var Tape::mean_rows(Var a) {
  const int n = rows(a), c = cols(a);
  const auto va = value(a);
  std::vector<double> out(c, 0.0);
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < c; ++j) out[j] += va[r * c + j];
  for (double& x : out) x /= n;
  Var o = push(1, c, std::move(out), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).back = [this, a, o, n, c]() {
      const auto& go = nodes_[o.id].grad;
      auto& g = grad_of(a.id);
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < c; ++j) g[r * c + j] += go[j] / n;
    };
  }
  return o;
}

Var Tape::broadcast_rows(Var a, int n) {
  const int c = cols(a);
  require(rows(a) == 1, "broadcast_rows", rows(a), c, 1, c);
  const auto va = value(a);
  std::vector<double> out(static_cast<std::size_t>(n) * c);
  for (int r = 0; r < n; ++r) std::copy(va.begin(), va.end(), out.begin() + r * c);
  Var o = push(n, c, std::move(out), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).back = [this, a, o, n, c]() {
      const auto& go = nodes_[o.id].grad;
      auto& g = grad_of(a.id);
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < c; ++j) g[j] += go[r * c + j];
    };
  }
  return o;
}

Var Tape::log_softmax_rows(Var a) {
  const int n = rows(a), c = cols(a);
  const auto va = value(a);
  std::vector<double> out(va.size());
  for (int r = 0; r < n; ++r) {
    const double* x = va.data() + r * c;
    const double mx = *std::max_element(x, x + c);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (int j = 0; j < c; ++j) out[r * c + j] = x[j] - lse;
  }
  Var o = push(n, c, std::move(out), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).back = [this, a, o, n, c]() {
      const auto& go = nodes_[o.id].grad;
      const auto& y = nodes_[o.id].val;
      auto& g = grad_of(a.id);
      for (int r = 0; r < n; ++r) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += go[r * c + j];
        for (int j = 0; j < c; ++j) g[r * c + j] += go[r * c + j] - std::exp(y[r * c + j]) * s;
      }
    };
  }
  return o;
}

Var Tape::pick(Var a, std::vector<int> sel) {
  const int n = rows(a), c = cols(a);
  if (static_cast<int>(sel.size()) != n) throw DomainError("ad::pick: one column per row required");
  const auto va = value(a);
  std::vector<double> out(n);
  for (int r = 0; r < n; ++r) {
    if (sel[r] < 0 || sel[r] >= c) throw DomainError("ad::pick: column out of range");
    out[r] = va[r * c + sel[r]];
  }
  Var o = push(n, 1, std::move(out), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).back = [this, a, o, c, sel = std::move(sel)]() {
      const auto& go = nodes_[o.id].grad;
      auto& g = grad_of(a.id);
      for (std::size_t r = 0; r < sel.size(); ++r) g[r * c + sel[r]] += go[r];
    };
  }
  return o;
}

Var Tape::row_matvec3(std::vector<double> mats, Var a) {
  const int n = rows(a);
  require(cols(a) == 3 && mats.size() == static_cast<std::size_t>(n) * 9, "row_matvec3", n, cols(a), n, 3);
  const auto va = value(a);
  std::vector<double> out(static_cast<std::size_t>(n) * 3);
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < 3; ++i) {
      double s = 0.0;
      for (int j = 0; j < 3; ++j) s += mats[r * 9 + 3 * i + j] * va[r * 3 + j];
      out[r * 3 + i] = s;
    }
  Var o = push(n, 3, std::move(out), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).back = [this, a, o, n, mats = std::move(mats)]() {
      const auto& go = nodes_[o.id].grad;
      auto& g = grad_of(a.id);
      for (int r = 0; r < n; ++r)
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) g[r * 3 + j] += mats[r * 9 + 3 * i + j] * go[r * 3 + i];
    };
  }
  return o;
}

Var Tape::sum(Var a) {
  const auto va = value(a);
  double s = 0.0;
  for (double x : va) s += x;
  Var o = push(1, 1, {s}, node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).back = [this, a, o]() {
      const double go = nodes_[o.id].grad[0];
      auto& g = grad_of(a.id);
      for (double& x : g) x += go;
    };
  }
  return o;
}

Var Tape::clamp_min(Var a, double floor) {
  const auto va = value(a);
  std::vector<double> out(va.size());
  std::vector<char> pass(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    pass[i] = va[i] >= floor;
    out[i] = pass[i] ? va[i] : floor;
  }
  Var o = push(rows(a), cols(a), std::move(out), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).back = [this, a, o, pass = std::move(pass)]() {
      const auto& go = nodes_[o.id].grad;
      auto& g = grad_of(a.id);
      for (std::size_t i = 0; i < go.size(); ++i)
        if (pass[i]) g[i] += go[i];
    };
  }
  return o;
}

void Tape::backward(Var out, Gradients& grads) {
  if (rows(out) != 1 || cols(out) != 1) throw DomainError("ad::backward: output must be a scalar");
  if (!std::isfinite(item(out))) throw NumericError(fmt::format("non-finite loss {}", item(out)));
  if (!node(out).needs_grad) return;
  grad_of(out.id)[0] = 1.0;
  for (int id = out.id; id >= 0; --id) {
    auto& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.back) n.back();
    if (n.param >= 0) {
      auto g = grads.at(n.param);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }
}

}  // namespace abd::ad
