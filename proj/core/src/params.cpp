#include "abd/params.hpp"

#include <cmath>

#include <fmt/format.h>

#include "abd/errors.hpp"

namespace abd {

int ParamStore::add(std::string name, int rows, int cols, std::vector<double> init) {
  if (find(name) >= 0) throw ConfigError(fmt::format("duplicate parameter '{}'", name));
  if (init.size() != static_cast<std::size_t>(rows) * cols)
    throw ConfigError(fmt::format("parameter '{}': {} values for shape {}x{}", name, init.size(), rows, cols));
  tensors_.push_back({std::move(name), rows, cols, std::move(init)});
  return count() - 1;
}

int ParamStore::find(const std::string& name) const {
  for (int i = 0; i < count(); ++i)
    if (tensors_[i].name == name) return i;
  return -1;
}

int ParamStore::index_of(const std::string& name) const {
  const int i = find(name);
  if (i < 0) throw ConfigError(fmt::format("unknown parameter '{}'", name));
  return i;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.data.size();
  return n;
}

double ParamStore::norm() const {
  double s = 0.0;
  for (const auto& t : tensors_)
    for (double x : t.data) s += x * x;
  return std::sqrt(s);
}

bool ParamStore::all_finite() const {
  for (const auto& t : tensors_)
    for (double x : t.data)
      if (!std::isfinite(x)) return false;
  return true;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> out;
  out.reserve(total_size());
  for (const auto& t : tensors_) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

void ParamStore::assign_flat(std::span<const double> flat) {
  if (flat.size() != total_size())
    throw DataError(fmt::format("parameter blob has {} values, expected {}", flat.size(), total_size()));
  std::size_t off = 0;
  for (auto& t : tensors_) {
    std::copy(flat.begin() + off, flat.begin() + off + t.data.size(), t.data.begin());
    off += t.data.size();
  }
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.count() != b.count()) return false;
  for (int i = 0; i < a.count(); ++i) {
    const auto& x = a.tensors_[i];
    const auto& y = b.tensors_[i];
    if (x.name != y.name || x.rows != y.rows || x.cols != y.cols || x.data != y.data) return false;
  }
  return true;
}

Gradients::Gradients(const ParamStore& params) {
  g_.reserve(params.count());
  for (int i = 0; i < params.count(); ++i) g_.emplace_back(params.data(i).size(), 0.0);
}

void Gradients::zero() {
  for (auto& v : g_) std::fill(v.begin(), v.end(), 0.0);
}

void Gradients::scale(double c) {
  for (auto& v : g_)
    for (double& x : v) x *= c;
}

void Gradients::add(const Gradients& o) {
  for (std::size_t i = 0; i < g_.size(); ++i)
    for (std::size_t j = 0; j < g_[i].size(); ++j) g_[i][j] += o.g_[i][j];
}

double Gradients::norm() const {
  double s = 0.0;
  for (const auto& v : g_)
    for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<double> Gradients::flatten() const {
  std::vector<double> out;
  for (const auto& v : g_) out.insert(out.end(), v.begin(), v.end());
  return out;
}

Adam::Adam(const ParamStore& params, AdamConfig cfg) : cfg_(cfg) {
  for (int i = 0; i < params.count(); ++i) {
    m_.emplace_back(params.data(i).size(), 0.0);
    v_.emplace_back(params.data(i).size(), 0.0);
  }
}

void Adam::step(ParamStore& params, Gradients grads, const std::function<bool(int)>& trainable) {
  if (cfg_.clip_norm > 0.0) {
    // Norm over the trainable subset only.
    double s = 0.0;
    for (int i = 0; i < grads.count(); ++i) {
      if (trainable && !trainable(i)) continue;
      for (double x : grads.at(i)) s += x * x;
    }
    const double n = std::sqrt(s);
    if (!std::isfinite(n)) throw NumericError("Adam: non-finite gradient norm");
    if (n > cfg_.clip_norm) grads.scale(cfg_.clip_norm / n);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (int i = 0; i < params.count(); ++i) {
    if (trainable && !trainable(i)) continue;
    auto p = params.data(i);
    auto g = grads.at(i);
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      p[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
}

}  // namespace abd
