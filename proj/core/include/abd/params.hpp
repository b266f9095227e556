#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace abd {

/// Ordered collection of named dense parameter tensors (row-major).
class ParamStore {
 public:
  int add(std::string name, int rows, int cols, std::vector<double> init);

  int count() const { return static_cast<int>(tensors_.size()); }
  const std::string& name(int i) const { return tensors_.at(i).name; }
  int rows(int i) const { return tensors_.at(i).rows; }
  int cols(int i) const { return tensors_.at(i).cols; }
  std::span<double> data(int i) { return tensors_.at(i).data; }
  std::span<const double> data(int i) const { return tensors_.at(i).data; }
  /// -1 when absent.
  int find(const std::string& name) const;
  int index_of(const std::string& name) const;  // throws when absent

  std::size_t total_size() const;
  double norm() const;
  bool all_finite() const;

  /// Concatenation in insertion order (the checkpoint blob layout).
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  struct Tensor {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::vector<double> data;
  };
  std::vector<Tensor> tensors_;
};

/// Gradient buffers shaped like a ParamStore.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParamStore& params);

  std::span<double> at(int i) { return g_.at(i); }
  std::span<const double> at(int i) const { return g_.at(i); }
  int count() const { return static_cast<int>(g_.size()); }

  void zero();
  void scale(double c);
  void add(const Gradients& o);
  double norm() const;
  std::vector<double> flatten() const;

 private:
  std::vector<std::vector<double>> g_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 100.0;  // global gradient-norm clipping; <= 0 disables
};

/// Adam with global-norm clipping. Parameters for which `trainable(i)` is
/// false keep their values and moment estimates untouched.
class Adam {
 public:
  Adam(const ParamStore& params, AdamConfig cfg);

  void step(ParamStore& params, Gradients grads, const std::function<bool(int)>& trainable = {});

  const AdamConfig& config() const { return cfg_; }
  long steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace abd
