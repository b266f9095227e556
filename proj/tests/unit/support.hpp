#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "abd/data.hpp"
#include "abd/denoiser.hpp"
#include "abd/diffusion.hpp"

namespace abd::test {

inline DenoiserConfig tiny_config(int steps = 20) {
  DenoiserConfig c;
  c.hidden = 8;
  c.depth = 1;
  c.neighbors = 4;
  c.time_dim = 4;
  c.steps = steps;
  c.enc_embed = 4;
  c.enc_hidden = 8;
  c.enc_out = 4;
  c.enc_pos_dim = 4;
  return c;
}

inline ComplexInstance toy_complex(std::uint64_t seed, int cdr_len = 3, int n_antigen = 6) {
  GenParams g;
  g.seed = seed;
  g.cdr_len = cdr_len;
  g.n_antigen_res = n_antigen;
  return gen_complex(g);
}

inline DiffusionModel tiny_model(std::uint64_t seed, int steps = 20) {
  Rng r(seed);
  const DenoiserConfig c = tiny_config(steps);
  return DiffusionModel{DenoiserParams::init(c, r), NoiseSchedule::cosine(steps, 0.01)};
}

inline Rotation random_rotation(Rng& r) {
  Vec3 axis(r.normal(), r.normal(), r.normal());
  return exp_map({axis.normalized() * (r.uniform() * 3.14159)});
}

inline RigidMotion random_motion(Rng& r, double shift = 50.0) {
  return {random_rotation(r), Vec3(r.normal(), r.normal(), r.normal()) * shift};
}

/// Central-difference gradient of f with respect to every entry of the
/// store, returned in flatten() order.
inline std::vector<double> numeric_grad(ParamStore& store, const std::function<double()>& f, double h = 1e-6) {
  std::vector<double> flat = store.flatten();
  std::vector<double> g(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double v = flat[i];
    flat[i] = v + h;
    store.assign_flat(flat);
    const double fp = f();
    flat[i] = v - h;
    store.assign_flat(flat);
    const double fm = f();
    flat[i] = v;
    g[i] = (fp - fm) / (2 * h);
  }
  store.assign_flat(flat);
  return g;
}

/// |a - b| / max(|a|, |b|, floor) over whole vectors.
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace abd::test
