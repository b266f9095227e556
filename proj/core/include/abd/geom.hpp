#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "abd/dual.hpp"
#include "abd/rng.hpp"

namespace abd {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Element of SO(3): orthonormal 3x3 matrix with determinant +1.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  /// Validates orthonormality and orientation within `tol`.
  static Rotation from_matrix(const Mat3& m, double tol = 1e-9);
  /// Wraps a matrix already known to be a rotation (kernel outputs).
  static Rotation unchecked(const Mat3& m) { return Rotation(m); }
  /// Row-major 9-vector, the on-disk layout.
  static Rotation from_row_major(const std::array<double, 9>& a, double tol = 1e-9);

  const Mat3& matrix() const { return m_; }
  std::array<double, 9> row_major() const;

  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rotation transpose() const { return Rotation(m_.transpose()); }

  bool is_valid(double tol = 1e-9) const;

 private:
  explicit Rotation(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

/// Tangent vector in so(3): unit axis scaled by the angle in radians.
struct AxisAngle {
  Vec3 v = Vec3::Zero();
  double angle() const { return v.norm(); }
};

/// Rodrigues formula. Total function; exp_map(0) is exactly the identity.
Rotation exp_map(const AxisAngle& v);

/// Canonical inverse of exp_map with angle in [0, pi]. At angle pi (within
/// 1e-7) the two antipodal axes are disambiguated by picking the
/// lexicographically larger one.
AxisAngle log_map(const Rotation& r);

/// Same axis, angle multiplied by c.
Rotation scale_rot(double c, const Rotation& r);

/// mean * exp(xi), xi ~ N(0, var * I3): tangent-space approximation of the
/// isotropic Gaussian on SO(3). var == 0 returns `mean` exactly.
Rotation sample_igso3_approx(const Rotation& mean, double var, Rng& rng);

/// Log-density of `x` under the tangent-space approximation centred at
/// `mean` with per-axis variance `var`.
double igso3_approx_log_density(const Rotation& mean, double var, const Rotation& x);

/// Angle of a^T b, in [0, pi].
double geodesic_angle(const Rotation& a, const Rotation& b);

/// Nearest rotation to an arbitrary 3x3 matrix (polar decomposition).
Rotation nearest_rotation(const Mat3& m);

namespace so3 {

/// Templated kernels shared by the double-precision API above and by the
/// forward-mode Jacobians used in the training losses. Matrices are
/// row-major 9-arrays.
template <class T>
std::array<T, 9> exp(const std::array<T, 3>& w) {
  const T th2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
  T a, b;
  if (value_of(th2) < 1e-8) {
    a = 1.0 - th2 / 6.0 + th2 * th2 / 120.0;
    b = 0.5 - th2 / 24.0 + th2 * th2 / 720.0;
  } else {
    using std::cos;
    using std::sin;
    using std::sqrt;
    const T th = sqrt(th2);
    a = sin(th) / th;
    b = (1.0 - cos(th)) / th2;
  }
  // R = I + a K + b K^2, K = [w]_x, K^2 = w w^T - |w|^2 I
  std::array<T, 9> r;
  r[0] = 1.0 + b * (w[0] * w[0] - th2);
  r[4] = 1.0 + b * (w[1] * w[1] - th2);
  r[8] = 1.0 + b * (w[2] * w[2] - th2);
  r[1] = b * w[0] * w[1] - a * w[2];
  r[3] = b * w[0] * w[1] + a * w[2];
  r[2] = b * w[0] * w[2] + a * w[1];
  r[6] = b * w[0] * w[2] - a * w[1];
  r[5] = b * w[1] * w[2] - a * w[0];
  r[7] = b * w[1] * w[2] + a * w[0];
  return r;
}

template <class T>
std::array<T, 3> log(const std::array<T, 9>& r) {
  using std::atan2;
  using std::sqrt;
  const T c = (r[0] + r[4] + r[8] - 1.0) * 0.5;
  // sin(theta) * axis
  std::array<T, 3> s{(r[7] - r[5]) * 0.5, (r[2] - r[6]) * 0.5, (r[3] - r[1]) * 0.5};
  const T s2 = s[0] * s[0] + s[1] * s[1] + s[2] * s[2];
  if (value_of(s2) < 1e-24 && value_of(c) > 0.0) {
    return {s[0], s[1], s[2]};
  }
  const T sn = sqrt(s2);
  const T th = atan2(sn, c);
  if (value_of(c) > 0.0) {
    // theta < pi/2: theta / sin(theta) is well conditioned.
    const T k = (value_of(th) < 1e-4) ? T(1.0) + th * th / 6.0 : th / sn;
    return {s[0] * k, s[1] * k, s[2] * k};
  }
  // theta >= pi/2: axis from the symmetric part, sym = c I + (1 - c) a a^T.
  const T omc = 1.0 - c;
  std::array<T, 3> diag{(r[0] - c) / omc, (r[4] - c) / omc, (r[8] - c) / omc};
  int k = 0;
  if (value_of(diag[1]) > value_of(diag[k])) k = 1;
  if (value_of(diag[2]) > value_of(diag[k])) k = 2;
  const T ak = sqrt(diag[k]);
  auto sym = [&](int i, int j) { return (r[3 * i + j] + r[3 * j + i]) * 0.5 / omc; };
  std::array<T, 3> axis;
  for (int i = 0; i < 3; ++i) axis[i] = (i == k) ? ak : sym(i, k) / ak;
  double sign = 1.0;
  if (std::numbers::pi - value_of(th) < 1e-7) {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(value_of(axis[i])) > 1e-12) {
        sign = value_of(axis[i]) > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
  } else {
    const double dot = value_of(axis[0]) * value_of(s[0]) + value_of(axis[1]) * value_of(s[1]) +
                       value_of(axis[2]) * value_of(s[2]);
    sign = dot >= 0.0 ? 1.0 : -1.0;
  }
  return {axis[0] * th * sign, axis[1] * th * sign, axis[2] * th * sign};
}

template <class T>
std::array<T, 9> matmul(const std::array<T, 9>& a, const std::array<T, 9>& b) {
  std::array<T, 9> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[3 * i + j] = a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j] + a[3 * i + 2] * b[6 + j];
  return r;
}

template <class T>
std::array<T, 9> transpose(const std::array<T, 9>& a) {
  return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

}  // namespace so3

std::array<double, 9> to_row_major(const Mat3& m);
Mat3 from_row_major(const std::array<double, 9>& a);

}  // namespace abd
