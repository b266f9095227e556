#include "abd/geom.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include "abd/errors.hpp"

namespace abd {

std::array<double, 9> to_row_major(const Mat3& m) {
  return {m(0, 0), m(0, 1), m(0, 2), m(1, 0), m(1, 1), m(1, 2), m(2, 0), m(2, 1), m(2, 2)};
}

Mat3 from_row_major(const std::array<double, 9>& a) {
  Mat3 m;
  m << a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8];
  return m;
}

bool Rotation::is_valid(double tol) const {
  if (!m_.allFinite()) return false;
  const double ortho = (m_.transpose() * m_ - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(m_.determinant() - 1.0) <= tol;
}

Rotation Rotation::from_matrix(const Mat3& m, double tol) {
  Rotation r(m);
  if (!r.is_valid(tol)) {
    throw DomainError(fmt::format("matrix is not a proper rotation (det={:.3g})", m.determinant()));
  }
  return r;
}

Rotation Rotation::from_row_major(const std::array<double, 9>& a, double tol) {
  return from_matrix(abd::from_row_major(a), tol);
}

std::array<double, 9> Rotation::row_major() const { return to_row_major(m_); }

Rotation exp_map(const AxisAngle& v) {
  return Rotation::unchecked(from_row_major(so3::exp<double>({v.v.x(), v.v.y(), v.v.z()})));
}

AxisAngle log_map(const Rotation& r) {
  const auto w = so3::log<double>(r.row_major());
  return AxisAngle{Vec3(w[0], w[1], w[2])};
}

Rotation scale_rot(double c, const Rotation& r) {
  if (c == 1.0) return r;
  return exp_map(AxisAngle{c * log_map(r).v});
}

Rotation sample_igso3_approx(const Rotation& mean, double var, Rng& rng) {
  if (var < 0.0) throw DomainError("sample_igso3_approx: negative variance");
  const double sd = std::sqrt(var);
  Vec3 xi;
  for (int i = 0; i < 3; ++i) xi[i] = sd * rng.normal();
  if (var == 0.0) return mean;
  return mean * exp_map(AxisAngle{xi});
}

double igso3_approx_log_density(const Rotation& mean, double var, const Rotation& x) {
  const Vec3 r = log_map(mean.transpose() * x).v;
  return -1.5 * std::log(2.0 * std::numbers::pi * var) - r.squaredNorm() / (2.0 * var);
}

double geodesic_angle(const Rotation& a, const Rotation& b) { return log_map(a.transpose() * b).angle(); }

Rotation nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return Rotation::unchecked(svd.matrixU() * d * svd.matrixV().transpose());
}

}  // namespace abd
