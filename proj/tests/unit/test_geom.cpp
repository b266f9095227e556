#include <doctest.h>

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "abd/geom.hpp"

using namespace abd;

namespace {

constexpr double kPi = std::numbers::pi;

Rotation random_rotation(Rng& r) {
  Vec3 axis(r.normal(), r.normal(), r.normal());
  axis.normalize();
  return exp_map({axis * (r.uniform() * kPi)});
}

double max_abs(const Mat3& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("exp_map of zero is exactly the identity") {
  CHECK(exp_map({}).matrix() == Mat3::Identity());
}

TEST_CASE("exp_map at angle pi about x") {
  const Mat3 expect = Vec3(1, -1, -1).asDiagonal();
  CHECK(max_abs(exp_map({Vec3(kPi, 0, 0)}).matrix() - expect) < 1e-12);
}

TEST_CASE("exp_map matches the axis-angle rotation") {
  Rng r(11);
  for (int i = 0; i < 200; ++i) {
    Vec3 axis(r.normal(), r.normal(), r.normal());
    axis.normalize();
    const double th = r.uniform() * kPi;
    const Mat3 expect = Eigen::AngleAxisd(th, axis).toRotationMatrix();
    CHECK(max_abs(exp_map({axis * th}).matrix() - expect) < 1e-12);
  }
}

TEST_CASE("log and exp round trip") {
  Rng r(12);
  for (int i = 0; i < 1000; ++i) {
    const Rotation R = random_rotation(r);
    REQUIRE(R.is_valid());
    const AxisAngle w = log_map(R);
    CHECK(w.angle() <= kPi + 1e-12);
    CHECK(max_abs(exp_map(w).matrix() - R.matrix()) < 1e-9);
  }
}

TEST_CASE("log_map of small and near-pi angles") {
  const Vec3 v(1e-9, -2e-9, 3e-10);
  CHECK((log_map(exp_map({v})).v - v).norm() < 1e-18);
  const Vec3 axis = Vec3(1, 2, -2).normalized();
  const double th = kPi - 1e-5;
  CHECK((log_map(exp_map({axis * th})).v - axis * th).norm() < 1e-8);
}

TEST_CASE("log_map at exactly pi picks the lexicographically larger axis") {
  const Mat3 rz = Vec3(-1, -1, 1).asDiagonal();
  const Vec3 w = log_map(Rotation::from_matrix(rz)).v;
  CHECK((w - Vec3(0, 0, kPi)).norm() < 1e-9);
  for (const Vec3 a : {Vec3(1, 1, 0), Vec3(-1, 1, 0), Vec3(0, -1, 1), Vec3(-1, -2, 2)}) {
    const Vec3 n = a.normalized();
    const Mat3 R = 2.0 * n * n.transpose() - Mat3::Identity();
    const Vec3 got = log_map(Rotation::from_matrix(R, 1e-12)).v;
    const Vec3 expect = (n[0] > 0 || (n[0] == 0 && n[1] > 0)) ? n : Vec3(-n);
    CHECK((got - expect * kPi).norm() < 1e-6);
  }
}

TEST_CASE("scale_rot") {
  const Rotation rz = Rotation::from_matrix(Vec3(-1, -1, 1).asDiagonal());
  const Mat3 half = Eigen::AngleAxisd(kPi / 2, Vec3::UnitZ()).toRotationMatrix();
  CHECK(max_abs(scale_rot(0.5, rz).matrix() - half) < 1e-12);
  CHECK(scale_rot(1.0, rz).matrix() == rz.matrix());
  CHECK(max_abs(scale_rot(0.0, rz).matrix() - Mat3::Identity()) < 1e-15);
  Rng r(13);
  for (int i = 0; i < 100; ++i) {
    Vec3 axis(r.normal(), r.normal(), r.normal());
    const Rotation R = exp_map({axis.normalized() * (r.uniform() * 2.5)});
    const double a = r.uniform(), b = r.uniform();
    CHECK(max_abs(scale_rot(a, scale_rot(b, R)).matrix() - scale_rot(a * b, R).matrix()) < 1e-9);
  }
}

TEST_CASE("tangent Gaussian sampler matches the chi distribution of its angle") {
  Rng r(14);
  const double var = 0.01, sd = std::sqrt(var);
  const Rotation mean = random_rotation(r);
  const int n = 10000;
  double s = 0;
  for (int i = 0; i < n; ++i) s += geodesic_angle(mean, sample_igso3_approx(mean, var, r));
  const double expect = sd * 2.0 * std::sqrt(2.0 / kPi);
  const double se = sd * std::sqrt(3.0 - 8.0 / kPi) / std::sqrt(double(n));
  CHECK(std::abs(s / n - expect) < 3.0 * se);
  CHECK(sample_igso3_approx(mean, 0.0, r).matrix() == mean.matrix());
}

TEST_CASE("tangent Gaussian log-density") {
  const Rotation mean;
  const double var = 0.04;
  const Vec3 w(0.1, -0.2, 0.05);
  const double expect = -1.5 * std::log(2 * kPi * var) - w.squaredNorm() / (2 * var);
  CHECK(igso3_approx_log_density(mean, var, exp_map({w})) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("nearest_rotation projects perturbed rotations back") {
  Rng r(15);
  for (int i = 0; i < 50; ++i) {
    const Rotation R = random_rotation(r);
    CHECK(max_abs(nearest_rotation(R.matrix()).matrix() - R.matrix()) < 1e-12);
    Mat3 noisy = R.matrix();
    for (int k = 0; k < 9; ++k) noisy(k / 3, k % 3) += 1e-4 * r.normal();
    const Rotation P = nearest_rotation(noisy);
    CHECK(P.is_valid(1e-12));
    CHECK(geodesic_angle(P, R) < 1e-3);
  }
}

TEST_CASE("from_matrix rejects non-rotations") {
  CHECK_THROWS(Rotation::from_matrix(Vec3(1, 1, -1).asDiagonal()));
  CHECK_THROWS(Rotation::from_matrix(2.0 * Mat3::Identity()));
}

TEST_CASE("templated exp derivative matches finite differences") {
  const std::array<double, 3> w{0.3, -0.7, 0.2};
  std::array<Dual<3>, 3> x;
  for (int k = 0; k < 3; ++k) x[k] = Dual<3>::variable(w[k], k);
  const auto R = so3::exp(x);
  const double h = 1e-6;
  for (int k = 0; k < 3; ++k) {
    auto wp = w, wm = w;
    wp[k] += h;
    wm[k] -= h;
    const auto rp = so3::exp(wp), rm = so3::exp(wm);
    for (int e = 0; e < 9; ++e) CHECK(std::abs(R[e].d[k] - (rp[e] - rm[e]) / (2 * h)) < 1e-8);
  }
}

TEST_CASE("templated log inverts templated exp") {
  Rng r(16);
  for (int i = 0; i < 200; ++i) {
    const std::array<double, 3> w{r.normal(), r.normal(), r.normal()};
    const double n = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    if (n >= kPi - 1e-3) continue;
    const auto back = so3::log(so3::exp(w));
    for (int k = 0; k < 3; ++k) CHECK(std::abs(back[k] - w[k]) < 1e-9);
  }
}
