#pragma once

#include <array>
#include <cmath>
#include <limits>

#include "photoba/dual.hpp"
#include "photoba/types.hpp"

namespace pba {

/// Rigid transform mapping world points into the camera frame: X_cam = R X + t.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

inline Vec3 transform_point(const Pose& pose, const Vec3& X) { return pose.R * X + pose.t; }

inline Pose inverse_pose(const Pose& pose) {
  return {pose.R.transpose(), -(pose.R.transpose() * pose.t)};
}

/// Camera center in world coordinates.
inline Vec3 camera_center(const Pose& pose) { return -(pose.R.transpose() * pose.t); }

/// Per-camera projection parameters: an affine pixel map (focal lengths and
/// principal point, stored as s = [fx, fy, cx, cy]) preceded by a two-term
/// radial distortion l = [l1, l2] acting on normalized image coordinates.
struct Intrinsics {
  Vec4 s = Vec4(1.0, 1.0, 0.0, 0.0);
  Vec2 l = Vec2::Zero();
  int width = 0;
  int height = 0;
};

/// Perspective division of a camera-frame point. The caller is responsible
/// for checking that the depth is positive.
template <class T>
Vec2T<T> perspective_divide(const Vec3T<T>& X) {
  return {X[0] / X[2], X[1] / X[2]};
}

/// Affine pixel map: x -> diag(s1, s2) x + (s3, s4).
template <class T>
Vec2T<T> affine_map(const Vec4T<T>& s, const Vec2T<T>& x) {
  return {s[0] * x[0] + s[2], s[1] * x[1] + s[3]};
}

template <class T>
Vec2T<T> affine_unmap(const Vec4T<T>& s, const Vec2T<T>& x) {
  return {(x[0] - s[2]) / s[0], (x[1] - s[3]) / s[1]};
}

/// Radial distortion on normalized coordinates: x -> x (1 + l1 r + l2 r^2)
/// with r the squared norm of x.
template <class T>
Vec2T<T> distort(const Vec2T<T>& l, const Vec2T<T>& x) {
  const T r = x.squaredNorm();
  const T g = 1.0 + l[0] * r + l[1] * r * r;
  return {x[0] * g, x[1] * g};
}

/// Polynomial approximation of the inverse radial distortion, valid for
/// distorted squared radii up to `valid_radius_sq`: undistorted point is
/// x_d * (1 + b1 s + ... + b6 s^6) with s the squared norm of x_d.
template <class T>
struct InverseDistortion {
  Eigen::Matrix<T, 6, 1> b = Eigen::Matrix<T, 6, 1>::Zero();
  double valid_radius_sq = 1.0;
};

inline constexpr double kDefaultValidRadiusSq = 1.0;

namespace detail {

/// Truncated polynomial in one variable, coefficients c[0] + c[1] s + ...
template <class T, int D>
using Poly = std::array<T, D + 1>;

template <class T, int D>
Poly<T, D> poly_mul(const Poly<T, D>& p, const Poly<T, D>& q) {
  Poly<T, D> r{};
  for (int i = 0; i <= D; ++i) {
    for (int j = 0; i + j <= D; ++j) {
      r[i + j] += p[i] * q[j];
    }
  }
  return r;
}

}  // namespace detail

/// Builds the degree-6 series inverse of the radial distortion by reverting
/// the map from undistorted to distorted squared radius, s(t) = t g(t)^2 with
/// g(t) = 1 + l1 t + l2 t^2, and expanding 1/g(t(s)). The validity radius is
/// the default image domain, shrunk to the fold of the forward map (where
/// the radial derivative 1 + 3 l1 t + 5 l2 t^2 reaches zero) when that fold
/// lies inside it.
template <class T>
InverseDistortion<T> invert_distortion(const Vec2T<T>& l) {
  constexpr int D = 7;
  using P = detail::Poly<T, D>;
  const T l1 = l[0];
  const T l2 = l[1];

  // s(t) = t + a2 t^2 + a3 t^3 + a4 t^4 + a5 t^5.
  const T a2 = 2.0 * l1;
  const T a3 = l1 * l1 + 2.0 * l2;
  const T a4 = 2.0 * l1 * l2;
  const T a5 = l2 * l2;

  // Series reversion by fixed point: t <- s - a2 t^2 - ... - a5 t^5. Each
  // sweep fixes one further order, so D sweeps settle all retained terms.
  P t{};
  t[1] = T(1.0);
  for (int sweep = 0; sweep < D; ++sweep) {
    const P t2 = detail::poly_mul<T, D>(t, t);
    const P t3 = detail::poly_mul<T, D>(t2, t);
    const P t4 = detail::poly_mul<T, D>(t2, t2);
    const P t5 = detail::poly_mul<T, D>(t4, t);
    P next{};
    next[1] = T(1.0);
    for (int i = 0; i <= D; ++i) {
      next[i] += -(a2 * t2[i] + a3 * t3[i] + a4 * t4[i] + a5 * t5[i]);
    }
    t = next;
  }

  // g(t(s)), then its reciprocal series G with G g = 1.
  P g{};
  g[0] = T(1.0);
  const P t2 = detail::poly_mul<T, D>(t, t);
  for (int i = 0; i <= D; ++i) {
    g[i] += l1 * t[i] + l2 * t2[i];
  }
  P G{};
  G[0] = T(1.0);
  for (int k = 1; k <= D; ++k) {
    T acc(0.0);
    for (int j = 1; j <= k; ++j) {
      acc += g[j] * G[k - j];
    }
    G[k] = -acc;
  }

  InverseDistortion<T> inv;
  for (int i = 0; i < 6; ++i) {
    inv.b[i] = G[i + 1];
  }

  const double v1 = value_of(l1);
  const double v2 = value_of(l2);
  double fold = std::numeric_limits<double>::infinity();
  if (std::abs(v2) < 1e-14) {
    if (v1 < 0.0) {
      fold = -1.0 / (3.0 * v1);
    }
  } else {
    const double disc = 9.0 * v1 * v1 - 20.0 * v2;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (const double u : {(-3.0 * v1 - sq) / (10.0 * v2), (-3.0 * v1 + sq) / (10.0 * v2)}) {
        if (u > 0.0 && u < fold) {
          fold = u;
        }
      }
    }
  }
  inv.valid_radius_sq = kDefaultValidRadiusSq;
  if (std::isfinite(fold)) {
    const double gf = 1.0 + v1 * fold + v2 * fold * fold;
    inv.valid_radius_sq = std::min(inv.valid_radius_sq, fold * gf * gf);
  }
  return inv;
}

/// Inverse radial distortion via the series polynomial, optionally polished
/// by Newton iterations on the undistorted squared radius. The squared input
/// radius is clamped to the validity disc so the result stays finite for
/// points beyond the fold of the forward map.
template <class T>
Vec2T<T> undistort(const Vec2T<T>& l, const InverseDistortion<T>& inv, const Vec2T<T>& xd,
                   int newton_steps = 0) {
  T s = xd.squaredNorm();
  if (value_of(s) > inv.valid_radius_sq) {
    s = T(inv.valid_radius_sq);
  }
  T G = inv.b[5];
  for (int i = 4; i >= 0; --i) {
    G = G * s + inv.b[i];
  }
  G = G * s + 1.0;
  if (newton_steps > 0 && value_of(s) > 0.0) {
    // Solve u g(u)^2 = s for the undistorted squared radius u, then the
    // exact scale factor is 1/g(u). Division-free in the radius keeps the
    // whole path smooth through the principal point.
    T u = s * G * G;
    for (int k = 0; k < newton_steps; ++k) {
      const T g = 1.0 + l[0] * u + l[1] * u * u;
      const T h = u * g * g - s;
      const T hp = g * (g + 2.0 * u * (l[0] + 2.0 * l[1] * u));
      u = u - h / hp;
    }
    const T g = 1.0 + l[0] * u + l[1] * u * u;
    G = 1.0 / g;
  }
  return {xd[0] * G, xd[1] * G};
}

/// Rotation matrix of an angle-axis vector via the exponential map. Below
/// squared angle 1e-16 the trigonometric factors switch to their Taylor
/// expansions in the squared angle, which keeps the expression smooth at the
/// origin (no square root of zero enters).
template <class T>
Mat3T<T> rotation_exp(const Vec3T<T>& w) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const T th2 = w.squaredNorm();
  T A;
  T B;
  if (value_of(th2) < 1e-16) {
    A = 1.0 - th2 / 6.0 + th2 * th2 / 120.0;
    B = 0.5 - th2 / 24.0 + th2 * th2 / 720.0;
  } else {
    const T th = sqrt(th2);
    A = sin(th) / th;
    B = (1.0 - cos(th)) / th2;
  }
  Mat3T<T> K;
  K << T(0.0), -w[2], w[1], w[2], T(0.0), -w[0], -w[1], w[0], T(0.0);
  return Mat3T<T>::Identity() + A * K + B * (K * K);
}

/// Full forward projection of a world point to pixel coordinates. Assumes
/// positive depth; callers gate on `transform_point(...).z()` where needed.
inline Vec2 project_point(const Pose& pose, const Intrinsics& cam, const Vec3& X) {
  const Vec3 Xc = transform_point(pose, X);
  return affine_map<double>(cam.s, distort<double>(cam.l, perspective_divide<double>(Xc)));
}

/// Normalized (undistorted) image coordinates of a pixel.
template <class T>
Vec2T<T> normalized_from_pixel(const Vec4T<T>& s, const Vec2T<T>& l, const InverseDistortion<T>& inv,
                               const Vec2T<T>& pixel, int newton_steps = 0) {
  return undistort<T>(l, inv, affine_unmap<T>(s, pixel), newton_steps);
}

/// Unit-depth viewing ray of a pixel in the camera frame.
inline Vec3 pixel_ray(const Intrinsics& cam, const Vec2& pixel, int newton_steps = 3) {
  const InverseDistortion<double> inv = invert_distortion<double>(cam.l);
  const Vec2 n = normalized_from_pixel<double>(cam.s, cam.l, inv, pixel, newton_steps);
  return {n[0], n[1], 1.0};
}

}  // namespace pba
