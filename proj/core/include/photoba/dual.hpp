#pragma once

#include <cassert>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace pba {

/// Forward-mode autodiff scalar: a value plus a fixed-width vector of partial
/// derivatives with respect to the currently active parameter block. All
/// arithmetic propagates derivatives by the chain rule; comparisons act on the
/// value part only.
template <int N>
class Dual {
 public:
  using Partials = Eigen::Matrix<double, N, 1>;
  static constexpr int kWidth = N;

  Dual() : a_(0.0), d_(Partials::Zero()) {}
  Dual(double value) : a_(value), d_(Partials::Zero()) {}  // NOLINT: implicit constants
  Dual(double value, const Partials& partials) : a_(value), d_(partials) {}

  /// A variable seeded as the `lane`-th active direction.
  static Dual seeded(double value, int lane) {
    Dual x(value);
    assert(lane >= 0 && lane < N);
    x.d_[lane] = 1.0;
    return x;
  }

  double value() const { return a_; }
  const Partials& partials() const { return d_; }
  Partials& partials() { return d_; }

  Dual operator-() const { return Dual(-a_, -d_); }

  Dual& operator+=(const Dual& o) {
    a_ += o.a_;
    d_ += o.d_;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    a_ -= o.a_;
    d_ -= o.d_;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    d_ = d_ * o.a_ + o.d_ * a_;
    a_ *= o.a_;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.a_;
    a_ *= inv;
    d_ = (d_ - o.d_ * a_) * inv;
    return *this;
  }

  Dual& operator+=(double s) {
    a_ += s;
    return *this;
  }
  Dual& operator-=(double s) {
    a_ -= s;
    return *this;
  }
  Dual& operator*=(double s) {
    a_ *= s;
    d_ *= s;
    return *this;
  }
  Dual& operator/=(double s) {
    a_ /= s;
    d_ /= s;
    return *this;
  }

 private:
  double a_;
  Partials d_;
};

template <int N>
inline Dual<N> operator+(Dual<N> x, const Dual<N>& y) {
  return x += y;
}
template <int N>
inline Dual<N> operator-(Dual<N> x, const Dual<N>& y) {
  return x -= y;
}
template <int N>
inline Dual<N> operator*(const Dual<N>& x, const Dual<N>& y) {
  return Dual<N>(x.value() * y.value(), x.partials() * y.value() + y.partials() * x.value());
}
template <int N>
inline Dual<N> operator/(const Dual<N>& x, const Dual<N>& y) {
  const double inv = 1.0 / y.value();
  const double v = x.value() * inv;
  return Dual<N>(v, (x.partials() - y.partials() * v) * inv);
}

template <int N>
inline Dual<N> operator+(Dual<N> x, double s) {
  return x += s;
}
template <int N>
inline Dual<N> operator+(double s, Dual<N> x) {
  return x += s;
}
template <int N>
inline Dual<N> operator-(Dual<N> x, double s) {
  return x -= s;
}
template <int N>
inline Dual<N> operator-(double s, const Dual<N>& x) {
  return Dual<N>(s - x.value(), -x.partials());
}
template <int N>
inline Dual<N> operator*(Dual<N> x, double s) {
  return x *= s;
}
template <int N>
inline Dual<N> operator*(double s, Dual<N> x) {
  return x *= s;
}
template <int N>
inline Dual<N> operator/(Dual<N> x, double s) {
  return x /= s;
}
template <int N>
inline Dual<N> operator/(double s, const Dual<N>& y) {
  const double inv = 1.0 / y.value();
  const double v = s * inv;
  return Dual<N>(v, y.partials() * (-v * inv));
}

template <int N>
inline bool operator<(const Dual<N>& x, const Dual<N>& y) {
  return x.value() < y.value();
}
template <int N>
inline bool operator>(const Dual<N>& x, const Dual<N>& y) {
  return x.value() > y.value();
}
template <int N>
inline bool operator<=(const Dual<N>& x, const Dual<N>& y) {
  return x.value() <= y.value();
}
template <int N>
inline bool operator>=(const Dual<N>& x, const Dual<N>& y) {
  return x.value() >= y.value();
}
template <int N>
inline bool operator<(const Dual<N>& x, double y) {
  return x.value() < y;
}
template <int N>
inline bool operator>(const Dual<N>& x, double y) {
  return x.value() > y;
}
template <int N>
inline bool operator<(double x, const Dual<N>& y) {
  return x < y.value();
}
template <int N>
inline bool operator>(double x, const Dual<N>& y) {
  return x > y.value();
}

template <int N>
inline Dual<N> sqrt(const Dual<N>& x) {
  const double s = std::sqrt(x.value());
  return Dual<N>(s, x.partials() * (0.5 / s));
}
template <int N>
inline Dual<N> sin(const Dual<N>& x) {
  return Dual<N>(std::sin(x.value()), x.partials() * std::cos(x.value()));
}
template <int N>
inline Dual<N> cos(const Dual<N>& x) {
  return Dual<N>(std::cos(x.value()), x.partials() * (-std::sin(x.value())));
}
template <int N>
inline Dual<N> abs(const Dual<N>& x) {
  return x.value() < 0.0 ? -x : x;
}

/// Value part of a generic scalar (identity on plain doubles).
inline double value_of(double x) { return x; }
template <int N>
inline double value_of(const Dual<N>& x) {
  return x.value();
}

/// Evaluates `f` (a templated callable VectorX<T> -> VectorX<T>) at `x` with
/// every input seeded as its own derivative direction. N must be >= x.size().
/// Returns the value vector and the dense Jacobian (rows = outputs).
template <int N, class F>
std::pair<Eigen::VectorXd, Eigen::MatrixXd> evaluate_with_derivatives(F&& f,
                                                                      const Eigen::VectorXd& x) {
  assert(x.size() <= N);
  Eigen::Matrix<Dual<N>, Eigen::Dynamic, 1> xd(x.size());
  for (int i = 0; i < x.size(); ++i) {
    xd[i] = Dual<N>::seeded(x[i], i);
  }
  const auto yd = f(xd);
  Eigen::VectorXd y(yd.size());
  Eigen::MatrixXd jac(yd.size(), x.size());
  for (int r = 0; r < yd.size(); ++r) {
    y[r] = yd[r].value();
    jac.row(r) = yd[r].partials().head(x.size()).transpose();
  }
  return {y, jac};
}

/// Result of comparing an analytic Jacobian against central finite
/// differences, column by column.
struct DerivativeCheckReport {
  double max_rel_error = 0.0;
  int worst_param = -1;
  int worst_output = -1;
  /// Columns whose finite-difference estimate straddles a non-smooth point
  /// (forward/backward estimates disagree strongly) are flagged instead of
  /// counted as failures.
  std::vector<int> one_sided_params;
};

/// Central-difference check of `jacobian` for `f` around `x`. A column is
/// flagged one-sided (and excluded from the error max) when the one-sided
/// differences disagree with each other far more than with the analytic
/// column, which happens at kinks such as bilinear lattice lines.
inline DerivativeCheckReport finite_difference_check(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
    const Eigen::MatrixXd& jacobian, const Eigen::VectorXd& x, double step) {
  DerivativeCheckReport report;
  const Eigen::VectorXd y0 = f(x);
  for (int c = 0; c < x.size(); ++c) {
    Eigen::VectorXd xp = x, xm = x;
    xp[c] += step;
    xm[c] -= step;
    const Eigen::VectorXd yp = f(xp);
    const Eigen::VectorXd ym = f(xm);
    const Eigen::VectorXd central = (yp - ym) / (2.0 * step);
    const Eigen::VectorXd fwd = (yp - y0) / step;
    const Eigen::VectorXd bwd = (y0 - ym) / step;
    const double scale = std::max(1.0, jacobian.col(c).cwiseAbs().maxCoeff());
    const double side_gap = (fwd - bwd).cwiseAbs().maxCoeff();
    const double central_err = (central - jacobian.col(c)).cwiseAbs().maxCoeff();
    if (side_gap > 1e3 * step * scale && side_gap > 10.0 * central_err) {
      report.one_sided_params.push_back(c);
      continue;
    }
    for (int r = 0; r < y0.size(); ++r) {
      const double rel = std::abs(central[r] - jacobian(r, c)) /
                         std::max(1.0, std::abs(jacobian(r, c)));
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = c;
        report.worst_output = r;
      }
    }
  }
  return report;
}

}  // namespace pba

namespace Eigen {

template <int N>
struct NumTraits<pba::Dual<N>> : NumTraits<double> {
  using Real = pba::Dual<N>;
  using NonInteger = pba::Dual<N>;
  using Nested = pba::Dual<N>;
  using Literal = double;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 1 + N,
    MulCost = 3 + 2 * N,
  };
};

}  // namespace Eigen
