#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace isac {

using cd = std::complex<double>;
using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kSpeedOfLight = 2.99792458e8;
inline constexpr cd kJ{0.0, 1.0};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct SingularGeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StructuralError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Wraps an angle into [-pi, pi).
inline double wrapToPi(double a) {
    double r = std::fmod(a + kPi, kTwoPi);
    if (r < 0.0) r += kTwoPi;
    return r - kPi;
}

/// Returns the 2*pi-alias of `value` nearest to `anchor`.
inline double unwrapNear(double value, double anchor) {
    return anchor + wrapToPi(value - anchor);
}

inline double dbmToWatts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

template <typename Derived>
bool allFinite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

inline void requireFinite(double v, const char* what) {
    if (!std::isfinite(v)) throw DomainError(std::string("non-finite ") + what);
}

}  // namespace isac
