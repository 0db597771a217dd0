#pragma once

// Standard-normal helpers used by the Thurstone solvers and TrueSkill.
//
// All functions are templated on the floating-point type so the same code
// path can be exercised in long double by tests.

#include <cmath>
#include <concepts>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace qprobe {

namespace detail {

template <std::floating_point T>
inline void require_finite(T z, const char* fn) {
  if (!std::isfinite(z)) {
    throw std::domain_error(std::string(fn) + ": non-finite argument");
  }
}

// Lower switchover for the tail regime.
template <std::floating_point T>
inline constexpr T kTailSwitch = T(-6);

// x * R(x) for x > 0, where R is the Mills ratio (1 - Phi(x)) / phi(x).
// Evaluated as the continued fraction
//   R(x) = 1 / (x + 1 / (x + 2 / (x + 3 / (x + ...))))
// with the modified Lentz method. The result equals the bracket
// (1 - 1/x^2 + 3/x^4 - ...) of the asymptotic expansion, without the
// truncation error of the divergent series.
template <std::floating_point T>
T scaled_mills_ratio(T x) {
  const T tiny = std::numeric_limits<T>::min() * T(1e10);
  const T eps = std::numeric_limits<T>::epsilon();
  T f = x;
  T c = x;
  T d = 0;
  for (int k = 1; k < 500; ++k) {
    d = x + T(k) * d;
    if (std::abs(d) < tiny) d = tiny;
    c = x + T(k) / c;
    if (std::abs(c) < tiny) c = tiny;
    d = T(1) / d;
    const T delta = c * d;
    f *= delta;
    if (std::abs(delta - T(1)) < eps) break;
  }
  // f is the continued fraction x + 1/(x + 2/(x + ...)) = 1 / R(x).
  return x / f;
}

}  // namespace detail

/// Standard normal density.
template <std::floating_point T>
T normal_pdf(T z) {
  detail::require_finite(z, "normal_pdf");
  return std::exp(T(-0.5) * z * z) / std::sqrt(T(2) * std::numbers::pi_v<T>);
}

/// Standard normal CDF via erfc, accurate in the far left tail.
template <std::floating_point T>
T normal_cdf(T z) {
  detail::require_finite(z, "normal_cdf");
  return T(0.5) * std::erfc(-z / std::numbers::sqrt2_v<T>);
}

/// log(Phi(z)) without underflow for large negative z.
///
/// Below z = -6 the tail form
///   log Phi(z) = -z^2/2 - log(-z) - log(2 pi)/2 + log(1 - 1/z^2 + 3/z^4 - ...)
/// is used, with the bracket evaluated by continued fraction.
template <std::floating_point T>
T log_normal_cdf(T z) {
  detail::require_finite(z, "log_normal_cdf");
  if (z < detail::kTailSwitch<T>) {
    const T x = -z;
    return T(-0.5) * z * z - std::log(x) -
           T(0.5) * std::log(T(2) * std::numbers::pi_v<T>) +
           std::log(detail::scaled_mills_ratio(x));
  }
  if (z > T(0)) {
    return std::log1p(T(-0.5) * std::erfc(z / std::numbers::sqrt2_v<T>));
  }
  return std::log(normal_cdf(z));
}

/// Inverse Mills ratio phi(z) / Phi(z); TrueSkill's v-function.
template <std::floating_point T>
T inverse_mills(T z) {
  detail::require_finite(z, "inverse_mills");
  if (z < detail::kTailSwitch<T>) {
    const T x = -z;
    return x / detail::scaled_mills_ratio(x);
  }
  return normal_pdf(z) / normal_cdf(z);
}

/// TrueSkill's w-function v(z) * (v(z) + z), in (0, 1).
template <std::floating_point T>
T trueskill_w(T z) {
  const T v = inverse_mills(z);
  return v * (v + z);
}

}  // namespace qprobe
