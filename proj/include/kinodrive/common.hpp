#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace kinodrive {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised for every contract violation in the library. The message is the
/// short diagnostic named by the operation ("off map", "invalid state", ...),
/// optionally followed by context after a colon.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

}  // namespace kinodrive
