#pragma once

#include "kinodrive/common.hpp"

#include <vector>

namespace kinodrive {

/// Time-varying linear-Gaussian policy a ~ N(K_t s + k_t, C_t).
struct LinearGaussianPolicy {
  std::vector<Mat> K;
  std::vector<Vec> k;
  std::vector<Mat> C;

  int horizon() const { return static_cast<int>(K.size()); }
  int dim_s() const { return K.empty() ? 0 : static_cast<int>(K.front().cols()); }
  int dim_a() const { return K.empty() ? 0 : static_cast<int>(K.front().rows()); }
  Vec mean_action(int t, const Vec& s) const { return K[static_cast<std::size_t>(t)] * s + k[static_cast<std::size_t>(t)]; }
};

/// Time-varying linear-Gaussian dynamics s' ~ N(A_t s + B_t a + f_t, F_t).
struct LinearGaussianDynamics {
  std::vector<Mat> A;
  std::vector<Mat> B;
  std::vector<Vec> f;
  std::vector<Mat> F;

  int horizon() const { return static_cast<int>(A.size()); }
  int dim_s() const { return A.empty() ? 0 : static_cast<int>(A.front().rows()); }
  int dim_a() const { return B.empty() ? 0 : static_cast<int>(B.front().cols()); }
};

/// One sampled episode: states has one more entry than actions (the state
/// reached after the final action).
struct Trajectory {
  std::vector<Vec> states;
  std::vector<Vec> actions;
  std::vector<double> costs;

  int length() const { return static_cast<int>(actions.size()); }
  double total_cost() const {
    double c = 0.0;
    for (double x : costs) c += x;
    return c;
  }
};

/// Per-timestep joint Gaussian over [s_t; a_t].
struct TrajMarginals {
  std::vector<Vec> mean;
  std::vector<Mat> cov;

  int horizon() const { return static_cast<int>(mean.size()); }
};

}  // namespace kinodrive
