#pragma once

#include "kinodrive/common.hpp"
#include "kinodrive/linear_gaussian.hpp"

#include <deque>
#include <iosfwd>
#include <random>
#include <vector>

namespace kinodrive::dyn {

/// Covariance eigenvalue floor used throughout dynamics fitting.
inline constexpr double kCovFloor = 1e-8;

/// Gaussian mixture over joint (s, a, s') tuples.
struct GmmModel {
  int target_components = 20;
  Vec weights;
  std::vector<Vec> means;
  std::vector<Mat> covariances;
  long total_points = 0;

  int components() const { return static_cast<int>(means.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
  bool fitted() const { return !means.empty(); }
};

/// Normal-inverse-Wishart prior in scatter form.
struct NiwPrior {
  Vec mu0;
  Mat Phi;
  double m = 1.0;
  double n0 = 1.0;
};

double log_gaussian_density(const Vec& x, const Vec& mean, const Eigen::LLT<Mat>& chol);

/// Per-sample component responsibilities, one row per sample.
Mat gmm_responsibilities(const GmmModel& gmm, const std::vector<Vec>& samples);

/// Total data log-likelihood.
double gmm_log_likelihood(const GmmModel& gmm, const std::vector<Vec>& samples);

/// Runs `iters` EM sweeps, warm-started from `gmm` when it is fitted with the
/// target component count, otherwise initialised from `rng`. With fewer
/// samples than components the component count is reduced to the sample
/// count for this fit. Appends the log-likelihood before the first sweep and
/// after each sweep to `loglik_trace` when given.
GmmModel gmm_em_update(const GmmModel& gmm, const std::vector<Vec>& samples, int iters,
                       std::mt19937_64& rng, std::vector<double>* loglik_trace = nullptr);

/// Responsibility-weighted mixture moments at the query samples, as a
/// single-pseudo-sample NIW prior. Throws "prior unavailable" when unfitted.
NiwPrior gmm_prior_moments(const GmmModel& gmm, const std::vector<Vec>& query);

struct GaussianConditional {
  Mat gain;
  Vec offset;
  Mat cov;
};

/// Conditional of the trailing block given the leading `split` coordinates.
/// Throws "singular conditioning block" when the leading block is not PD.
GaussianConditional condition_gaussian(const Vec& mu, const Mat& sigma, Eigen::Index split);

/// Empirical moments blended with the prior: the posterior-mean style
/// estimate used to condition each time step.
void niw_posterior(const Vec& emp_mean, const Mat& emp_cov, double n, const NiwPrior& prior,
                   Vec& mean, Mat& cov);

inline constexpr int kPoolHalfWidth = 2;

/// Per-timestep linear-Gaussian dynamics from sampled trajectories. Tuples
/// from steps [t-2, t+2] of every trajectory are pooled; `gmm` (may be null or
/// unfitted) supplies the prior. Trajectories may differ in length; the
/// horizon is the longest one.
LinearGaussianDynamics fit_local_dynamics(const std::vector<Trajectory>& trajs,
                                          const GmmModel* gmm, double reg = 1e-6);

/// Flattens every (s, a, s') tuple of a trajectory.
std::vector<Vec> trajectory_tuples(const Trajectory& traj);

/// Global dynamics prior refit on a sliding window of recent episodes.
class GmmDynamicsPrior {
 public:
  explicit GmmDynamicsPrior(int components = 20, int window_episodes = 20, int em_iters = 10)
      : window_(window_episodes), em_iters_(em_iters) {
    gmm_.target_components = components;
  }

  void update(const std::vector<Trajectory>& trajs, std::mt19937_64& rng);
  const GmmModel& gmm() const { return gmm_; }
  std::size_t episodes() const { return episodes_.size(); }

 private:
  GmmModel gmm_;
  std::deque<Trajectory> episodes_;
  int window_;
  int em_iters_;
};

/// One line per component: weight, mean, row-major covariance.
void write_gmm(std::ostream& os, const GmmModel& gmm);
GmmModel read_gmm(std::istream& is);

}  // namespace kinodrive::dyn
