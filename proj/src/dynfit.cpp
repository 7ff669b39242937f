#include "kinodrive/dynfit.hpp"

#include "kinodrive/cost.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

namespace kinodrive::dyn {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void sample_moments(const std::vector<Vec>& xs, Vec& mean, Mat& cov) {
  const Eigen::Index d = xs.front().size();
  mean = Vec::Zero(d);
  for (const auto& x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  cov = Mat::Zero(d, d);
  for (const auto& x : xs) {
    const Vec c = x - mean;
    cov.noalias() += c * c.transpose();
  }
  cov /= static_cast<double>(xs.size());
}

Mat floored(const Mat& cov) {
  const Mat s = symmetrize(cov);
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  if (es.eigenvalues().minCoeff() >= kCovFloor) return s;
  return cost::floor_eigenvalues(s, kCovFloor);
}

// k-means++ seeding: each further mean is drawn with probability
// proportional to its squared distance from the nearest chosen mean.
GmmModel initialise(int k, const std::vector<Vec>& samples, std::mt19937_64& rng) {
  GmmModel g;
  Vec mean;
  Mat cov;
  sample_moments(samples, mean, cov);
  cov = floored(cov);
  const std::size_t n = samples.size();
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (int i = 0; i < k; ++i) {
    g.means.push_back(samples[pick]);
    g.covariances.push_back(cov);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      d2[j] = std::min(d2[j], (samples[j] - samples[pick]).squaredNorm());
      total += d2[j];
    }
    if (i + 1 == k) break;
    if (total <= 0.0) {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      continue;
    }
    std::discrete_distribution<std::size_t> next(d2.begin(), d2.end());
    pick = next(rng);
  }
  g.weights = Vec::Constant(k, 1.0 / k);
  return g;
}

// Row n holds log(w_k) + log N(x_n; mu_k, Sigma_k).
Mat joint_log_densities(const GmmModel& gmm, const std::vector<Vec>& samples) {
  const int k = gmm.components();
  Mat lp(static_cast<Eigen::Index>(samples.size()), k);
  for (int c = 0; c < k; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    Eigen::LLT<Mat> chol(gmm.covariances[ci]);
    if (chol.info() != Eigen::Success) throw Error("gmm covariance not positive definite");
    const double lw = std::log(std::max(gmm.weights[c], std::numeric_limits<double>::min()));
    for (std::size_t n = 0; n < samples.size(); ++n) {
      lp(static_cast<Eigen::Index>(n), c) = lw + log_gaussian_density(samples[n], gmm.means[ci], chol);
    }
  }
  return lp;
}

Vec row_logsumexp(const Mat& lp) {
  Vec out(lp.rows());
  for (Eigen::Index n = 0; n < lp.rows(); ++n) {
    const double mx = lp.row(n).maxCoeff();
    out[n] = mx + std::log((lp.row(n).array() - mx).exp().sum());
  }
  return out;
}

}  // namespace

double log_gaussian_density(const Vec& x, const Vec& mean, const Eigen::LLT<Mat>& chol) {
  const Vec z = chol.matrixL().solve(x - mean);
  const Mat L = chol.matrixL();
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  return -0.5 * (z.squaredNorm() + logdet + static_cast<double>(x.size()) * kLog2Pi);
}

Mat gmm_responsibilities(const GmmModel& gmm, const std::vector<Vec>& samples) {
  Mat lp = joint_log_densities(gmm, samples);
  const Vec lse = row_logsumexp(lp);
  for (Eigen::Index n = 0; n < lp.rows(); ++n) lp.row(n) = (lp.row(n).array() - lse[n]).exp();
  return lp;
}

double gmm_log_likelihood(const GmmModel& gmm, const std::vector<Vec>& samples) {
  return row_logsumexp(joint_log_densities(gmm, samples)).sum();
}

GmmModel gmm_em_update(const GmmModel& gmm, const std::vector<Vec>& samples, int iters,
                       std::mt19937_64& rng, std::vector<double>* loglik_trace) {
  if (samples.empty()) throw Error("no samples for gmm update");
  const Eigen::Index d = samples.front().size();
  for (const auto& s : samples) {
    if (s.size() != d) throw Error("inconsistent sample dimension");
  }
  const int k = std::min<int>(gmm.target_components, static_cast<int>(samples.size()));
  GmmModel g;
  if (gmm.fitted() && gmm.components() == k && gmm.dim() == d) {
    g = gmm;
  } else {
    g = initialise(k, samples, rng);
  }
  g.target_components = gmm.target_components;
  g.total_points = gmm.total_points + static_cast<long>(samples.size());

  const auto n = static_cast<Eigen::Index>(samples.size());
  Mat X(d, n);
  for (Eigen::Index i = 0; i < n; ++i) X.col(i) = samples[static_cast<std::size_t>(i)];

  for (int it = 0; it < iters; ++it) {
    Mat lp = joint_log_densities(g, samples);
    const Vec lse = row_logsumexp(lp);
    if (loglik_trace && it == 0) loglik_trace->push_back(lse.sum());
    Mat resp(n, k);
    for (Eigen::Index i = 0; i < n; ++i) resp.row(i) = (lp.row(i).array() - lse[i]).exp();

    const Vec nk = resp.colwise().sum().transpose();
    for (int c = 0; c < k; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      if (nk[c] < 1e-8) {
        // Re-seed an empty component at the worst-explained sample.
        Eigen::Index worst = 0;
        lse.minCoeff(&worst);
        Vec mean;
        Mat cov;
        sample_moments(samples, mean, cov);
        g.means[ci] = samples[static_cast<std::size_t>(worst)];
        g.covariances[ci] = floored(cov);
        g.weights[c] = 1.0 / static_cast<double>(n);
        continue;
      }
      const Vec r = resp.col(c);
      const Vec mu = X * r / nk[c];
      const Mat centered = X.colwise() - mu;
      const Mat cov = centered * r.asDiagonal() * centered.transpose() / nk[c];
      g.means[ci] = mu;
      g.covariances[ci] = floored(cov);
      g.weights[c] = nk[c] / static_cast<double>(n);
    }
    g.weights /= g.weights.sum();
    if (loglik_trace) loglik_trace->push_back(gmm_log_likelihood(g, samples));
  }
  return g;
}

NiwPrior gmm_prior_moments(const GmmModel& gmm, const std::vector<Vec>& query) {
  if (!gmm.fitted()) throw Error("prior unavailable");
  if (query.empty()) throw Error("prior unavailable: empty query");
  const Mat resp = gmm_responsibilities(gmm, query);
  const Vec wbar = resp.colwise().mean().transpose();
  const Eigen::Index d = gmm.dim();
  NiwPrior p;
  p.mu0 = Vec::Zero(d);
  for (int c = 0; c < gmm.components(); ++c) p.mu0 += wbar[c] * gmm.means[static_cast<std::size_t>(c)];
  p.Phi = Mat::Zero(d, d);
  for (int c = 0; c < gmm.components(); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const Vec dm = gmm.means[ci] - p.mu0;
    p.Phi += wbar[c] * (gmm.covariances[ci] + dm * dm.transpose());
  }
  p.m = 1.0;
  p.n0 = 1.0;
  p.Phi = symmetrize(p.Phi) * p.n0;
  return p;
}

GaussianConditional condition_gaussian(const Vec& mu, const Mat& sigma, Eigen::Index split) {
  const Eigen::Index d = mu.size();
  if (split <= 0 || split >= d || sigma.rows() != d || sigma.cols() != d) {
    throw Error("invalid conditioning split");
  }
  const Eigen::Index m = d - split;
  const Mat s11 = sigma.topLeftCorner(split, split);
  const Mat s21 = sigma.bottomLeftCorner(m, split);
  Eigen::LLT<Mat> llt(symmetrize(s11));
  if (llt.info() != Eigen::Success) throw Error("singular conditioning block");
  GaussianConditional out;
  out.gain = llt.solve(s21.transpose()).transpose();
  out.offset = mu.tail(m) - out.gain * mu.head(split);
  out.cov = symmetrize(sigma.bottomRightCorner(m, m) - out.gain * s21.transpose());
  return out;
}

void niw_posterior(const Vec& emp_mean, const Mat& emp_cov, double n, const NiwPrior& prior,
                   Vec& mean, Mat& cov) {
  const Vec dm = emp_mean - prior.mu0;
  mean = (n * emp_mean + prior.m * prior.mu0) / (n + prior.m);
  cov = (prior.Phi + n * emp_cov + (n * prior.m / (n + prior.m)) * dm * dm.transpose()) /
        (n + prior.n0);
  cov = symmetrize(cov);
}

std::vector<Vec> trajectory_tuples(const Trajectory& traj) {
  std::vector<Vec> out;
  for (int t = 0; t < traj.length(); ++t) {
    const auto i = static_cast<std::size_t>(t);
    const Vec& s = traj.states[i];
    const Vec& a = traj.actions[i];
    const Vec& sn = traj.states[i + 1];
    Vec x(s.size() + a.size() + sn.size());
    x << s, a, sn;
    out.push_back(std::move(x));
  }
  return out;
}

LinearGaussianDynamics fit_local_dynamics(const std::vector<Trajectory>& trajs,
                                          const GmmModel* gmm, double reg) {
  if (trajs.size() < 2) throw Error("need at least two trajectories");
  int horizon = 0;
  for (const auto& tr : trajs) {
    if (tr.states.size() != tr.actions.size() + 1) throw Error("malformed trajectory");
    horizon = std::max(horizon, tr.length());
  }
  if (horizon == 0) throw Error("empty trajectories");
  const auto ds = trajs.front().states.front().size();
  const auto da = trajs.front().actions.front().size();
  const bool use_prior = gmm != nullptr && gmm->fitted();

  LinearGaussianDynamics dyn;
  for (int t = 0; t < horizon; ++t) {
    std::vector<Vec> pool;
    for (const auto& tr : trajs) {
      for (int u = std::max(0, t - kPoolHalfWidth); u <= std::min(tr.length() - 1, t + kPoolHalfWidth); ++u) {
        const auto i = static_cast<std::size_t>(u);
        Vec x(2 * ds + da);
        x << tr.states[i], tr.actions[i], tr.states[i + 1];
        pool.push_back(std::move(x));
      }
    }
    if (pool.empty()) {
      // Every trajectory ended earlier; hold the last fit.
      dyn.A.push_back(dyn.A.back());
      dyn.B.push_back(dyn.B.back());
      dyn.f.push_back(dyn.f.back());
      dyn.F.push_back(dyn.F.back());
      continue;
    }
    Vec emp_mean;
    Mat emp_cov;
    sample_moments(pool, emp_mean, emp_cov);
    Vec mean = emp_mean;
    Mat cov = emp_cov;
    if (use_prior) {
      niw_posterior(emp_mean, emp_cov, static_cast<double>(pool.size()),
                    gmm_prior_moments(*gmm, pool), mean, cov);
    }
    GaussianConditional cond;
    try {
      cond = condition_gaussian(mean, cov, ds + da);
    } catch (const Error&) {
      Mat c2 = cov;
      c2.topLeftCorner(ds + da, ds + da) += reg * Mat::Identity(ds + da, ds + da);
      try {
        cond = condition_gaussian(mean, c2, ds + da);
      } catch (const Error&) {
        throw Error("rank-deficient data at t=" + std::to_string(t));
      }
    }
    dyn.A.push_back(cond.gain.leftCols(ds));
    dyn.B.push_back(cond.gain.rightCols(da));
    dyn.f.push_back(cond.offset);
    Mat F = cond.cov + reg * Mat::Identity(ds, ds);
    dyn.F.push_back(floored(F));
  }
  return dyn;
}

void GmmDynamicsPrior::update(const std::vector<Trajectory>& trajs, std::mt19937_64& rng) {
  for (const auto& tr : trajs) {
    if (tr.length() > 0) episodes_.push_back(tr);
  }
  while (static_cast<int>(episodes_.size()) > window_) episodes_.pop_front();
  std::vector<Vec> samples;
  for (const auto& tr : episodes_) {
    auto tuples = trajectory_tuples(tr);
    samples.insert(samples.end(), std::make_move_iterator(tuples.begin()),
                   std::make_move_iterator(tuples.end()));
  }
  if (samples.empty()) return;
  gmm_ = gmm_em_update(gmm_, samples, em_iters_, rng);
}

void write_gmm(std::ostream& os, const GmmModel& gmm) {
  const auto old = os.precision(17);
  for (int c = 0; c < gmm.components(); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    os << gmm.weights[c];
    for (Eigen::Index i = 0; i < gmm.means[ci].size(); ++i) os << ' ' << gmm.means[ci][i];
    const Mat& cov = gmm.covariances[ci];
    for (Eigen::Index r = 0; r < cov.rows(); ++r) {
      for (Eigen::Index q = 0; q < cov.cols(); ++q) os << ' ' << cov(r, q);
    }
    os << '\n';
  }
  os.precision(old);
}

GmmModel read_gmm(std::istream& is) {
  GmmModel g;
  std::vector<double> weights;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<double> vals;
    double v = 0.0;
    while (ls >> v) vals.push_back(v);
    if (vals.empty()) continue;
    // 1 + d + d^2 values per line.
    const double disc = std::sqrt(1.0 + 4.0 * (static_cast<double>(vals.size()) - 1.0));
    const auto d = static_cast<Eigen::Index>(std::llround((disc - 1.0) / 2.0));
    if (d <= 0 || static_cast<Eigen::Index>(vals.size()) != 1 + d + d * d) {
      throw Error("malformed gmm line " + std::to_string(lineno));
    }
    if (g.fitted() && d != g.dim()) throw Error("inconsistent gmm dimension at line " + std::to_string(lineno));
    weights.push_back(vals[0]);
    g.means.push_back(Eigen::Map<const Vec>(vals.data() + 1, d));
    g.covariances.push_back(
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            vals.data() + 1 + d, d, d));
  }
  g.weights = Eigen::Map<const Vec>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  g.target_components = g.components() > 0 ? g.components() : 20;
  return g;
}

}  // namespace kinodrive::dyn
