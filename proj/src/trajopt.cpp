#include "kinodrive/trajopt.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>

namespace kinodrive::opt {

LinearGaussianPolicy pd_init_policy(int dim_s, int dim_a, int horizon, const PdGains& g) {
  if (dim_s < 3 || dim_a != 2 || horizon <= 0) throw Error("pd policy needs dim_s >= 3, dim_a == 2");
  Mat K = Mat::Zero(dim_a, dim_s);
  K(0, 2) = g.accel_dv;
  K(1, 0) = g.steer_dy;
  K(1, 1) = g.steer_dphi;
  Vec k(dim_a);
  k << -g.accel_dv * g.v_ref, 0.0;
  if (dim_s >= 7) {
    K(0, 3) = g.accel_gap;
    K(0, 5) = g.accel_closing;
    k[0] -= g.accel_gap * g.gap_ref;
  }
  Mat C = Mat::Zero(dim_a, dim_a);
  C(0, 0) = g.accel_std * g.accel_std;
  C(1, 1) = g.steer_std * g.steer_std;
  LinearGaussianPolicy p;
  p.K.assign(static_cast<std::size_t>(horizon), K);
  p.k.assign(static_cast<std::size_t>(horizon), k);
  p.C.assign(static_cast<std::size_t>(horizon), C);
  return p;
}

namespace {

void check_psd(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m), Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (!m.allFinite() || es.eigenvalues().minCoeff() < -1e-8 * scale) {
    throw Error("numerical blow-up: increase dynamics regularisation");
  }
}

}  // namespace

TrajMarginals forward_marginals(const LinearGaussianDynamics& dyn, const LinearGaussianPolicy& pol,
                                const Vec& init_mean, const Mat& init_cov) {
  const int T = pol.horizon();
  const Eigen::Index ds = init_mean.size();
  if (T == 0) return {};
  if (pol.dim_s() != ds || init_cov.rows() != ds) throw Error("dimension mismatch");
  if (dyn.horizon() < T - 1) throw Error("dynamics horizon shorter than policy horizon");
  const Eigen::Index da = pol.dim_a();
  TrajMarginals m;
  Vec mu_s = init_mean;
  Mat sig_s = symmetrize(init_cov);
  for (int t = 0; t < T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    const Mat& K = pol.K[i];
    Vec mu(ds + da);
    mu << mu_s, K * mu_s + pol.k[i];
    Mat sig(ds + da, ds + da);
    sig.topLeftCorner(ds, ds) = sig_s;
    sig.topRightCorner(ds, da) = sig_s * K.transpose();
    sig.bottomLeftCorner(da, ds) = K * sig_s;
    sig.bottomRightCorner(da, da) = K * sig_s * K.transpose() + pol.C[i];
    sig = symmetrize(sig);
    check_psd(sig);
    m.mean.push_back(mu);
    m.cov.push_back(sig);
    if (t + 1 < T) {
      Mat AB(ds, ds + da);
      AB << dyn.A[i], dyn.B[i];
      mu_s = AB * mu + dyn.f[i];
      sig_s = symmetrize(AB * sig * AB.transpose() + dyn.F[i]);
    }
  }
  return m;
}

double traj_kl(const LinearGaussianDynamics& /*dyn*/, const LinearGaussianPolicy& pol_new,
               const LinearGaussianPolicy& pol_old, const TrajMarginals& marginals_new) {
  const int T = marginals_new.horizon();
  if (pol_new.horizon() < T || pol_old.horizon() < T) throw Error("policy horizon mismatch");
  double kl = 0.0;
  for (int t = 0; t < T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    const Eigen::Index ds = pol_new.dim_s();
    const Eigen::Index da = pol_new.dim_a();
    Eigen::LLT<Mat> old_chol(pol_old.C[i]);
    if (old_chol.info() != Eigen::Success) throw Error("degenerate old policy");
    Eigen::LLT<Mat> new_chol(pol_new.C[i]);
    if (new_chol.info() != Eigen::Success) throw Error("degenerate new policy");
    const Mat old_prec = old_chol.solve(Mat::Identity(da, da));
    const Mat Lo = old_chol.matrixL();
    const Mat Ln = new_chol.matrixL();
    const double logdet_old = 2.0 * Lo.diagonal().array().log().sum();
    const double logdet_new = 2.0 * Ln.diagonal().array().log().sum();

    const Vec mu_s = marginals_new.mean[i].head(ds);
    const Mat sig_s = marginals_new.cov[i].topLeftCorner(ds, ds);
    const Mat dK = pol_new.K[i] - pol_old.K[i];
    const Vec dmean = dK * mu_s + (pol_new.k[i] - pol_old.k[i]);
    const double quad = dmean.dot(old_prec * dmean) + (dK.transpose() * old_prec * dK * sig_s).trace();
    const double step = 0.5 * ((old_prec * pol_new.C[i]).trace() - static_cast<double>(da) +
                               logdet_old - logdet_new + quad);
    kl += std::max(0.0, step);
  }
  return kl;
}

LinearGaussianPolicy lqg_backward(const LinearGaussianDynamics& dyn, const cost::QuadraticCost& q) {
  const int T = q.horizon();
  if (T == 0) return {};
  if (dyn.horizon() < std::max(1, T - 1)) throw Error("dynamics horizon shorter than cost horizon");
  const Eigen::Index d = q.C.front().rows();
  const Eigen::Index ds = dyn.dim_s();
  const Eigen::Index da = d - ds;

  LinearGaussianPolicy pol;
  pol.K.resize(static_cast<std::size_t>(T));
  pol.k.resize(static_cast<std::size_t>(T));
  pol.C.resize(static_cast<std::size_t>(T));
  Mat V = Mat::Zero(ds, ds);
  Vec v = Vec::Zero(ds);
  for (int t = T - 1; t >= 0; --t) {
    const auto i = static_cast<std::size_t>(t);
    Mat Qzz = q.C[i];
    Vec qz = q.c[i] - q.C[i] * q.nominal[i];
    if (t + 1 < T) {
      Mat AB(ds, d);
      AB << dyn.A[i], dyn.B[i];
      Qzz += AB.transpose() * V * AB;
      qz += AB.transpose() * (V * dyn.f[i] + v);
    }
    Qzz = symmetrize(Qzz);
    const Mat Qss = Qzz.topLeftCorner(ds, ds);
    const Mat Qus = Qzz.bottomLeftCorner(da, ds);
    Mat Quu = Qzz.bottomRightCorner(da, da);
    Eigen::SelfAdjointEigenSolver<Mat> es(Quu);
    if (!Quu.allFinite() || es.eigenvalues().minCoeff() <= 0.0) {
      throw Error("backward pass failed at t=" + std::to_string(t));
    }
    Quu = cost::floor_eigenvalues(Quu, cost::kActionEigenFloor);
    Eigen::LLT<Mat> llt(Quu);
    const Vec qs = qz.head(ds);
    const Vec qu = qz.tail(da);
    const Mat K = -llt.solve(Qus);
    const Vec k = -llt.solve(qu);
    pol.K[i] = K;
    pol.k[i] = k;
    pol.C[i] = symmetrize(llt.solve(Mat::Identity(da, da)));
    V = symmetrize(Qss + K.transpose() * Quu * K + Qus.transpose() * K + K.transpose() * Qus);
    v = qs + K.transpose() * Quu * k + Qus.transpose() * k + K.transpose() * qu;
  }
  return pol;
}

double expected_quadratic_cost(const cost::QuadraticCost& q, const TrajMarginals& m) {
  double total = 0.0;
  for (int t = 0; t < std::min(q.horizon(), m.horizon()); ++t) {
    const auto i = static_cast<std::size_t>(t);
    const Vec dz = m.mean[i] - q.nominal[i];
    total += 0.5 * (dz.dot(q.C[i] * dz) + (q.C[i] * m.cov[i]).trace()) + q.c[i].dot(dz) + q.c0[i];
  }
  return total;
}

double dual_update(double lambda, double violation, const DgdConfig& cfg) {
  double next = 0.0;
  if (cfg.additive) {
    next = lambda + cfg.alpha_dual * violation;
  } else {
    const double rel = std::min(std::abs(violation) / cfg.epsilon, 1.0);
    const double sign = violation > 0 ? 1.0 : (violation < 0 ? -1.0 : 0.0);
    next = lambda * std::exp(cfg.alpha_dual * sign * rel);
  }
  return std::clamp(next, cfg.lambda_min, cfg.lambda_max);
}

DgdResult dgd_solve(const DgdProblem& pb, const DgdConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw Error("epsilon must be positive");
  const int T = pb.prev_policy.horizon();
  const int ds = pb.prev_policy.dim_s();

  const TrajMarginals prev_marg = forward_marginals(pb.dyn, pb.prev_policy, pb.init_mean, pb.init_cov);
  std::vector<Vec> ns, na;
  for (int t = 0; t < T; ++t) {
    ns.push_back(prev_marg.mean[static_cast<std::size_t>(t)].head(ds));
    na.push_back(prev_marg.mean[static_cast<std::size_t>(t)].tail(pb.prev_policy.dim_a()));
  }
  const cost::QuadraticCost base = cost::expand_cost(ns, na, pb.cost);
  const cost::QuadraticCost nll = cost::policy_nll_expansion(ns, na, pb.prev_policy);

  DgdResult best;
  best.predicted_cost = std::numeric_limits<double>::infinity();
  DgdResult last;
  const double prev_cost = expected_quadratic_cost(base, prev_marg);
  double lambda = std::clamp(cfg.lambda0, cfg.lambda_min, cfg.lambda_max);
  bool any_within_10x = false;

  for (int it = 0; it < cfg.max_iter; ++it) {
    const cost::QuadraticCost q = cost::combine_augmented(base, nll, lambda, ds);
    LinearGaussianPolicy pol;
    try {
      pol = lqg_backward(pb.dyn, q);
    } catch (const Error&) {
      lambda = std::min(cfg.lambda_max, lambda * 10.0);
      continue;
    }
    const TrajMarginals marg = forward_marginals(pb.dyn, pol, pb.init_mean, pb.init_cov);
    const double kl = traj_kl(pb.dyn, pol, pb.prev_policy, marg);
    const double pred = expected_quadratic_cost(base, marg);
    last = {pol, lambda, kl, pred, prev_cost, false, it + 1};
    if (kl <= 10.0 * cfg.epsilon) any_within_10x = true;
    if (kl <= 1.1 * cfg.epsilon && pred < best.predicted_cost) {
      best = last;
      best.success = true;
    }
    lambda = dual_update(lambda, kl - cfg.epsilon, cfg);
  }
  if (best.success) {
    best.iterations = cfg.max_iter;
    return best;
  }
  if (!any_within_10x) throw Error("trust region unsatisfiable");
  last.iterations = cfg.max_iter;
  return last;
}

}  // namespace kinodrive::opt
