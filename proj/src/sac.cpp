#include "kinodrive/sac.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

namespace kinodrive::sac {

Mat VectorEncoder::forward(const Params& p, const std::vector<const Obs*>& xs, Tape* tape) {
  if (xs.empty()) return Mat(p.out_dim(), 0);
  Mat X(xs.front()->size(), static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = *xs[i];
  return nn::mlp_forward_batch(p, X, tape ? &tape->mlp : nullptr);
}

void VectorEncoder::backward(const Params& p, const Tape& tape, const Mat& dF, Params* grads) {
  nn::mlp_backward_batch(p, tape.mlp, dF, grads);
}

Mat GraphEncoder::forward(const Params& p, const std::vector<const Obs*>& xs, Tape* tape) {
  return nn::gnn_encode_batch(p, xs, tape ? &tape->gnn : nullptr);
}

void GraphEncoder::backward(const Params& p, const Tape& tape, const Mat& dF, Params* grads) {
  nn::gnn_backward(p, tape.gnn, dF, grads);
}

namespace {

constexpr double kLog2 = std::numbers::ln2;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

// log(1 - tanh(u)^2) without cancellation.
double log_one_minus_tanh2(double u) { return 2.0 * (kLog2 - u - softplus(-2.0 * u)); }

Mat concat_rows(const Mat& a, const Mat& b) {
  Mat out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

}  // namespace

double squashed_log_prob(const Vec& mean, const Vec& log_std, const Vec& u) {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double z = (u[i] - mean[i]) * std::exp(-log_std[i]);
    lp += -0.5 * z * z - log_std[i] - 0.5 * std::log(2.0 * std::numbers::pi) - log_one_minus_tanh2(u[i]);
  }
  return lp;
}

template <class Enc>
SacAgent<Enc>::SacAgent(typename Enc::Params encoder, int action_dim, const SacConfig& cfg,
                        std::mt19937_64& rng) {
  if (action_dim <= 0) throw Error("action dimension must be positive");
  params.cfg = cfg;
  params.action_dim = action_dim;
  params.encoder = std::move(encoder);
  params.target_encoder = params.encoder;
  const int f = Enc::feature_dim(params.encoder);
  const int h = cfg.hidden;
  params.actor = nn::make_mlp({f, h, h, 2 * action_dim}, nn::Activation::relu, nn::Activation::identity, rng);
  params.q1 = nn::make_mlp({f + action_dim, h, h, 1}, nn::Activation::relu, nn::Activation::identity, rng);
  params.q2 = nn::make_mlp({f + action_dim, h, h, 1}, nn::Activation::relu, nn::Activation::identity, rng);
  params.target_q1 = params.q1;
  params.target_q2 = params.q2;
  for (const nn::Mlp* m : Enc::nets(params.encoder)) enc_opt_.push_back(nn::adam_init(*m));
  actor_opt_ = nn::adam_init(params.actor);
  q1_opt_ = nn::adam_init(params.q1);
  q2_opt_ = nn::adam_init(params.q2);
}

template <class Enc>
double SacAgent<Enc>::squash_log_std(double raw) const {
  const double lo = params.cfg.log_std_min;
  const double hi = params.cfg.log_std_max;
  return lo + 0.5 * (hi - lo) * (std::tanh(raw) + 1.0);
}

template <class Enc>
Vec SacAgent<Enc>::act(const Obs& obs, std::mt19937_64& rng, bool deterministic) const {
  const Mat F = Enc::forward(params.encoder, {&obs}, nullptr);
  const Vec out = nn::mlp_forward(params.actor, F.col(0));
  const int da = params.action_dim;
  Vec a(da);
  std::normal_distribution<double> n01;
  for (int i = 0; i < da; ++i) {
    double u = out[i];
    if (!deterministic) u += std::exp(squash_log_std(out[da + i])) * n01(rng);
    a[i] = std::tanh(u);
  }
  return a;
}

template <class Enc>
SacStats SacAgent<Enc>::update(const std::vector<const Transition<Obs>*>& batch, std::mt19937_64& rng) {
  const SacConfig& cfg = params.cfg;
  const int da = params.action_dim;
  const auto B = static_cast<Eigen::Index>(batch.size());
  if (B == 0) throw Error("empty batch");
  const double inv_b = 1.0 / static_cast<double>(B);
  const double lo = cfg.log_std_min, hi = cfg.log_std_max;
  std::normal_distribution<double> n01;

  std::vector<const Obs*> obs, next;
  Mat A(da, B);
  Vec r(B), notdone(B);
  for (Eigen::Index j = 0; j < B; ++j) {
    const auto* t = batch[static_cast<std::size_t>(j)];
    obs.push_back(&t->obs);
    next.push_back(&t->next_obs);
    A.col(j) = t->action;
    r[j] = t->reward;
    notdone[j] = t->done ? 0.0 : 1.0;
  }

  // Soft Bellman target from the target critics at a fresh next action.
  const Mat Fn = Enc::forward(params.target_encoder, next, nullptr);
  const Mat outn = nn::mlp_forward_batch(params.actor, Fn);
  Mat An(da, B);
  Vec logp_n = Vec::Zero(B);
  for (Eigen::Index j = 0; j < B; ++j) {
    Vec mean(da), ls(da), u(da);
    for (int i = 0; i < da; ++i) {
      mean[i] = outn(i, j);
      ls[i] = squash_log_std(outn(da + i, j));
      u[i] = mean[i] + std::exp(ls[i]) * n01(rng);
      An(i, j) = std::tanh(u[i]);
    }
    logp_n[j] = squashed_log_prob(mean, ls, u);
  }
  const Mat Xn = concat_rows(Fn, An);
  const Mat tq1 = nn::mlp_forward_batch(params.target_q1, Xn);
  const Mat tq2 = nn::mlp_forward_batch(params.target_q2, Xn);
  Vec y(B);
  for (Eigen::Index j = 0; j < B; ++j) {
    const double soft = std::min(tq1(0, j), tq2(0, j)) - cfg.alpha * logp_n[j];
    y[j] = r[j] + cfg.gamma * notdone[j] * soft;
  }

  // Critic step; the shared encoder is trained through both critics.
  typename Enc::Tape etape;
  const Mat F = Enc::forward(params.encoder, obs, &etape);
  const Mat X = concat_rows(F, A);
  nn::MlpTape t1, t2;
  const Mat q1 = nn::mlp_forward_batch(params.q1, X, &t1);
  const Mat q2 = nn::mlp_forward_batch(params.q2, X, &t2);
  const Vec e1 = q1.row(0).transpose() - y;
  const Vec e2 = q2.row(0).transpose() - y;
  SacStats st;
  st.loss_q = (e1.squaredNorm() + e2.squaredNorm()) * inv_b;
  if (!std::isfinite(st.loss_q)) throw Error("diverged");
  nn::Mlp g1 = nn::zeros_like(params.q1);
  nn::Mlp g2 = nn::zeros_like(params.q2);
  const Mat dX1 = nn::mlp_backward_batch(params.q1, t1, (2.0 * inv_b) * e1.transpose(), &g1);
  const Mat dX2 = nn::mlp_backward_batch(params.q2, t2, (2.0 * inv_b) * e2.transpose(), &g2);
  const Eigen::Index fd = F.rows();
  typename Enc::Params genc = nn::zeros_like(params.encoder);
  Enc::backward(params.encoder, etape, dX1.topRows(fd) + dX2.topRows(fd), &genc);
  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  nn::adam_step(params.q1, g1, q1_opt_, acfg);
  nn::adam_step(params.q2, g2, q2_opt_, acfg);
  {
    auto nets = Enc::nets(params.encoder);
    auto gnets = Enc::nets(genc);
    for (std::size_t i = 0; i < nets.size(); ++i) nn::adam_step(*nets[i], *gnets[i], enc_opt_[i], acfg);
  }

  // Actor step on detached features, reparameterised through the critics.
  nn::MlpTape ta;
  const Mat out = nn::mlp_forward_batch(params.actor, F, &ta);
  Mat Eps(da, B), Sig(da, B), Anew(da, B);
  Vec logp(B);
  for (Eigen::Index j = 0; j < B; ++j) {
    Vec mean(da), ls(da), u(da);
    for (int i = 0; i < da; ++i) {
      mean[i] = out(i, j);
      ls[i] = squash_log_std(out(da + i, j));
      Eps(i, j) = n01(rng);
      Sig(i, j) = std::exp(ls[i]);
      u[i] = mean[i] + Sig(i, j) * Eps(i, j);
      Anew(i, j) = std::tanh(u[i]);
    }
    logp[j] = squashed_log_prob(mean, ls, u);
  }
  const Mat Xa = concat_rows(F, Anew);
  nn::MlpTape ta1, ta2;
  const Mat qa1 = nn::mlp_forward_batch(params.q1, Xa, &ta1);
  const Mat qa2 = nn::mlp_forward_batch(params.q2, Xa, &ta2);
  Mat m1 = Mat::Zero(1, B), m2 = Mat::Zero(1, B);
  double qmin_sum = 0.0;
  for (Eigen::Index j = 0; j < B; ++j) {
    if (qa1(0, j) <= qa2(0, j)) {
      m1(0, j) = 1.0;
      qmin_sum += qa1(0, j);
    } else {
      m2(0, j) = 1.0;
      qmin_sum += qa2(0, j);
    }
  }
  st.loss_pi = (cfg.alpha * logp.sum() - qmin_sum) * inv_b;
  st.entropy = -logp.mean();
  if (!std::isfinite(st.loss_pi)) throw Error("diverged");
  const Mat dXa1 = nn::mlp_backward_batch(params.q1, ta1, m1, nullptr);
  const Mat dXa2 = nn::mlp_backward_batch(params.q2, ta2, m2, nullptr);
  const Mat dQda = dXa1.bottomRows(da) + dXa2.bottomRows(da);
  Mat dout(2 * da, B);
  for (Eigen::Index j = 0; j < B; ++j) {
    for (int i = 0; i < da; ++i) {
      const double th = Anew(i, j);
      const double du = inv_b * (-dQda(i, j) * (1.0 - th * th) + cfg.alpha * 2.0 * th);
      const double dls = du * Sig(i, j) * Eps(i, j) - inv_b * cfg.alpha;
      const double traw = std::tanh(out(da + i, j));
      dout(i, j) = du;
      dout(da + i, j) = dls * 0.5 * (hi - lo) * (1.0 - traw * traw);
    }
  }
  nn::Mlp ga = nn::zeros_like(params.actor);
  nn::mlp_backward_batch(params.actor, ta, dout, &ga);
  nn::adam_step(params.actor, ga, actor_opt_, acfg);

  nn::polyak_update(params.target_q1, params.q1, cfg.tau);
  nn::polyak_update(params.target_q2, params.q2, cfg.tau);
  {
    auto tn = Enc::nets(params.target_encoder);
    auto on = Enc::nets(params.encoder);
    for (std::size_t i = 0; i < tn.size(); ++i) nn::polyak_update(*tn[i], *on[i], cfg.tau);
  }
  return st;
}

template class SacAgent<VectorEncoder>;
template class SacAgent<GraphEncoder>;

// ---------------------------------------------------------------------------

namespace {

constexpr double kPosScale = 10.0;
constexpr double kVelScale = 5.0;

Vec scale_relative(const Vec& rel) {
  Vec s = rel;
  s[0] /= kPosScale;
  s[1] /= kPosScale;
  s[2] /= kVelScale;
  s[3] /= kVelScale;
  return s;
}

}  // namespace

Vec sac_state_vector(const sim::WorldState& w) {
  Vec s = sim::observe_state_vector(w);
  s[2] /= kVelScale;
  for (int k = 0; k < sim::kStateVectorSlots; ++k) s.segment(3 + 4 * k, 4) = scale_relative(s.segment(3 + 4 * k, 4));
  return s;
}

sim::GraphObs sac_graph(const sim::WorldState& w) {
  sim::GraphObs g = sim::observe_graph(w);
  g.vertices[0][2] /= kVelScale;
  for (std::size_t i = 1; i < g.vertices.size(); ++i) g.vertices[i] = scale_relative(g.vertices[i]);
  for (auto& e : g.edges) e.feature = scale_relative(e.feature);
  return g;
}

template <>
Vec sac_observe<Vec>(const sim::WorldState& w) {
  return sac_state_vector(w);
}

template <>
sim::GraphObs sac_observe<sim::GraphObs>(const sim::WorldState& w) {
  return sac_graph(w);
}

sim::Action to_vehicle_action(const Vec& a, const sim::VehicleLimits& limits) {
  return sim::Action{std::clamp(a[0], -1.0, 1.0) * limits.accel_max,
                     std::clamp(a[1], -1.0, 1.0) * limits.steer_max};
}

template <class Obs>
Obs DrivingEnv<Obs>::reset(std::uint64_t seed) {
  world_ = sim::spawn_scenario(cfg_, seed);
  last_ = sac_observe<Obs>(world_);
  return last_;
}

template <class Obs>
EnvStep<Obs> DrivingEnv<Obs>::step(const Vec& action) {
  const sim::Action act = to_vehicle_action(action, cfg_.limits);
  auto [next, ev] = sim::step_world(world_, act);
  EnvStep<Obs> out;
  out.cost = cost::step_cost(world_, act, ev, weights_).cost;
  out.terminal = ev.collision || ev.off_road;
  out.truncated = ev.done && !out.terminal;
  out.collision = ev.collision;
  world_ = std::move(next);
  try {
    last_ = sac_observe<Obs>(world_);
  } catch (const Error&) {
    // Off the map: the transition is terminal, keep the previous observation.
    out.terminal = true;
    out.truncated = false;
  }
  out.obs = last_;
  return out;
}

template class DrivingEnv<Vec>;
template class DrivingEnv<sim::GraphObs>;

template <class Enc>
SacResult<Enc> sac_train(Env<typename Enc::Obs>& env, typename Enc::Params encoder, const SacConfig& cfg,
                         long total_steps, std::uint64_t seed, const SacCallback<Enc>& on_log) {
  using Obs = typename Enc::Obs;
  std::mt19937_64 rng(seed);
  SacResult<Enc> res;
  res.agent = std::make_unique<SacAgent<Enc>>(std::move(encoder), env.action_dim(), cfg, rng);
  if (total_steps <= 0) return res;

  ReplayBuffer<Transition<Obs>> buffer(cfg.replay_capacity);
  std::deque<double> returns;
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Obs obs = env.reset(rng());
  double ep_return = 0.0;
  SacStats acc;
  long n_updates = 0;
  for (long step = 1; step <= total_steps; ++step) {
    Vec a(env.action_dim());
    if (step <= cfg.warmup) {
      for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = unif(rng);
    } else {
      a = res.agent->act(obs, rng, false);
    }
    EnvStep<Obs> out = env.step(a);
    const double reward = -out.cost * cfg.reward_scale;
    ep_return += -out.cost;
    buffer.push({obs, a, reward, out.obs, out.terminal});
    obs = out.obs;
    if (out.terminal || out.truncated) {
      returns.push_back(ep_return);
      while (static_cast<int>(returns.size()) > cfg.return_window) returns.pop_front();
      ep_return = 0.0;
      obs = env.reset(rng());
    }
    if (step > cfg.warmup && buffer.size() >= static_cast<std::size_t>(cfg.batch)) {
      const SacStats s = res.agent->update(buffer.sample(static_cast<std::size_t>(cfg.batch), rng), rng);
      acc.loss_q += s.loss_q;
      acc.loss_pi += s.loss_pi;
      acc.entropy += s.entropy;
      ++n_updates;
    }
    if (cfg.log_every > 0 && step % cfg.log_every == 0) {
      SacRow row;
      row.env_steps = step;
      if (!returns.empty()) {
        for (double x : returns) row.mean_return += x;
        row.mean_return /= static_cast<double>(returns.size());
      } else {
        row.mean_return = ep_return;
      }
      if (n_updates > 0) {
        row.loss_q = acc.loss_q / static_cast<double>(n_updates);
        row.loss_pi = acc.loss_pi / static_cast<double>(n_updates);
        row.entropy = acc.entropy / static_cast<double>(n_updates);
      }
      acc = SacStats{};
      n_updates = 0;
      res.log.push_back(row);
      if (on_log) on_log(*res.agent, row);
    }
  }
  return res;
}

template SacResult<VectorEncoder> sac_train<VectorEncoder>(Env<Vec>&, nn::Mlp, const SacConfig&, long,
                                                           std::uint64_t, const SacCallback<VectorEncoder>&);
template SacResult<GraphEncoder> sac_train<GraphEncoder>(Env<sim::GraphObs>&, nn::GnnParams, const SacConfig&,
                                                         long, std::uint64_t, const SacCallback<GraphEncoder>&);

template <class Enc>
rollout::WorldPolicy driving_policy(const SacAgent<Enc>& agent, const sim::VehicleLimits& limits) {
  const SacAgent<Enc>* ag = &agent;
  return [ag, limits](const sim::WorldState& w, int, std::mt19937_64& noise) {
    const Vec a = ag->act(sac_observe<typename Enc::Obs>(w), noise, true);
    return to_vehicle_action(a, limits);
  };
}

template rollout::WorldPolicy driving_policy<VectorEncoder>(const SacAgent<VectorEncoder>&,
                                                            const sim::VehicleLimits&);
template rollout::WorldPolicy driving_policy<GraphEncoder>(const SacAgent<GraphEncoder>&,
                                                           const sim::VehicleLimits&);

}  // namespace kinodrive::sac
