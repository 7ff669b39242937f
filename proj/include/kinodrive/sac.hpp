#pragma once

#include "kinodrive/cost.hpp"
#include "kinodrive/neural.hpp"
#include "kinodrive/rollout.hpp"
#include "kinodrive/sim.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace kinodrive::sac {

template <class Obs>
struct Transition {
  Obs obs;
  Vec action;  // normalised to [-1, 1]
  double reward = 0.0;
  Obs next_obs;
  bool done = false;
};

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
template <class T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000) : cap_(capacity) {
    if (cap_ == 0) throw Error("replay capacity must be positive");
    data_.reserve(std::min<std::size_t>(cap_, 1 << 16));
  }

  void push(T item) {
    if (data_.size() < cap_) {
      data_.push_back(std::move(item));
    } else {
      data_[next_] = std::move(item);
    }
    next_ = (next_ + 1) % cap_;
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return cap_; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<std::size_t> sample_indices(std::size_t n, std::mt19937_64& rng) const {
    if (data_.empty()) throw Error("sampling from an empty buffer");
    std::uniform_int_distribution<std::size_t> u(0, data_.size() - 1);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = u(rng);
    return idx;
  }

  std::vector<const T*> sample(std::size_t n, std::mt19937_64& rng) const {
    std::vector<const T*> out;
    for (std::size_t i : sample_indices(n, rng)) out.push_back(&data_[i]);
    return out;
  }

 private:
  std::vector<T> data_;
  std::size_t next_ = 0;
  std::size_t cap_;
};

/// MLP over flat observation vectors.
struct VectorEncoder {
  using Obs = Vec;
  using Params = nn::Mlp;
  struct Tape {
    nn::MlpTape mlp;
  };
  static Mat forward(const Params& p, const std::vector<const Obs*>& xs, Tape* tape);
  static void backward(const Params& p, const Tape& tape, const Mat& dF, Params* grads);
  static std::vector<nn::Mlp*> nets(Params& p) { return {&p}; }
  static std::vector<const nn::Mlp*> nets(const Params& p) { return {&p}; }
  static int feature_dim(const Params& p) { return p.out_dim(); }
};

/// Graph convolutional encoder with ego readout.
struct GraphEncoder {
  using Obs = sim::GraphObs;
  using Params = nn::GnnParams;
  struct Tape {
    nn::GnnTape gnn;
  };
  static Mat forward(const Params& p, const std::vector<const Obs*>& xs, Tape* tape);
  static void backward(const Params& p, const Tape& tape, const Mat& dF, Params* grads);
  static std::vector<nn::Mlp*> nets(Params& p) { return p.nets(); }
  static std::vector<const nn::Mlp*> nets(const Params& p) { return p.nets(); }
  static int feature_dim(const Params& p) { return p.feature_dim(); }
};

struct SacConfig {
  int hidden = 64;
  int batch = 256;
  double lr = 3e-4;
  double gamma = 0.99;
  double tau = 0.005;
  double alpha = 0.2;  // fixed entropy coefficient
  double log_std_min = -5.0;
  double log_std_max = 2.0;
  int warmup = 1000;
  int log_every = 1000;
  int return_window = 5;
  std::size_t replay_capacity = 100000;
  double reward_scale = 0.05;
};

/// The critics share one encoder trained by the critic loss; the actor reads
/// its features without back-propagating into it.
template <class Enc>
struct SacParams {
  typename Enc::Params encoder;
  typename Enc::Params target_encoder;
  nn::Mlp actor;  // feature -> [mean, raw log-std]
  nn::Mlp q1, q2;
  nn::Mlp target_q1, target_q2;
  int action_dim = 0;
  SacConfig cfg;
};

struct SacStats {
  double loss_q = 0.0;
  double loss_pi = 0.0;
  double entropy = 0.0;  // -mean log-prob of the batch's fresh actions
};

template <class Enc>
class SacAgent {
 public:
  using Obs = typename Enc::Obs;

  SacAgent(typename Enc::Params encoder, int action_dim, const SacConfig& cfg, std::mt19937_64& rng);

  /// Normalised action in (-1, 1)^action_dim.
  Vec act(const Obs& obs, std::mt19937_64& rng, bool deterministic) const;

  /// Log-std after the soft clamp, for the given raw actor output.
  double squash_log_std(double raw) const;

  /// Critic, actor and target updates on one batch. Throws "diverged" on a
  /// non-finite loss.
  SacStats update(const std::vector<const Transition<Obs>*>& batch, std::mt19937_64& rng);

  SacParams<Enc> params;

 private:
  std::vector<nn::AdamState> enc_opt_;
  nn::AdamState actor_opt_, q1_opt_, q2_opt_;
};

/// log pi(a|s) of a tanh-squashed Gaussian at pre-squash sample u.
double squashed_log_prob(const Vec& mean, const Vec& log_std, const Vec& u);

template <class Obs>
struct EnvStep {
  Obs obs;
  double cost = 0.0;
  bool terminal = false;   // collision or off-road: no bootstrap
  bool truncated = false;  // horizon reached
  bool collision = false;
};

template <class Obs>
class Env {
 public:
  virtual ~Env() = default;
  virtual Obs reset(std::uint64_t seed) = 0;
  virtual EnvStep<Obs> step(const Vec& action) = 0;  // normalised action
  virtual int action_dim() const = 0;
};

/// Observation extractors with the fixed feature scaling used for learning.
Vec sac_state_vector(const sim::WorldState& w);
sim::GraphObs sac_graph(const sim::WorldState& w);

template <class Obs>
Obs sac_observe(const sim::WorldState& w);

/// Driving scenario wrapped as an Env; the normalised action is mapped onto
/// the vehicle limits.
template <class Obs>
class DrivingEnv : public Env<Obs> {
 public:
  DrivingEnv(const sim::ScenarioConfig& cfg, const cost::CostWeights& weights)
      : cfg_(cfg), weights_(weights) {}
  Obs reset(std::uint64_t seed) override;
  EnvStep<Obs> step(const Vec& action) override;
  int action_dim() const override { return 2; }
  const sim::WorldState& world() const { return world_; }

 private:
  sim::ScenarioConfig cfg_;
  cost::CostWeights weights_;
  sim::WorldState world_;
  Obs last_{};
};

sim::Action to_vehicle_action(const Vec& a, const sim::VehicleLimits& limits);

struct SacRow {
  long env_steps = 0;
  double mean_return = 0.0;  // over the last return_window finished episodes
  double loss_q = 0.0;
  double loss_pi = 0.0;
  double entropy = 0.0;
};

template <class Enc>
struct SacResult {
  std::unique_ptr<SacAgent<Enc>> agent;
  std::vector<SacRow> log;
};

template <class Enc>
using SacCallback = std::function<void(const SacAgent<Enc>&, const SacRow&)>;

/// Random actions for the first cfg.warmup steps, then one update per
/// environment step. A row is logged every cfg.log_every steps.
template <class Enc>
SacResult<Enc> sac_train(Env<typename Enc::Obs>& env, typename Enc::Params encoder, const SacConfig& cfg,
                         long total_steps, std::uint64_t seed, const SacCallback<Enc>& on_log = {});

/// Deterministic-mean-action driving policy of a trained agent.
template <class Enc>
rollout::WorldPolicy driving_policy(const SacAgent<Enc>& agent, const sim::VehicleLimits& limits);

}  // namespace kinodrive::sac
