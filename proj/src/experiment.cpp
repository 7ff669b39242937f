#include "kinodrive/experiment.hpp"

#include "kinodrive/cem.hpp"
#include "kinodrive/gps.hpp"
#include "kinodrive/sac.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace kinodrive::harness {

namespace fs = std::filesystem;
using config::Algorithm;
using config::Encoder;

namespace {

constexpr const char* kMagic = "kinodrive-checkpoint 1";

void write_matrix(std::ostream& os, const Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? " " : "") << m(r, c);
    os << '\n';
  }
}

Mat read_matrix(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      if (!(is >> m(r, c))) throw Error("malformed checkpoint");
  return m;
}

std::string expect_word(std::istream& is, const std::string& word) {
  std::string w;
  if (!(is >> w) || w != word) throw Error("malformed checkpoint: expected " + word);
  std::string value;
  if (!(is >> value)) throw Error("malformed checkpoint: missing " + word);
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << kMagic << '\n' << "algorithm " << config::to_string(c.algorithm) << '\n';
  if (c.algorithm != Algorithm::sac) {
    const auto& p = c.lg;
    os << "horizon " << p.horizon() << "\ndim_s " << p.dim_s() << "\ndim_a " << p.dim_a() << '\n';
    for (int t = 0; t < p.horizon(); ++t) {
      const auto i = static_cast<std::size_t>(t);
      write_matrix(os, p.K[i]);
      write_matrix(os, p.k[i].transpose());
      write_matrix(os, p.C[i]);
    }
    return;
  }
  os << "encoder " << config::to_string(c.encoder) << "\naction_dim " << c.action_dim << '\n';
  if (c.encoder == Encoder::graph) nn::write_gnn(os, c.gnn);
  else nn::write_mlp(os, c.sv_encoder);
  nn::write_mlp(os, c.actor);
}

Checkpoint read_checkpoint(std::istream& is) {
  std::string magic;
  std::getline(is, magic);
  if (magic != kMagic) throw Error("not a checkpoint");
  Checkpoint c;
  c.algorithm = config::parse_algorithm(expect_word(is, "algorithm"));
  if (c.algorithm != Algorithm::sac) {
    const int T = std::stoi(expect_word(is, "horizon"));
    const int ds = std::stoi(expect_word(is, "dim_s"));
    const int da = std::stoi(expect_word(is, "dim_a"));
    if (T < 0 || ds < 1 || da < 1) throw Error("malformed checkpoint");
    for (int t = 0; t < T; ++t) {
      c.lg.K.push_back(read_matrix(is, da, ds));
      c.lg.k.push_back(read_matrix(is, 1, da).transpose());
      c.lg.C.push_back(read_matrix(is, da, da));
    }
    return c;
  }
  c.encoder = config::parse_encoder(expect_word(is, "encoder"));
  c.action_dim = std::stoi(expect_word(is, "action_dim"));
  is >> std::ws;
  if (c.encoder == Encoder::graph) c.gnn = nn::read_gnn(is);
  else c.sv_encoder = nn::read_mlp(is);
  is >> std::ws;
  c.actor = nn::read_mlp(is);
  return c;
}

Checkpoint read_checkpoint_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open checkpoint: " + path);
  return read_checkpoint(f);
}

namespace {

template <class Enc>
rollout::WorldPolicy sac_policy(typename Enc::Params encoder, const nn::Mlp& actor, int action_dim,
                                const config::ExperimentConfig& cfg) {
  std::mt19937_64 rng(0);
  sac::SacConfig sc = cfg.sac.cfg;
  auto agent = std::make_shared<sac::SacAgent<Enc>>(std::move(encoder), action_dim, sc, rng);
  if (actor.in_dim() != agent->params.actor.in_dim() || actor.out_dim() != agent->params.actor.out_dim())
    throw Error("checkpoint/config mismatch: actor shape");
  agent->params.actor = actor;
  auto inner = sac::driving_policy(*agent, cfg.sim.limits);
  // Keep the agent alive alongside the policy that references it.
  return [agent, inner](const sim::WorldState& w, int t, std::mt19937_64& noise) { return inner(w, t, noise); };
}

}  // namespace

rollout::WorldPolicy checkpoint_policy(const Checkpoint& c, const config::ExperimentConfig& cfg) {
  if (c.algorithm != cfg.run.algorithm)
    throw Error("checkpoint/config mismatch: checkpoint is " + config::to_string(c.algorithm) + ", config is " +
                config::to_string(cfg.run.algorithm));
  if (c.algorithm != Algorithm::sac) {
    const int ds = cfg.with_obstacle() ? sim::kMbObstacleDim : sim::kMbDim;
    if (c.lg.horizon() == 0 || c.lg.dim_s() != ds || c.lg.dim_a() != 2)
      throw Error("checkpoint/config mismatch: observation dimension");
    return rollout::linear_gaussian(c.lg, cfg.with_obstacle(), false);
  }
  if (c.encoder != cfg.sac.encoder)
    throw Error("checkpoint/config mismatch: encoder " + config::to_string(c.encoder));
  if (c.action_dim != 2) throw Error("checkpoint/config mismatch: action dimension");
  if (c.encoder == Encoder::graph) {
    if (c.gnn.layers.empty())
      throw Error("checkpoint/config mismatch: graph encoder");
    return sac_policy<sac::GraphEncoder>(c.gnn, c.actor, c.action_dim, cfg);
  }
  if (c.sv_encoder.in_dim() != sim::kStateVectorDim)
    throw Error("checkpoint/config mismatch: state-vector encoder");
  return sac_policy<sac::VectorEncoder>(c.sv_encoder, c.actor, c.action_dim, cfg);
}

namespace {

TrainLog new_log(const config::ExperimentConfig& cfg, std::uint64_t seed) {
  TrainLog log(log_schema(config::to_string(cfg.run.algorithm)));
  log.set_meta("algorithm", config::to_string(cfg.run.algorithm));
  log.set_meta("config_hash", config::config_hash(cfg));
  log.set_meta("seed", std::to_string(seed));
  log.set_meta("start_time", timestamp_now());
  return log;
}

template <class Enc>
void train_sac(const config::ExperimentConfig& cfg, std::uint64_t seed, typename Enc::Params encoder,
               SeedResult& out) {
  sac::DrivingEnv<typename Enc::Obs> env(cfg.sim, cfg.cost);
  auto snapshot = [&](const sac::SacAgent<Enc>& agent) {
    if constexpr (std::is_same_v<Enc, sac::GraphEncoder>) out.checkpoint.gnn = agent.params.encoder;
    else out.checkpoint.sv_encoder = agent.params.encoder;
    out.checkpoint.actor = agent.params.actor;
  };
  auto result = sac::sac_train<Enc>(env, std::move(encoder), cfg.sac.cfg, cfg.sac.total_steps, seed,
                                    [&](const sac::SacAgent<Enc>& agent, const sac::SacRow& r) {
                                      out.log.add_row({static_cast<double>(r.env_steps), r.mean_return,
                                                       r.loss_q, r.loss_pi, r.entropy});
                                      snapshot(agent);
                                    });
  snapshot(*result.agent);
}

}  // namespace

SeedResult train_seed(const config::ExperimentConfig& cfg, std::uint64_t seed) {
  SeedResult out;
  out.seed = seed;
  out.log = new_log(cfg, seed);
  out.checkpoint.algorithm = cfg.run.algorithm;
  try {
    switch (cfg.run.algorithm) {
      case Algorithm::gps: {
        opt::GpsConfig gc = cfg.gps;
        gc.with_obstacle = cfg.with_obstacle();
        auto r = opt::gps_train(cfg.sim, cfg.cost, gc, seed,
                                [&](const LinearGaussianPolicy& p, const opt::GpsRow& row) {
                                  out.log.add_row({static_cast<double>(row.iter),
                                                   static_cast<double>(row.env_steps), row.mean_cost, row.kl,
                                                   row.lambda, row.wall_ms});
                                  out.checkpoint.lg = p;
                                });
        out.checkpoint.lg = r.policy;
        break;
      }
      case Algorithm::cem: {
        cem::CemConfig cc = cfg.cem;
        cc.with_obstacle = cfg.with_obstacle();
        auto r = cem::cem_train(cfg.sim, cfg.cost, cc, seed,
                                [&](const LinearGaussianPolicy& p, const cem::CemRow& row) {
                                  out.log.add_row({static_cast<double>(row.iter),
                                                   static_cast<double>(row.env_steps), row.best_cost,
                                                   row.mean_cost, row.sigma_mean});
                                  out.checkpoint.lg = p;
                                });
        out.checkpoint.lg = r.policy;
        break;
      }
      case Algorithm::sac: {
        std::mt19937_64 rng(seed);
        out.checkpoint.encoder = cfg.sac.encoder;
        if (cfg.sac.encoder == Encoder::graph) {
          train_sac<sac::GraphEncoder>(cfg, seed, nn::make_gnn(cfg.sac.gnn, rng), out);
        } else {
          train_sac<sac::VectorEncoder>(
              cfg, seed, nn::make_state_vector_encoder(rng, cfg.sac.sv_hidden, cfg.sac.gnn.feature), out);
        }
        break;
      }
    }
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

std::string csv_path(const config::ExperimentConfig& cfg, std::uint64_t seed) {
  return (fs::path(cfg.run.output_dir) / (config::to_string(cfg.run.algorithm) + "_" + std::to_string(seed) + ".csv"))
      .string();
}

std::string checkpoint_path(const config::ExperimentConfig& cfg, std::uint64_t seed) {
  return (fs::path(cfg.run.output_dir) / (config::to_string(cfg.run.algorithm) + "_" + std::to_string(seed) + ".ckpt"))
      .string();
}

int thread_cap() {
  if (const char* env = std::getenv("KINODRIVE_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

int run_experiment(const config::ExperimentConfig& cfg, std::ostream& out) {
  if (cfg.run.seeds.empty()) throw Error("invalid config: seeds must be nonempty");
  fs::create_directories(cfg.run.output_dir);
  const std::size_t n = cfg.run.seeds.size();
  std::vector<std::string> lines(n);
  std::vector<int> failed(n, 0);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const std::uint64_t seed = cfg.run.seeds[i];
      const SeedResult r = train_seed(cfg, seed);
      std::ostringstream line;
      line << config::to_string(cfg.run.algorithm) << " seed " << seed << ": ";
      try {
        r.log.write_file(csv_path(cfg, seed));
        const std::string err = (fs::path(cfg.run.output_dir) /
                                 (config::to_string(cfg.run.algorithm) + "_" + std::to_string(seed) + ".err"))
                                    .string();
        if (!r.error.empty()) {
          std::ofstream(err) << r.error << '\n';
          failed[i] = 1;
          line << "FAILED after " << r.log.size() << " rows: " << r.error;
        } else {
          fs::remove(err);
          std::ofstream ck(checkpoint_path(cfg, seed));
          write_checkpoint(ck, r.checkpoint);
          if (!ck) throw Error("cannot write checkpoint");
          line << r.log.size() << " rows";
          if (!r.log.empty()) {
            const auto& last = r.log.rows().back();
            line << ", env_steps " << format_number(last[static_cast<std::size_t>(r.log.column("env_steps"))]);
            const std::string ycol = r.log.column("mean_cost") >= 0 ? "mean_cost" : "mean_return";
            line << ", " << ycol << ' ' << format_number(last[static_cast<std::size_t>(r.log.column(ycol))]);
          }
        }
      } catch (const std::exception& e) {
        failed[i] = 1;
        line << "FAILED writing output: " << e.what();
      }
      lines[i] = line.str();
    }
  };

  const int workers = std::min<int>(thread_cap(), static_cast<int>(n));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < workers; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  int status = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out << lines[i] << '\n';
    status |= failed[i];
  }
  return status;
}

rollout::EvalSummary eval_policy(const std::string& checkpoint, const config::ExperimentConfig& cfg,
                                 int n_episodes, bool dump) {
  if (n_episodes < 0) throw Error("episodes must be nonnegative");
  const Checkpoint c = read_checkpoint_file(checkpoint);
  const rollout::WorldPolicy policy = checkpoint_policy(c, cfg);
  const auto seeds = rollout::eval_seeds(n_episodes);
  std::vector<rollout::Episode> episodes;
  const auto summary =
      rollout::evaluate(cfg.sim, cfg.cost, policy, cfg.with_obstacle(), seeds, dump ? &episodes : nullptr);
  if (dump && !episodes.empty()) {
    fs::create_directories(cfg.run.output_dir);
    const std::string stem = fs::path(checkpoint).stem().string();
    for (std::size_t i = 0; i < episodes.size(); ++i) {
      const fs::path p = fs::path(cfg.run.output_dir) / ("eval_" + stem + "_" + std::to_string(i) + ".csv");
      std::ofstream f(p);
      if (!f) throw Error("cannot write: " + p.string());
      sim::write_trajectory_csv(f, episodes[i].dump);
    }
  }
  return summary;
}

}  // namespace kinodrive::harness
