#pragma once

#include "kinodrive/config.hpp"
#include "kinodrive/linear_gaussian.hpp"
#include "kinodrive/neural.hpp"
#include "kinodrive/rollout.hpp"
#include "kinodrive/train_log.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace kinodrive::harness {

/// Final policy of a run. Linear-Gaussian for gps and cem; encoder plus
/// actor network for sac.
struct Checkpoint {
  config::Algorithm algorithm = config::Algorithm::gps;
  LinearGaussianPolicy lg;
  config::Encoder encoder = config::Encoder::graph;
  nn::Mlp sv_encoder;
  nn::GnnParams gnn;
  nn::Mlp actor;
  int action_dim = 2;
};

void write_checkpoint(std::ostream& os, const Checkpoint& c);
Checkpoint read_checkpoint(std::istream& is);
Checkpoint read_checkpoint_file(const std::string& path);

/// Deterministic mean-action policy. Throws "checkpoint/config mismatch" when
/// the checkpoint was not produced for this algorithm, encoder and
/// observation layout.
rollout::WorldPolicy checkpoint_policy(const Checkpoint& c, const config::ExperimentConfig& cfg);

struct SeedResult {
  std::uint64_t seed = 0;
  TrainLog log;
  Checkpoint checkpoint;
  std::string error;  // empty on success
};

/// Runs the configured trainer for one seed. Never throws for trainer
/// errors; they land in `error` with the rows logged so far.
SeedResult train_seed(const config::ExperimentConfig& cfg, std::uint64_t seed);

std::string csv_path(const config::ExperimentConfig& cfg, std::uint64_t seed);
std::string checkpoint_path(const config::ExperimentConfig& cfg, std::uint64_t seed);

/// Trains every seed (at most KINODRIVE_THREADS at a time), writes
/// <output_dir>/<algo>_<seed>.csv and .ckpt, or .err on failure, and prints
/// one summary line per seed. Returns 0 when every seed succeeded.
int run_experiment(const config::ExperimentConfig& cfg, std::ostream& out);

/// Deterministic evaluation on rollout::eval_seeds(n_episodes). With `dump`
/// each episode's trajectory goes to <output_dir>/eval_<name>_<i>.csv.
rollout::EvalSummary eval_policy(const std::string& checkpoint, const config::ExperimentConfig& cfg,
                                 int n_episodes, bool dump);

/// Worker count from KINODRIVE_THREADS, else the hardware concurrency.
int thread_cap();

}  // namespace kinodrive::harness
