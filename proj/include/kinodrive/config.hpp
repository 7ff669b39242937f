#pragma once

#include "kinodrive/cem.hpp"
#include "kinodrive/cost.hpp"
#include "kinodrive/gps.hpp"
#include "kinodrive/neural.hpp"
#include "kinodrive/sac.hpp"
#include "kinodrive/sim.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kinodrive::config {

enum class Algorithm { gps, cem, sac };
enum class Encoder { graph, state_vector };

std::string to_string(Algorithm a);
std::string to_string(Encoder e);
Algorithm parse_algorithm(const std::string& s);
Encoder parse_encoder(const std::string& s);

struct SacSection {
  sac::SacConfig cfg{};
  Encoder encoder = Encoder::graph;
  long total_steps = 50000;
  nn::GnnConfig gnn{};
  int sv_hidden = 128;  // state-vector encoder width
};

struct RunSection {
  Algorithm algorithm = Algorithm::gps;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "out";
};

struct ExperimentConfig {
  sim::ScenarioConfig sim{};
  cost::CostWeights cost{};
  opt::GpsConfig gps{};
  cem::CemConfig cem{};
  SacSection sac{};
  RunSection run{};

  bool with_obstacle() const { return sim.front_obstacle; }
};

/// Sectioned `key = value` text. Sections: [sim] [cost] [gps] [cem] [sac]
/// [run]. Blank lines and lines starting with '#' or ';' are ignored.
/// Missing keys keep their defaults.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::string& path);

/// Every key in a fixed order, values printed round-trippable.
std::string canonical_text(const ExperimentConfig& cfg);

/// FNV-1a 64 of canonical_text with output_dir blanked, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

/// Section-qualified names of every accepted key ("cost.alpha_l", ...).
std::vector<std::string> known_keys();

}  // namespace kinodrive::config
