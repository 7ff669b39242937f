#include "kinodrive/config.hpp"
#include "kinodrive/experiment.hpp"
#include "kinodrive/plot.hpp"
#include "kinodrive/train_log.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <unistd.h>

using namespace kinodrive;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kinodrive_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string error_of(const std::string& text) {
  try {
    config::parse_config_text(text);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, EmptyIsDefaults) {
  const auto c = config::parse_config_text("");
  EXPECT_EQ(c.cost, cost::CostWeights{});
  EXPECT_EQ(c.sim, sim::ScenarioConfig{});
  EXPECT_EQ(c.run.algorithm, config::Algorithm::gps);
}

TEST(Config, Override) {
  const auto c = config::parse_config_text("[cost]\nalpha_l = 2.0\n");
  EXPECT_EQ(c.cost.alpha_l, 2.0);
  cost::CostWeights d{};
  d.alpha_l = 2.0;
  EXPECT_EQ(c.cost, d);
}

TEST(Config, Errors) {
  EXPECT_NE(error_of("[cost]\nalpha_l = 1\n\nalpha_l = 2\n").find("lines 2 and 4"), std::string::npos);
  EXPECT_NE(error_of("[cost]\nbogus = 1\n").find("cost.bogus"), std::string::npos);
  EXPECT_NE(error_of("[cost]\nalpha_l 1\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("[nope]\n").find("unknown section"), std::string::npos);
  EXPECT_NE(error_of("[sim]\nhorizon = abc\n").find("sim.horizon"), std::string::npos);
  EXPECT_FALSE(error_of("alpha_l = 1\n").empty());
  EXPECT_FALSE(error_of("[run]\nseeds =\n").empty());
}

TEST(Config, CanonicalRoundTrip) {
  const auto c = config::parse_config_text(
      "# comment\n[sim]\nscenario = town\nn_vehicles = 8\n[sac]\nencoder = state_vector\nlr = 1e-3\n"
      "[run]\nalgorithm = sac\nseeds = 1, 2, 3\n");
  const std::string text = config::canonical_text(c);
  const auto r = config::parse_config_text(text);
  EXPECT_EQ(config::canonical_text(r), text);
  EXPECT_EQ(config::config_hash(r), config::config_hash(c));
  EXPECT_EQ(r.run.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(r.sac.encoder, config::Encoder::state_vector);
  EXPECT_EQ(config::config_hash(c).size(), 16u);
}

TEST(Config, EveryKeyReachable) {
  const auto c = config::parse_config_text("");
  const std::string text = config::canonical_text(c);
  for (const auto& k : config::known_keys()) {
    const std::string key = k.substr(k.find('.') + 1);
    EXPECT_NE(text.find("\n" + key + " = "), std::string::npos) << k;
  }
}

TEST(Config, ShippedConfigsParse) {
  int n = 0;
  for (const auto& e : std::filesystem::directory_iterator(KINODRIVE_CONFIG_DIR)) {
    if (e.path().extension() != ".ini") continue;
    const auto c = config::parse_config(e.path().string());
    EXPECT_FALSE(c.run.seeds.empty()) << e.path();
    ++n;
  }
  EXPECT_GE(n, 1);
}

TEST(TrainLog, Schemas) {
  EXPECT_EQ(harness::log_schema("gps"),
            (std::vector<std::string>{"iter", "env_steps", "mean_cost", "kl", "lambda", "wall_ms"}));
  EXPECT_EQ(harness::log_schema("sac"),
            (std::vector<std::string>{"env_steps", "mean_return", "loss_q", "loss_pi", "entropy"}));
}

TEST(TrainLog, RoundTrip) {
  harness::TrainLog log(harness::log_schema("cem"));
  log.set_meta("seed", "3");
  log.add_row({0, 100, 1.0 / 3.0, 2.5, 0.1});
  log.add_row({1, 200, 1e-17, -4, 0.2});
  std::stringstream ss;
  log.write(ss);
  const auto r = harness::read_train_log(ss);
  EXPECT_EQ(r.rows(), log.rows());
  EXPECT_EQ(r.columns(), log.columns());
  EXPECT_EQ(r.meta("seed"), "3");
}

TEST(TrainLog, Invariants) {
  harness::TrainLog log(harness::log_schema("sac"));
  log.add_row({1000, 0, 0, 0, 0});
  EXPECT_THROW(log.add_row({1000, 0, 0, 0, 0}), Error);
  EXPECT_THROW(log.add_row({2000, 0}), Error);
}

TEST(Plot, SinglePolyline) {
  const fs::path dir = scratch("plot1");
  harness::TrainLog log(harness::log_schema("gps"));
  log.add_row({0, 200, 10, 0.5, 1, 3});
  log.add_row({1, 400, 7, 0.5, 1, 3});
  log.write_file((dir / "gps_1.csv").string());
  std::ostringstream warn;
  EXPECT_EQ(harness::plot_compare({(dir / "gps_1.csv").string()}, (dir / "o.svg").string(), {}, warn), 1);
  const std::string svg = slurp(dir / "o.svg");
  const std::regex poly("<polyline[^>]*points=\"([^\"]*)\"");
  std::smatch m;
  ASSERT_TRUE(std::regex_search(svg, m, poly));
  const std::string pts = m[1];
  EXPECT_EQ(std::count(pts.begin(), pts.end(), ','), 2);
  EXPECT_EQ(std::distance(std::sregex_iterator(svg.begin(), svg.end(), poly), std::sregex_iterator()), 1);
  EXPECT_NE(svg.find("gps_1"), std::string::npos);
}

TEST(Plot, UnionOfRanges) {
  harness::Series a{"a", "mean_cost", {100, 200}, {5, 6}};
  harness::Series b{"b", "mean_return", {50, 150, 900}, {-3, 1, 2}};
  const std::string svg = harness::render_svg({a, b});
  EXPECT_NE(svg.find(">0</text>"), std::string::npos);
  EXPECT_NE(svg.find(">1000</text>"), std::string::npos);
  EXPECT_NE(svg.find(">-4</text>"), std::string::npos);
  EXPECT_NE(svg.find(">6</text>"), std::string::npos);
  EXPECT_NE(svg.find("mean_cost / mean_return"), std::string::npos);
}

TEST(Plot, EmptyLogSkipped) {
  const fs::path dir = scratch("plot2");
  { std::ofstream((dir / "empty.csv").string()); }
  harness::TrainLog log(harness::log_schema("sac"));
  log.add_row({1000, -5, 0, 0, 0});
  log.write_file((dir / "sac_1.csv").string());
  std::ostringstream warn;
  const int n = harness::plot_compare({(dir / "empty.csv").string(), (dir / "sac_1.csv").string()},
                                      (dir / "o.svg").string(), {}, warn);
  EXPECT_EQ(n, 1);
  EXPECT_NE(warn.str().find("skipping empty log"), std::string::npos);
  EXPECT_THROW(harness::plot_compare({(dir / "empty.csv").string()}, (dir / "p.svg").string(), {}, warn), Error);
}

TEST(Plot, LogAxisTicks) {
  harness::Series s{"s", "mean_cost", {1e3, 3e4, 1e5}, {1, 2, 3}};
  harness::PlotOptions opt;
  opt.log_x = true;
  const std::string svg = harness::render_svg({s}, opt);
  for (const char* t : {">1e3<", ">1e4<", ">1e5<"}) EXPECT_NE(svg.find(t), std::string::npos);
}

namespace {

config::ExperimentConfig gps_cfg(const fs::path& dir, const std::string& seeds) {
  auto c = config::parse_config_text("[gps]\nmax_iters = 2\n[run]\nseeds = " + seeds + "\n");
  c.run.output_dir = dir.string();
  return c;
}

}  // namespace

TEST(Experiment, GpsTwoRows) {
  const fs::path dir = scratch("exp1");
  std::ostringstream out;
  EXPECT_EQ(harness::run_experiment(gps_cfg(dir, "1"), out), 0);
  const auto log = harness::read_train_log_file((dir / "gps_1.csv").string());
  EXPECT_EQ(log.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "gps_1.ckpt"));
  EXPECT_NE(out.str().find("gps seed 1: 2 rows"), std::string::npos);
  EXPECT_EQ(log.meta("seed"), "1");
  EXPECT_EQ(log.meta("algorithm"), "gps");
}

TEST(Experiment, ThreeSeedsThreeCsvs) {
  const fs::path dir = scratch("exp3");
  auto c = gps_cfg(dir, "1,2,3");
  c.gps.max_iters = 1;
  std::ostringstream out;
  EXPECT_EQ(harness::run_experiment(c, out), 0);
  for (int s = 1; s <= 3; ++s) EXPECT_TRUE(fs::exists(dir / ("gps_" + std::to_string(s) + ".csv")));
  for (const auto& e : fs::directory_iterator(dir)) EXPECT_TRUE(e.path().parent_path() == dir);
}

TEST(Experiment, Reproducible) {
  auto strip = [](const std::string& csv) {
    std::istringstream is(csv);
    std::string line, out;
    while (std::getline(is, line)) {
      if (line.rfind("# start_time=", 0) == 0) continue;
      if (!line.empty() && line[0] != '#' && line.find_first_not_of("0123456789.,e-+") == std::string::npos)
        line = line.substr(0, line.rfind(','));  // wall_ms
      out += line + "\n";
    }
    return out;
  };
  const fs::path a = scratch("repA"), b = scratch("repB");
  std::ostringstream sink;
  harness::run_experiment(gps_cfg(a, "5"), sink);
  harness::run_experiment(gps_cfg(b, "5"), sink);
  EXPECT_EQ(strip(slurp(a / "gps_5.csv")), strip(slurp(b / "gps_5.csv")));
  EXPECT_EQ(slurp(a / "gps_5.ckpt"), slurp(b / "gps_5.ckpt"));
}

TEST(Experiment, EvalZeroEpisodes) {
  const fs::path dir = scratch("eval0");
  auto c = gps_cfg(dir, "1");
  std::ostringstream sink;
  ASSERT_EQ(harness::run_experiment(c, sink), 0);
  const auto s = harness::eval_policy((dir / "gps_1.ckpt").string(), c, 0, false);
  EXPECT_EQ(s.episodes, 0);
  EXPECT_EQ(s.env_steps, 0);
}

TEST(Experiment, EvalDeterministicAndDumps) {
  const fs::path dir = scratch("eval1");
  auto c = gps_cfg(dir, "1");
  std::ostringstream sink;
  ASSERT_EQ(harness::run_experiment(c, sink), 0);
  const std::string ck = (dir / "gps_1.ckpt").string();
  const auto s1 = harness::eval_policy(ck, c, 3, true);
  const auto s2 = harness::eval_policy(ck, c, 3, false);
  EXPECT_EQ(s1.mean_cost, s2.mean_cost);
  EXPECT_EQ(s1.collision_rate, 0.0);
  EXPECT_TRUE(fs::exists(dir / "eval_gps_1_0.csv"));
}

TEST(Experiment, PdPolicyOnEmptyLaneNeverCollides) {
  harness::Checkpoint ck;
  ck.algorithm = config::Algorithm::gps;
  ck.lg = opt::pd_init_policy(3, 2, 50);
  const auto c = config::parse_config_text("");
  const auto pol = harness::checkpoint_policy(ck, c);
  const auto s = rollout::evaluate(c.sim, c.cost, pol, false, rollout::eval_seeds(10));
  EXPECT_EQ(s.collision_rate, 0.0);
}

TEST(Experiment, CheckpointMismatch) {
  harness::Checkpoint ck;
  ck.algorithm = config::Algorithm::gps;
  ck.lg = opt::pd_init_policy(3, 2, 50);
  auto c = config::parse_config_text("[run]\nalgorithm = cem\n");
  EXPECT_THROW(harness::checkpoint_policy(ck, c), Error);
  c = config::parse_config_text("[sim]\nfront_obstacle = true\n");
  EXPECT_THROW(harness::checkpoint_policy(ck, c), Error);
}

TEST(Experiment, CheckpointRoundTrip) {
  std::mt19937_64 rng(1);
  harness::Checkpoint ck;
  ck.algorithm = config::Algorithm::sac;
  ck.encoder = config::Encoder::state_vector;
  ck.sv_encoder = nn::make_state_vector_encoder(rng, 16, 8);
  ck.actor = nn::make_mlp({8, 16, 16, 4}, nn::Activation::relu, nn::Activation::identity, rng);
  std::stringstream ss;
  harness::write_checkpoint(ss, ck);
  const auto r = harness::read_checkpoint(ss);
  EXPECT_EQ(r.encoder, ck.encoder);
  const Vec x = Vec::Random(43);
  EXPECT_EQ(nn::mlp_forward(r.sv_encoder, x), nn::mlp_forward(ck.sv_encoder, x));
  auto c = config::parse_config_text("[run]\nalgorithm = sac\n[sac]\nencoder = graph\n");
  EXPECT_THROW(harness::checkpoint_policy(r, c), Error);
}
