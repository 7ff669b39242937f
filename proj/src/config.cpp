#include "kinodrive/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace kinodrive::config {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::gps: return "gps";
    case Algorithm::cem: return "cem";
    case Algorithm::sac: return "sac";
  }
  return "?";
}

std::string to_string(Encoder e) { return e == Encoder::graph ? "graph" : "state_vector"; }

Algorithm parse_algorithm(const std::string& s) {
  if (s == "gps") return Algorithm::gps;
  if (s == "cem") return Algorithm::cem;
  if (s == "sac") return Algorithm::sac;
  throw Error("unknown algorithm: " + s);
}

Encoder parse_encoder(const std::string& s) {
  if (s == "graph") return Encoder::graph;
  if (s == "state_vector") return Encoder::state_vector;
  throw Error("unknown encoder: " + s);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw Error("not a number");
  return out;
}

void parse_value(const std::string& v, double& out) { out = parse_number<double>(v); }
void parse_value(const std::string& v, int& out) { out = parse_number<int>(v); }
void parse_value(const std::string& v, long& out) { out = parse_number<long>(v); }
void parse_value(const std::string& v, std::size_t& out) { out = parse_number<std::size_t>(v); }
void parse_value(const std::string& v, std::string& out) { out = v; }
void parse_value(const std::string& v, bool& out) {
  if (v == "true" || v == "1") out = true;
  else if (v == "false" || v == "0") out = false;
  else throw Error("not a boolean");
}
void parse_value(const std::string& v, sim::Scenario& out) { out = sim::parse_scenario(v); }
void parse_value(const std::string& v, Algorithm& out) { out = parse_algorithm(v); }
void parse_value(const std::string& v, Encoder& out) { out = parse_encoder(v); }
void parse_value(const std::string& v, std::vector<std::uint64_t>& out) {
  out.clear();
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw Error("empty list item");
    out.push_back(parse_number<std::uint64_t>(item));
  }
}

std::string format_value(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
std::string format_value(int x) { return std::to_string(x); }
std::string format_value(long x) { return std::to_string(x); }
std::string format_value(std::size_t x) { return std::to_string(x); }
std::string format_value(const std::string& x) { return x; }
std::string format_value(bool x) { return x ? "true" : "false"; }
std::string format_value(sim::Scenario x) { return sim::to_string(x); }
std::string format_value(Algorithm x) { return to_string(x); }
std::string format_value(Encoder x) { return to_string(x); }
std::string format_value(const std::vector<std::uint64_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class Ref>
Field field(std::string section, std::string key, Ref ref) {
  return {std::move(section), std::move(key),
          [ref](ExperimentConfig& c, const std::string& v) { parse_value(v, ref(c)); },
          [ref](const ExperimentConfig& c) { return format_value(ref(const_cast<ExperimentConfig&>(c))); }};
}

#define KD_FIELD(sec, name, expr) field(sec, name, [](ExperimentConfig& c) -> auto& { return expr; })

void add_pd_fields(std::vector<Field>& f, const std::string& sec, opt::PdGains& (*pd)(ExperimentConfig&)) {
  const std::pair<const char*, double opt::PdGains::*> keys[] = {
      {"pd_steer_dy", &opt::PdGains::steer_dy},     {"pd_steer_dphi", &opt::PdGains::steer_dphi},
      {"pd_accel_dv", &opt::PdGains::accel_dv},     {"pd_accel_gap", &opt::PdGains::accel_gap},
      {"pd_accel_closing", &opt::PdGains::accel_closing}, {"pd_gap_ref", &opt::PdGains::gap_ref},
      {"pd_accel_std", &opt::PdGains::accel_std},   {"pd_steer_std", &opt::PdGains::steer_std}};
  for (const auto& [name, member] : keys) {
    f.push_back(field(sec, name, [pd, member](ExperimentConfig& c) -> double& { return pd(c).*member; }));
  }
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f = {
        KD_FIELD("sim", "scenario", c.sim.scenario),
        KD_FIELD("sim", "n_vehicles", c.sim.n_vehicles),
        KD_FIELD("sim", "randomize_count", c.sim.randomize_count),
        KD_FIELD("sim", "front_obstacle", c.sim.front_obstacle),
        KD_FIELD("sim", "obstacle_speed", c.sim.obstacle_speed),
        KD_FIELD("sim", "horizon", c.sim.horizon),
        KD_FIELD("sim", "n_lanes", c.sim.n_lanes),
        KD_FIELD("sim", "lane_width", c.sim.lane_width),
        KD_FIELD("sim", "offroad_margin", c.sim.offroad_margin),
        KD_FIELD("sim", "ego_v_min", c.sim.ego_v_min),
        KD_FIELD("sim", "ego_v_max", c.sim.ego_v_max),
        KD_FIELD("sim", "traffic_v0_min", c.sim.traffic_v0_min),
        KD_FIELD("sim", "traffic_v0_max", c.sim.traffic_v0_max),
        KD_FIELD("sim", "accel_max", c.sim.limits.accel_max),
        KD_FIELD("sim", "steer_max", c.sim.limits.steer_max),
        KD_FIELD("sim", "wheelbase", c.sim.limits.wheelbase),

        KD_FIELD("cost", "alpha_l", c.cost.alpha_l),
        KD_FIELD("cost", "alpha_y", c.cost.alpha_y),
        KD_FIELD("cost", "alpha_v", c.cost.alpha_v),
        KD_FIELD("cost", "alpha_a", c.cost.alpha_a),
        KD_FIELD("cost", "alpha_sigma", c.cost.alpha_sigma),
        KD_FIELD("cost", "v_ref", c.cost.v_ref),
        KD_FIELD("cost", "beta_s", c.cost.beta_s),
        KD_FIELD("cost", "beta_v", c.cost.beta_v),
        KD_FIELD("cost", "collision_penalty", c.cost.collision_penalty),
        KD_FIELD("cost", "off_road_penalty", c.cost.off_road_penalty),

        KD_FIELD("gps", "n_traj", c.gps.n_traj),
        KD_FIELD("gps", "max_iters", c.gps.max_iters),
        KD_FIELD("gps", "epsilon", c.gps.dgd.epsilon),
        KD_FIELD("gps", "lambda0", c.gps.dgd.lambda0),
        KD_FIELD("gps", "alpha_dual", c.gps.dgd.alpha_dual),
        KD_FIELD("gps", "dgd_max_iter", c.gps.dgd.max_iter),
        KD_FIELD("gps", "lambda_min", c.gps.dgd.lambda_min),
        KD_FIELD("gps", "lambda_max", c.gps.dgd.lambda_max),
        KD_FIELD("gps", "additive_dual", c.gps.dgd.additive),
        KD_FIELD("gps", "gmm_components", c.gps.gmm_components),
        KD_FIELD("gps", "gmm_window", c.gps.gmm_window),
        KD_FIELD("gps", "em_iters", c.gps.em_iters),
        KD_FIELD("gps", "dyn_reg", c.gps.dyn_reg),
        KD_FIELD("gps", "init_cov_floor", c.gps.init_cov_floor),
        KD_FIELD("gps", "warm_start_lambda", c.gps.warm_start_lambda),
        KD_FIELD("gps", "gate_smoothing", c.gps.gate_smoothing),
    };
    add_pd_fields(f, "gps", [](ExperimentConfig& c) -> opt::PdGains& { return c.gps.pd_init; });

    const std::vector<Field> cem = {
        KD_FIELD("cem", "population", c.cem.population),
        KD_FIELD("cem", "elite_frac", c.cem.elite_frac),
        KD_FIELD("cem", "sigma_floor", c.cem.sigma_floor),
        KD_FIELD("cem", "init_sigma", c.cem.init_sigma),
        KD_FIELD("cem", "rollouts", c.cem.rollouts),
        KD_FIELD("cem", "iters", c.cem.iters),
    };
    f.insert(f.end(), cem.begin(), cem.end());
    add_pd_fields(f, "cem", [](ExperimentConfig& c) -> opt::PdGains& { return c.cem.pd_init; });

    const std::vector<Field> rest = {
        KD_FIELD("sac", "encoder", c.sac.encoder),
        KD_FIELD("sac", "total_steps", c.sac.total_steps),
        KD_FIELD("sac", "hidden", c.sac.cfg.hidden),
        KD_FIELD("sac", "batch", c.sac.cfg.batch),
        KD_FIELD("sac", "lr", c.sac.cfg.lr),
        KD_FIELD("sac", "gamma", c.sac.cfg.gamma),
        KD_FIELD("sac", "tau", c.sac.cfg.tau),
        KD_FIELD("sac", "alpha", c.sac.cfg.alpha),
        KD_FIELD("sac", "log_std_min", c.sac.cfg.log_std_min),
        KD_FIELD("sac", "log_std_max", c.sac.cfg.log_std_max),
        KD_FIELD("sac", "warmup", c.sac.cfg.warmup),
        KD_FIELD("sac", "log_every", c.sac.cfg.log_every),
        KD_FIELD("sac", "return_window", c.sac.cfg.return_window),
        KD_FIELD("sac", "replay_capacity", c.sac.cfg.replay_capacity),
        KD_FIELD("sac", "reward_scale", c.sac.cfg.reward_scale),
        KD_FIELD("sac", "gnn_layers", c.sac.gnn.n_layers),
        KD_FIELD("sac", "gnn_hidden", c.sac.gnn.hidden),
        KD_FIELD("sac", "gnn_edge_dim", c.sac.gnn.edge_dim),
        KD_FIELD("sac", "gnn_vertex_dim", c.sac.gnn.vertex_dim),
        KD_FIELD("sac", "feature_dim", c.sac.gnn.feature),
        KD_FIELD("sac", "sv_hidden", c.sac.sv_hidden),

        KD_FIELD("run", "algorithm", c.run.algorithm),
        KD_FIELD("run", "seeds", c.run.seeds),
        KD_FIELD("run", "output_dir", c.run.output_dir),
    };
    f.insert(f.end(), rest.begin(), rest.end());
    return f;
  }();
  return table;
}

#undef KD_FIELD

bool known_section(const std::string& s) {
  return s == "sim" || s == "cost" || s == "gps" || s == "cem" || s == "sac" || s == "run";
}

void validate(ExperimentConfig& c) {
  if (c.run.seeds.empty()) throw Error("invalid config: seeds must be nonempty");
  if (c.run.output_dir.empty()) throw Error("invalid config: output_dir must be nonempty");
  if (c.sim.horizon < 1) throw Error("invalid config: horizon must be positive");
  if (c.sac.total_steps < 0) throw Error("invalid config: total_steps must be nonnegative");
  c.gps.with_obstacle = c.sim.front_obstacle;
  c.cem.with_obstacle = c.sim.front_obstacle;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  std::map<std::string, const Field*> by_name;
  for (const Field& f : fields()) by_name[f.section + "." + f.key] = &f;

  ExperimentConfig cfg;
  std::map<std::string, int> seen;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string at = "line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw Error("malformed " + at + ": " + line);
      section = trim(line.substr(1, line.size() - 2));
      if (!known_section(section)) throw Error("unknown section '" + section + "' at " + at);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("malformed " + at + ": " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error("malformed " + at + ": " + line);
    if (section.empty()) throw Error("malformed " + at + ": key '" + key + "' outside a section");
    const std::string name = section + "." + key;
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("unknown key '" + name + "' at " + at);
    if (const auto prev = seen.find(name); prev != seen.end()) {
      throw Error("duplicate key '" + name + "' at lines " + std::to_string(prev->second) + " and " +
                  std::to_string(lineno));
    }
    seen[name] = lineno;
    try {
      it->second->set(cfg, value);
    } catch (const Error& e) {
      throw Error("invalid value for '" + name + "' at " + at + ": " + e.what());
    }
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::string canonical_text(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      section = f.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.run.output_dir.clear();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : canonical_text(c)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.section + "." + f.key);
  return out;
}

}  // namespace kinodrive::config
