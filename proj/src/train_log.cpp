#include "kinodrive/train_log.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace kinodrive::harness {

const std::vector<std::string>& log_schema(const std::string& algorithm) {
  static const std::map<std::string, std::vector<std::string>> schemas = {
      {"gps", {"iter", "env_steps", "mean_cost", "kl", "lambda", "wall_ms"}},
      {"cem", {"iter", "env_steps", "best_cost", "mean_cost", "sigma_mean"}},
      {"sac", {"env_steps", "mean_return", "loss_q", "loss_pi", "entropy"}},
  };
  const auto it = schemas.find(algorithm);
  if (it == schemas.end()) throw Error("unknown algorithm: " + algorithm);
  return it->second;
}

TrainLog::TrainLog(std::vector<std::string> columns) : columns_(std::move(columns)) {
  steps_col_ = column("env_steps");
}

void TrainLog::set_meta(const std::string& key, const std::string& value) {
  for (auto& kv : meta_) {
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  }
  meta_.emplace_back(key, value);
}

const std::string& TrainLog::meta(const std::string& key) const {
  static const std::string none;
  for (const auto& kv : meta_)
    if (kv.first == key) return kv.second;
  return none;
}

void TrainLog::add_row(const std::vector<double>& row) {
  if (row.size() != columns_.size()) throw Error("row width mismatch");
  if (steps_col_ >= 0 && !rows_.empty()) {
    const auto c = static_cast<std::size_t>(steps_col_);
    if (!(row[c] > rows_.back()[c])) throw Error("env_steps not increasing");
  }
  rows_.push_back(row);
}

int TrainLog::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i)
    if (columns_[i] == name) return static_cast<int>(i);
  return -1;
}

std::vector<double> TrainLog::values(const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw Error("no such column: " + name);
  std::vector<double> out;
  for (const auto& r : rows_) out.push_back(r[static_cast<std::size_t>(c)]);
  return out;
}

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

void TrainLog::write(std::ostream& os) const {
  for (const auto& [k, v] : meta_) os << "# " << k << '=' << v << '\n';
  for (std::size_t i = 0; i < columns_.size(); ++i) os << (i ? "," : "") << columns_[i];
  os << '\n';
  for (const auto& r : rows_) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << format_number(r[i]);
    os << '\n';
  }
}

void TrainLog::write_file(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write: " + path);
  write(f);
  if (!f) throw Error("write failed: " + path);
}

namespace {

double parse_cell(const std::string& s, int lineno) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return HUGE_VAL;
  if (s == "-inf") return -HUGE_VAL;
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error("malformed csv at line " + std::to_string(lineno) + ": " + s);
  return x;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

TrainLog read_train_log(std::istream& is) {
  std::vector<std::pair<std::string, std::string>> meta;
  std::string line;
  int lineno = 0;
  TrainLog log;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto b = line.find_first_not_of("# ");
      const std::string body = b == std::string::npos ? "" : line.substr(b);
      const auto eq = body.find('=');
      if (eq != std::string::npos) meta.emplace_back(body.substr(0, eq), body.substr(eq + 1));
      continue;
    }
    if (!have_header) {
      log = TrainLog(split(line));
      have_header = true;
      continue;
    }
    std::vector<double> row;
    for (const auto& cell : split(line)) row.push_back(parse_cell(cell, lineno));
    log.add_row(row);
  }
  for (const auto& [k, v] : meta) log.set_meta(k, v);
  return log;
}

TrainLog read_train_log_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open: " + path);
  return read_train_log(f);
}

std::string timestamp_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  return buf;
}

}  // namespace kinodrive::harness
