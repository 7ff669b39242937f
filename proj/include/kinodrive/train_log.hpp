#pragma once

#include "kinodrive/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace kinodrive::harness {

/// Column names of each algorithm's CSV.
const std::vector<std::string>& log_schema(const std::string& algorithm);

/// Rows of named numeric columns, with '#'-prefixed metadata lines on top.
/// env_steps must be strictly increasing.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(std::vector<std::string> columns);

  void set_meta(const std::string& key, const std::string& value);
  const std::string& meta(const std::string& key) const;  // "" when absent
  const std::vector<std::pair<std::string, std::string>>& metadata() const { return meta_; }

  /// Throws "row width mismatch" or "env_steps not increasing".
  void add_row(const std::vector<double>& row);

  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<std::vector<double>>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  /// Index of a column, or -1.
  int column(const std::string& name) const;
  std::vector<double> values(const std::string& name) const;

  void write(std::ostream& os) const;
  void write_file(const std::string& path) const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::pair<std::string, std::string>> meta_;
  std::vector<std::vector<double>> rows_;
  int steps_col_ = -1;
};

/// Inverse of TrainLog::write. An empty file yields an empty log.
TrainLog read_train_log(std::istream& is);
TrainLog read_train_log_file(const std::string& path);

/// Decimal text that reads back to the same double.
std::string format_number(double x);

/// Local time as ISO 8601.
std::string timestamp_now();

}  // namespace kinodrive::harness
