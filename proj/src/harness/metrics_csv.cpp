#include "mobyal/harness/metrics_csv.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mobyal/errors.hpp"

namespace mobyal::harness {

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <class T>
T number(const std::string& s, std::size_t line) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ContractError("metrics.csv line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

std::string format_metrics_csv(const std::vector<alloop::CycleMetrics>& rows) {
  if (rows.empty()) throw ContractError("metrics.csv: no rows");
  const std::size_t classes = rows.front().per_class.size();
  for (const auto& r : rows) {
    if (r.per_class.size() != classes) throw ContractError("metrics.csv: rows differ in class count");
  }
  auto sorted = rows;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.trial != b.trial ? a.trial < b.trial : a.cycle < b.cycle;
  });
  std::string out = "trial,cycle,labelled,accuracy,seconds";
  for (std::size_t c = 0; c < classes; ++c) out += ",acc_class_" + std::to_string(c);
  out += '\n';
  for (const auto& r : sorted) {
    out += std::to_string(r.trial) + ',' + std::to_string(r.cycle) + ',' + std::to_string(r.labelled) + ',' +
           fixed6(r.accuracy) + ',' + fixed6(r.seconds);
    for (double a : r.per_class) out += ',' + fixed6(a);
    out += '\n';
  }
  return out;
}

void write_metrics_csv(const std::vector<alloop::CycleMetrics>& rows, const std::string& path) {
  const auto text = format_metrics_csv(rows);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<alloop::CycleMetrics> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ContractError("metrics.csv: missing header");
  const auto head = split(line);
  const std::vector<std::string> fixed{"trial", "cycle", "labelled", "accuracy", "seconds"};
  if (head.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), head.begin())) {
    throw ContractError("metrics.csv: unexpected header");
  }
  const std::size_t classes = head.size() - fixed.size();
  for (std::size_t c = 0; c < classes; ++c) {
    if (head[fixed.size() + c] != "acc_class_" + std::to_string(c)) throw ContractError("metrics.csv: unexpected header");
  }
  std::vector<alloop::CycleMetrics> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    const auto cells = split(line);
    if (cells.size() != head.size()) throw ContractError("metrics.csv line " + std::to_string(n) + ": wrong cell count");
    alloop::CycleMetrics m;
    m.trial = number<std::size_t>(cells[0], n);
    m.cycle = number<int>(cells[1], n);
    m.labelled = number<std::size_t>(cells[2], n);
    m.accuracy = number<double>(cells[3], n);
    m.seconds = number<double>(cells[4], n);
    for (std::size_t c = 0; c < classes; ++c) m.per_class.push_back(number<double>(cells[5 + c], n));
    rows.push_back(std::move(m));
  }
  return rows;
}

std::vector<alloop::CycleMetrics> read_metrics_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_metrics_csv(ss.str());
}

std::vector<alloop::CycleMetrics> flatten(const std::vector<std::vector<alloop::CycleMetrics>>& trials) {
  std::vector<alloop::CycleMetrics> out;
  for (const auto& t : trials) out.insert(out.end(), t.begin(), t.end());
  return out;
}

}  // namespace mobyal::harness
