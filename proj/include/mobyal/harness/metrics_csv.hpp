#pragma once

#include <string>
#include <vector>

#include "mobyal/alloop/alloop.hpp"

namespace mobyal::harness {

// Header trial,cycle,labelled,accuracy,seconds,acc_class_0..acc_class_{C-1};
// reals with 6 decimals; rows sorted trial-major, cycle-minor.
std::string format_metrics_csv(const std::vector<alloop::CycleMetrics>& rows);

// Throws ContractError on empty rows or mismatched per-class lengths,
// std::runtime_error when the file cannot be written.
void write_metrics_csv(const std::vector<alloop::CycleMetrics>& rows, const std::string& path);

// Back to metrics: trial, cycle, labelled, accuracy, seconds and per_class
// are filled; the other fields stay zero. Throws ContractError on a
// malformed file.
std::vector<alloop::CycleMetrics> parse_metrics_csv(const std::string& text);
std::vector<alloop::CycleMetrics> read_metrics_csv(const std::string& path);

std::vector<alloop::CycleMetrics> flatten(const std::vector<std::vector<alloop::CycleMetrics>>& trials);

}  // namespace mobyal::harness
