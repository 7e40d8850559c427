#pragma once

#include <string>

#include "bessopm/simulation.hpp"

namespace bessopm {

// Shortest round-trip decimal representation (to_chars); used for every
// number in series.csv so parsing the file back is lossless.
std::string format_double(double v);

// Writes <dir>/report.json (summary, config echo, solves, sparse violation
// masks, quantiles) and <dir>/series.csv. Creates the directory.
void write_report(const SimulationReport& report, const std::string& dir);

// Inverse of write_report for all non-timing fields.
SimulationReport read_report(const std::string& dir);

}  // namespace bessopm
