#pragma once

#include <stdexcept>
#include <string>

namespace bessopm {

// Scenario / configuration problems: bad keys, violated invariants.
// The CLI maps these to exit code 2.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// The electro-thermal model left its validity region (e.g. OCV <= 0).
class ModelError : public std::runtime_error {
public:
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

// Solver-level failures with no usable result.
class SolverError : public std::runtime_error {
public:
  explicit SolverError(const std::string& what) : std::runtime_error(what) {}
};

// Unrecoverable closed-loop fault (e.g. bus voltage collapse).
// The CLI maps these to exit code 3.
class SimulationFault : public std::runtime_error {
public:
  explicit SimulationFault(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bessopm
