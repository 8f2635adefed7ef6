#pragma once

#include <stdexcept>
#include <string>

namespace hwplan {

// Malformed inputs: non-positive horizons, dimension mismatches, bad configs.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The equality-constraint structure cannot yield a nonsingular KKT system.
class StructureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf in an iterate, or a KKT residual check failed.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The flatness map hit a sample with (near-)zero speed.
class SpeedSingularity : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hwplan
