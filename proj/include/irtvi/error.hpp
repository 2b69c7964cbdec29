#pragma once

#include <stdexcept>
#include <string>

namespace irtvi {

// Rejected configuration or malformed input.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A bound, likelihood or Hamiltonian became non-finite.
class Divergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace irtvi
