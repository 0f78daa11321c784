#pragma once

#include <stdexcept>
#include <string>

namespace pclformer {

// Base of every error the library throws. The CLI maps subclasses to exit
// codes: numerical failures to 3, everything else to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A scalar hyper-parameter outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition (non-scalar loss, bad mask...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or out-of-range input data.
class InputError : public Error {
 public:
  using Error::Error;
};

// Invalid or incomplete configuration document.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Dataset cannot support training (e.g. a sub-task lacks positives).
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace pclformer
