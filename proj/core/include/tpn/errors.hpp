#pragma once

#include <stdexcept>
#include <string>

namespace tpn {

// Shape or configuration mismatch between tensors / modules.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse: non-scalar loss, bad schedule, empty dataset, unknown flag.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Violated numeric precondition (negative density, non-finite value).
class ContractError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A requested component is missing (e.g. encoder inversion without trained encoders).
class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupt or truncated persisted data.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed external file (PNG, dataset metadata, config).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tpn
