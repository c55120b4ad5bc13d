#pragma once

#include <stdexcept>
#include <string>

namespace skysim {

/// Invalid scenario or run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numeric routine was called outside its domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A caller broke an API contract (shape mismatch, acting on a finished episode, NaN input).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A link has zero rate, so the data it would carry stays queued.
class UnreachableLinkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace skysim
