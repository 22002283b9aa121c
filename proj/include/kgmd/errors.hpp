#pragma once

#include <stdexcept>
#include <string>

namespace kgmd {

/// Malformed or inconsistent input data (files, bundles, checkpoints).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged or otherwise cannot continue.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kgmd
