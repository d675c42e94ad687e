#pragma once

#include <stdexcept>

namespace stkd {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SequencingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace stkd
