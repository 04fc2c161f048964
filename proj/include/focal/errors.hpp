// Error taxonomy mirrored by the CLI exit codes:
//   ConfigError -> 2, IoError -> 3, NumericError -> 4, ArtifactError -> 5.
// Contract violations inside the numeric core stay std::invalid_argument.
#pragma once

#include <stdexcept>
#include <string>

namespace focal {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct ArtifactError : std::runtime_error {
  explicit ArtifactError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace focal
