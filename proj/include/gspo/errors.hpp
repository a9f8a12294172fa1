#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gspo {

// Index errors use std::out_of_range. Everything else derives from LabError.
class LabError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateSequence : public LabError {
 public:
  using LabError::LabError;
};

class ScoreMismatch : public LabError {
 public:
  using LabError::LabError;
};

class InvalidClip : public LabError {
 public:
  using LabError::LabError;
};

class GroupTooSmall : public LabError {
 public:
  using LabError::LabError;
};

class SpecError : public LabError {
 public:
  using LabError::LabError;
};

class ConfigError : public LabError {
 public:
  using LabError::LabError;
};

/// Raised by the trainer when any metric or parameter stops being finite.
class DivergedError : public LabError {
 public:
  DivergedError(std::size_t step, const std::string& what)
      : LabError("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace gspo
