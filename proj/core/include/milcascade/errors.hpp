// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace milcascade {

/// Bad input from the caller: malformed config, missing artifact, shape mismatch.
class UserError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure: divergence, infeasible calibration, undefined metric.
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public UserError {
  public:
    using UserError::UserError;
};

class DivergenceError : public NumericError {
  public:
    DivergenceError(const std::string& term, const std::string& detail)
        : NumericError("training diverged in loss term '" + term + "': " + detail), term_(term) {}

    const std::string& term() const noexcept { return term_; }

  private:
    std::string term_;
};

class CalibrationError : public NumericError {
  public:
    using NumericError::NumericError;
};

}  // namespace milcascade
