// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace trmqe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition (e.g. non-scalar grad-check target).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Requested a projection wider than the sample supports.
class RankError : public ContractError {
 public:
  RankError(const std::string& message, std::size_t rank) : ContractError(message), rank_(rank) {}
  std::size_t achievable_rank() const noexcept { return rank_; }

 private:
  std::size_t rank_;
};

// Non-finite values surfaced during a forward or training pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration. `field()` names the offending key when known.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message, std::string field = {})
      : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// File does not follow the expected binary or text layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// File header is valid but a record is damaged or missing.
class CorruptionError : public FormatError {
 public:
  CorruptionError(const std::string& message, std::size_t record_index)
      : FormatError(message), record_index_(record_index) {}
  std::size_t record_index() const noexcept { return record_index_; }

 private:
  std::size_t record_index_;
};

// Correlation on a zero-variance input.
class UndefinedMetricError : public Error {
 public:
  UndefinedMetricError() : Error("undefined correlation (zero variance)") {}
  using Error::Error;
};

class TrainError : public Error {
 public:
  using Error::Error;
};

}  // namespace trmqe
