// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace soilseg {

// Values are part of the C ABI (see soilseg.h); append only.
enum class ErrorCode : int {
  kOk = 0,
  kInvalidArgument = 1,
  kMissingFile = 2,
  kSchemaError = 3,
  kDanglingReference = 4,
  kEmptyInput = 5,
  kDegeneratePolygon = 6,
  kIoError = 7,
  kConfigError = 8,
  kWeightsUnavailable = 9,
  kInvalidK = 10,
  kDegenerateBox = 11,
  kNonFiniteLoss = 12,
  kShapeMismatch = 13,
  kEpochOutOfRange = 14,
  kDataError = 15,
  kCorruptCheckpoint = 16,
  kVersionMismatch = 17,
  kNoSoilDetected = 18,
  kEmptyIntersection = 19,
  kValidationFailed = 20,
  kInternal = 99,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, std::string(error_code_name(code)) + ": " + message);
}

}  // namespace soilseg
