// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "soilseg/error.hpp"

namespace soilseg {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kOk: return "Ok";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kMissingFile: return "MissingFile";
    case ErrorCode::kSchemaError: return "SchemaError";
    case ErrorCode::kDanglingReference: return "DanglingReference";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kDegeneratePolygon: return "DegeneratePolygon";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kWeightsUnavailable: return "WeightsUnavailable";
    case ErrorCode::kInvalidK: return "InvalidK";
    case ErrorCode::kDegenerateBox: return "DegenerateBox";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kEpochOutOfRange: return "EpochOutOfRange";
    case ErrorCode::kDataError: return "DataError";
    case ErrorCode::kCorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kNoSoilDetected: return "NoSoilDetected";
    case ErrorCode::kEmptyIntersection: return "EmptyIntersection";
    case ErrorCode::kValidationFailed: return "ValidationFailed";
    case ErrorCode::kInternal: return "Internal";
  }
  return "Unknown";
}

}  // namespace soilseg
