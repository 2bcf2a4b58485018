#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cyclegen {

enum class ErrorCode {
  kEmptyTripleSet,
  kTagCollision,
  kMalformedLinearization,
  kIo,
  kSchema,
  kEmptySplit,
  kNotEnoughSamples,
  kInsufficientComplement,
  kLengthMismatch,
  kZeroProbabilityTarget,
  kFrozenModel,
  kNotFrozen,
  kEmptyBatch,
  kEmptyCorpus,
  kMissingPairedSubset,
  kMissingData,
  kInvalidConfig,
  kEmptyTable,
  kIdMismatch,
  kCoverageGap,
  kUnknownBatch,
  kVersionConflict,
  kCheckpoint,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyTripleSet: return "EmptyTripleSet";
    case ErrorCode::kTagCollision: return "TagCollision";
    case ErrorCode::kMalformedLinearization: return "MalformedLinearization";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kSchema: return "SchemaError";
    case ErrorCode::kEmptySplit: return "EmptySplit";
    case ErrorCode::kNotEnoughSamples: return "NotEnoughSamples";
    case ErrorCode::kInsufficientComplement: return "InsufficientComplement";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kZeroProbabilityTarget: return "ZeroProbabilityTarget";
    case ErrorCode::kFrozenModel: return "FrozenModel";
    case ErrorCode::kNotFrozen: return "NotFrozen";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kMissingPairedSubset: return "MissingPairedSubset";
    case ErrorCode::kMissingData: return "MissingData";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kEmptyTable: return "EmptyTable";
    case ErrorCode::kIdMismatch: return "IdMismatch";
    case ErrorCode::kCoverageGap: return "CoverageGap";
    case ErrorCode::kUnknownBatch: return "UnknownBatch";
    case ErrorCode::kVersionConflict: return "VersionConflict";
    case ErrorCode::kCheckpoint: return "CheckpointError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cyclegen
