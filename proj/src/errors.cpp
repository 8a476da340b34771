#include "nerfpose/errors.hpp"

namespace nerfpose {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBehindCamera: return "behind-camera";
    case ErrorCode::kInvalidDepth: return "invalid-depth";
    case ErrorCode::kOutOfBounds: return "out-of-bounds";
    case ErrorCode::kNearSingularLog: return "near-singular-log";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kMalformedHeader: return "malformed-header";
    case ErrorCode::kNegativeDensity: return "negative-density";
    case ErrorCode::kSizeMismatch: return "size-mismatch";
    case ErrorCode::kInsufficientCovisibility: return "insufficient-covisibility";
    case ErrorCode::kInsufficientMatches: return "insufficient-matches";
    case ErrorCode::kTooFewPoints: return "too-few-points";
    case ErrorCode::kDegenerateConfiguration: return "degenerate-configuration";
    case ErrorCode::kPreconditionViolation: return "precondition-violation";
    case ErrorCode::kNoConsensus: return "no-consensus";
    case ErrorCode::kEmptyMask: return "empty-mask";
    case ErrorCode::kInfeasibleOcclusion: return "infeasible-occlusion";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kConfig: return "config";
  }
  return "unknown";
}

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::kRender: return "render";
    case Stage::kMatch: return "match";
    case Stage::kLift: return "lift";
    case Stage::kMine: return "mine";
    case Stage::kPnp: return "pnp";
    case Stage::kRefine: return "refine";
  }
  return "unknown";
}

}  // namespace nerfpose
