#pragma once

#include <stdexcept>
#include <string>

namespace nerfpose {

enum class ErrorCode {
  kBehindCamera,
  kInvalidDepth,
  kOutOfBounds,
  kNearSingularLog,
  kInvalidArgument,
  kMalformedHeader,
  kNegativeDensity,
  kSizeMismatch,
  kInsufficientCovisibility,
  kInsufficientMatches,
  kTooFewPoints,
  kDegenerateConfiguration,
  kPreconditionViolation,
  kNoConsensus,
  kEmptyMask,
  kInfeasibleOcclusion,
  kIo,
  kConfig,
};

const char* to_string(ErrorCode code);

// Every failure raised by the library carries a machine-readable code so
// callers (the pipeline, the harness, the CLI) can route on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

enum class Stage { kRender, kMatch, kLift, kMine, kPnp, kRefine };

const char* to_string(Stage stage);

class PipelineError : public Error {
 public:
  PipelineError(Stage stage, ErrorCode code, const std::string& message)
      : Error(code, std::string(to_string(stage)) + ": " + message),
        stage_(stage) {}

  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

}  // namespace nerfpose
