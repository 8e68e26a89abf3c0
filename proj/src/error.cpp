#include "drw/error.hpp"

namespace drw {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kInvalidDimension: return "invalid-dimension";
    case ErrorKind::kOutOfVocabulary: return "out-of-vocabulary";
    case ErrorKind::kInvalidProbability: return "invalid-probability";
    case ErrorKind::kCorruptFile: return "corrupt-file";
    case ErrorKind::kDimensionMismatch: return "dimension-mismatch";
    case ErrorKind::kTooFewProbes: return "too-few-probes";
    case ErrorKind::kWindowOutsideGrid: return "window-outside-grid";
    case ErrorKind::kLengthMismatch: return "length-mismatch";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace drw
