#include "mesa/errors.hpp"

namespace mesa {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kInvalidState: return "invalid-state";
    case ErrorKind::kInfeasibleGeometry: return "infeasible-geometry";
    case ErrorKind::kDegenerateProfile: return "degenerate-profile";
    case ErrorKind::kHarvestFailure: return "harvest-failure";
    case ErrorKind::kTrainingDiverged: return "training-diverged";
    case ErrorKind::kInvalidConfig: return "invalid-config";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace mesa
