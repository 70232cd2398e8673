#include "dynlat/error.hpp"

namespace dynlat {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kGranularityMismatch: return "GranularityMismatch";
    case ErrorCode::kParadigmFieldMissing: return "ParadigmFieldMissing";
    case ErrorCode::kUnknownDevice: return "UnknownDevice";
    case ErrorCode::kUnknownNetwork: return "UnknownNetwork";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kMaskShapeMismatch: return "MaskShapeMismatch";
    case ErrorCode::kDivisionByZero: return "DivisionByZero";
    case ErrorCode::kProfileCountMismatch: return "ProfileCountMismatch";
    case ErrorCode::kPlanLengthMismatch: return "PlanLengthMismatch";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kStepOutOfRange: return "StepOutOfRange";
    case ErrorCode::kParseError: return "ParseError";
  }
  return "Unknown";
}

}  // namespace dynlat
