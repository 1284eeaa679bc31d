#include "kinegraph/error.hpp"

namespace kinegraph {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedLine: return "MalformedLine";
    case ErrorKind::JointCountMismatch: return "JointCountMismatch";
    case ErrorKind::EmptyFile: return "EmptyFile";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::SameJoint: return "SameJoint";
    case ErrorKind::EmptySampleSet: return "EmptySampleSet";
    case ErrorKind::InconsistentJointCount: return "InconsistentJointCount";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::SpectrumOutOfRange: return "SpectrumOutOfRange";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::ZeroDegree: return "ZeroDegree";
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::BudgetExceeded: return "BudgetExceeded";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

bool is_numerical(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::SpectrumOutOfRange:
    case ErrorKind::DomainError:
    case ErrorKind::ZeroDegree:
      return true;
    default:
      return false;
  }
}

}  // namespace kinegraph
