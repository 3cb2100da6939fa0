#include "common/error.hpp"

namespace e2eve {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Ok: return "Ok";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IOFailure: return "IOFailure";
    case ErrorCode::NoImages: return "NoImages";
    case ErrorCode::MaskShapeMismatch: return "MaskShapeMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::InfeasibleRegion: return "InfeasibleRegion";
    case ErrorCode::InfeasibleCrop: return "InfeasibleCrop";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::InvalidToken: return "InvalidToken";
    case ErrorCode::DivergenceError: return "DivergenceError";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::ModelMismatch: return "ModelMismatch";
    case ErrorCode::InvalidRequest: return "InvalidRequest";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

}  // namespace e2eve
