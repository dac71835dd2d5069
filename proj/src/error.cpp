#include "ocil/error.hpp"

namespace ocil {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::FileNotFound: return "FileNotFound";
        case ErrorCode::MalformedHeader: return "MalformedHeader";
        case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
        case ErrorCode::NonFiniteFeature: return "NonFiniteFeature";
        case ErrorCode::Io: return "Io";
        case ErrorCode::Config: return "Config";
        case ErrorCode::Runtime: return "Runtime";
    }
    return "Unknown";
}

bool is_data_error(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::FileNotFound:
        case ErrorCode::MalformedHeader:
        case ErrorCode::LabelOutOfRange:
        case ErrorCode::NonFiniteFeature:
        case ErrorCode::Io:
            return true;
        default:
            return false;
    }
}

}  // namespace ocil
