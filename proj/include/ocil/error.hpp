#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ocil {

enum class ErrorCode {
    InvalidArgument,
    EmptyInput,
    NonFinite,
    DimensionMismatch,
    ShapeMismatch,
    // Ingestion failures. Kept distinct so callers can tell them apart.
    FileNotFound,
    MalformedHeader,
    LabelOutOfRange,
    NonFiniteFeature,
    Io,
    Config,
    Runtime,
};

std::string_view to_string(ErrorCode code) noexcept;

// True for codes that originate from reading or validating input data.
bool is_data_error(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const char* what) {
    if (!cond) throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) throw Error(code, what);
}

}  // namespace ocil
