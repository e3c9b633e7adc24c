#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sonoagent {

enum class ErrorCode {
    InvalidInput,
    BackendUnavailable,
    DimensionMismatch,
    ZeroVector,
    EmptyIndex,
    DuplicateKey,
    UnknownGoldKey,
    DatasetFormat,
    DuplicateApi,
    MalformedTemplate,
    UnknownApi,
    MissingParameter,
    UnknownParameter,
    KindMismatch,
    PositionOutOfRange,
    ThresholdOutOfRange,
    ScriptExhausted,
    RemoteError,
    NoApisListed,
    SessionClosed,
    InsufficientTemplates,
    UnknownSession,
    ModeConflict,
};

std::string_view to_string(ErrorCode code);

// Every recoverable failure in the library is an Error carrying a code;
// the message always starts with the code name.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace sonoagent
