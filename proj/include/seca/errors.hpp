#pragma once

#include <stdexcept>
#include <string>

namespace seca {

enum class ErrorCode {
    kInvalidInput,
    kInvalidConfig,
    kEmptyPool,
    kUnknownClass,
    kMissingClass,
    kProtocolViolation,
    kNumericDivergence,
    kNonConvergence,
    kIo,
    kBadMagic,
    kBadVersion,
    kTruncated,
    kIdOutOfRange,
    kIncompatible,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
   public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

   private:
    ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::kInvalidInput: return "invalid-input";
        case ErrorCode::kInvalidConfig: return "invalid-config";
        case ErrorCode::kEmptyPool: return "empty-pool";
        case ErrorCode::kUnknownClass: return "unknown-class";
        case ErrorCode::kMissingClass: return "missing-class";
        case ErrorCode::kProtocolViolation: return "protocol-violation";
        case ErrorCode::kNumericDivergence: return "numeric-divergence";
        case ErrorCode::kNonConvergence: return "non-convergence";
        case ErrorCode::kIo: return "io";
        case ErrorCode::kBadMagic: return "bad-magic";
        case ErrorCode::kBadVersion: return "bad-version";
        case ErrorCode::kTruncated: return "truncated";
        case ErrorCode::kIdOutOfRange: return "id-out-of-range";
        case ErrorCode::kIncompatible: return "incompatible";
    }
    return "unknown";
}

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace seca
