// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tadapt {

enum class ErrorCode {
    InvalidArgument,
    DimensionMismatch,
    ZeroNorm,
    NonFinite,
    DuplicateMedia,
    ConvergenceFailure,
    EmptyNegativeSet,
    LabelLeak,
    GalleryTooSmall,
    AllSameSubject,
    EmptyInput,
    SubjectOverlap,
    InsufficientData,
    DegenerateInput,
    Unachievable,
    MissingMate,
    InsufficientSplits,
    InvalidConfig,
    DimensionTooLarge,
    CorruptHeader,
    VersionMismatch,
    RangeOverlap,
    UnitDimensionMismatch,
    DanglingTemplateRef,
    IoError,
};

inline constexpr std::string_view to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroNorm: return "ZeroNormError";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::DuplicateMedia: return "DuplicateMedia";
    case ErrorCode::ConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::EmptyNegativeSet: return "EmptyNegativeSet";
    case ErrorCode::LabelLeak: return "LabelLeak";
    case ErrorCode::GalleryTooSmall: return "GalleryTooSmall";
    case ErrorCode::AllSameSubject: return "AllSameSubject";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::SubjectOverlap: return "SubjectOverlapError";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::Unachievable: return "Unachievable";
    case ErrorCode::MissingMate: return "MissingMate";
    case ErrorCode::InsufficientSplits: return "InsufficientSplits";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::DimensionTooLarge: return "DimensionTooLarge";
    case ErrorCode::CorruptHeader: return "CorruptHeader";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::RangeOverlap: return "RangeOverlap";
    case ErrorCode::UnitDimensionMismatch: return "UnitDimensionMismatch";
    case ErrorCode::DanglingTemplateRef: return "DanglingTemplateRef";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// Base exception for every failure raised by the library. The code is
/// stable and is what the CLI reports in its error JSON.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what)
{
    throw Error(code, what);
}

inline void require(bool condition, ErrorCode code, const std::string& what)
{
    if (!condition)
        fail(code, what);
}

} // namespace tadapt
