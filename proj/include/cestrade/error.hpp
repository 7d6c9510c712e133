#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cestrade {

/// Failure classes raised by the library. The CLI maps them onto exit codes.
enum class ErrorKind {
    // feeder
    CycleDetected,
    DisconnectedBus,
    DuplicateEdge,
    NonPositiveBase,
    InvalidParameter,
    DimensionMismatch,
    NoConvergence,
    // profiles
    NegativeDemand,
    NegativePV,
    LengthMismatch,
    UnknownBus,
    UnknownUser,
    PVOnNonParticipant,
    UnknownCesBus,
    // solver / game
    IterationLimit,
    IllConditioned,
    CertificateFailure,
    HorizonMismatch,
    CesBusMissing,
    InfeasibleScenario,
    ComplementarityViolation,
    IncompatibleResults,
    // io
    ParseError,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& detail);

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    std::string detail_;
};

}  // namespace cestrade
