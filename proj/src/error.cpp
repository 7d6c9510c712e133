#include "cestrade/error.hpp"

namespace cestrade {

std::string_view to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::CycleDetected: return "CycleDetected";
    case ErrorKind::DisconnectedBus: return "DisconnectedBus";
    case ErrorKind::DuplicateEdge: return "DuplicateEdge";
    case ErrorKind::NonPositiveBase: return "NonPositiveBase";
    case ErrorKind::InvalidParameter: return "InvalidParameter";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::NegativeDemand: return "NegativeDemand";
    case ErrorKind::NegativePV: return "NegativePV";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::UnknownBus: return "UnknownBus";
    case ErrorKind::UnknownUser: return "UnknownUser";
    case ErrorKind::PVOnNonParticipant: return "PVOnNonParticipant";
    case ErrorKind::UnknownCesBus: return "UnknownCesBus";
    case ErrorKind::IterationLimit: return "IterationLimit";
    case ErrorKind::IllConditioned: return "IllConditioned";
    case ErrorKind::CertificateFailure: return "CertificateFailure";
    case ErrorKind::HorizonMismatch: return "HorizonMismatch";
    case ErrorKind::CesBusMissing: return "CesBusMissing";
    case ErrorKind::InfeasibleScenario: return "InfeasibleScenario";
    case ErrorKind::ComplementarityViolation: return "ComplementarityViolation";
    case ErrorKind::IncompatibleResults: return "IncompatibleResults";
    case ErrorKind::ParseError: return "ParseError";
    }
    return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + ": " + detail),
      kind_(kind),
      detail_(detail)
{
}

}  // namespace cestrade
