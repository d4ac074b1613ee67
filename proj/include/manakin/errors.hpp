#pragma once

#include <stdexcept>
#include <string>

namespace manakin {

enum class Err {
    InvalidConfiguration,
    StaleHandle,
    InvalidRank,
    ProtocolViolation,
    UnknownVirtualHandle,
    InvalidOperation,
    ConfigurationError,
    RejectedBusy,
    DrainStuck,
    CheckpointAborted,
    RestartIncomplete,
    IncompatibleImage,
    CorruptImage,
    RestartInconsistency,
    GidCollision,
};

inline const char *err_name(Err e) {
    switch (e) {
    case Err::InvalidConfiguration: return "invalid-configuration";
    case Err::StaleHandle: return "stale-handle";
    case Err::InvalidRank: return "invalid-rank";
    case Err::ProtocolViolation: return "protocol-violation";
    case Err::UnknownVirtualHandle: return "unknown-virtual-handle";
    case Err::InvalidOperation: return "invalid-operation";
    case Err::ConfigurationError: return "configuration-error";
    case Err::RejectedBusy: return "rejected-busy";
    case Err::DrainStuck: return "drain-stuck";
    case Err::CheckpointAborted: return "checkpoint-aborted";
    case Err::RestartIncomplete: return "restart-incomplete";
    case Err::IncompatibleImage: return "incompatible-image";
    case Err::CorruptImage: return "corrupt-image";
    case Err::RestartInconsistency: return "restart-inconsistency";
    case Err::GidCollision: return "gid-collision";
    }
    return "unknown";
}

class SimError : public std::runtime_error {
public:
    SimError(Err code, const std::string &what)
        : std::runtime_error(std::string(err_name(code)) + ": " + what), m_code(code) {}

    Err code() const { return m_code; }

private:
    Err m_code;
};

} // namespace manakin
