#pragma once

#include <stdexcept>
#include <string>

namespace adpc {

// Base class for all library errors. Subcommands map these to exit code 1
// (validation) or 2 (runtime) depending on the phase they occur in.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// --- scm ---
struct CycleDetected : Error { using Error::Error; };
struct CpdShapeMismatch : Error { using Error::Error; };
struct CpdRowNotNormalized : Error { using Error::Error; };
struct UnknownVariable : Error { using Error::Error; };
struct ValueOutOfRange : Error { using Error::Error; };
struct MissingAssignment : Error { using Error::Error; };
struct ZeroProbabilityEvidence : Error { using Error::Error; };
struct InvalidAdjustmentSet : Error { using Error::Error; };
struct StateSpaceTooLarge : Error { using Error::Error; };

// --- text ---
struct EmptyCorpus : Error { using Error::Error; };
struct MissingRequiredSection : Error { using Error::Error; };

// --- neural ---
struct ShapeMismatch : Error { using Error::Error; };
struct NonFiniteInput : Error { using Error::Error; };
struct IndivisibleVolume : Error { using Error::Error; };
struct AllTokensMasked : Error { using Error::Error; };

// --- data / training ---
struct InvalidSpec : Error { using Error::Error; };
struct MissingFile : Error { using Error::Error; };
struct BadLabel : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct NonFiniteGradient : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };
struct ClassAbsentInSplit : Error { using Error::Error; };
struct ClassAbsent : Error { using Error::Error; };
struct CheckpointError : Error { using Error::Error; };

}  // namespace adpc
