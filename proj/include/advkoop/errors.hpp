#pragma once

#include <stdexcept>
#include <string>

namespace advkoop {

/// Integration left the admissible value range.
class SolverBlowup : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A corpus file could not be decoded (truncated, inconsistent metadata, ...).
class CorruptCorpus : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatVersionMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CorpusTooShort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A latent trajectory exceeded its norm bound.
class RolloutDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A training loss became non-finite.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The control objective became non-finite.
class ControlDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace advkoop
