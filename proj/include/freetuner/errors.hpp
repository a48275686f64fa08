#pragma once

#include <stdexcept>
#include <string>

namespace ft {

/// File/stream failures. The CLI maps these to exit code 3.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failures (divergence, NaN, failed optimization). Exit code 2.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

class TrainingDivergedError : public NumericalError {
public:
    explicit TrainingDivergedError(const std::string& msg) : NumericalError(msg) {}
};

class OptimizationFailureError : public NumericalError {
public:
    OptimizationFailureError(const std::string& msg, int timestep)
        : NumericalError(msg + " (timestep " + std::to_string(timestep) + ")"), timestep(timestep) {}
    int timestep;
};

class GuidanceFailureError : public NumericalError {
public:
    GuidanceFailureError(const std::string& term_kind, int timestep)
        : NumericalError("non-finite guidance gradient for " + term_kind + " term at timestep " +
                         std::to_string(timestep)),
          term_kind(term_kind),
          timestep(timestep) {}
    std::string term_kind;
    int timestep;
};

class DegenerateTimestepError : public NumericalError {
public:
    explicit DegenerateTimestepError(const std::string& msg) : NumericalError(msg) {}
};

/// Usage-level errors (unknown word, missing token, bad config). Exit code 1.
class UnknownTokenError : public std::invalid_argument {
public:
    explicit UnknownTokenError(const std::string& word)
        : std::invalid_argument("unknown token: \"" + word + "\""), word(word) {}
    std::string word;
};

class MissingSubjectTokenError : public std::invalid_argument {
public:
    explicit MissingSubjectTokenError(const std::string& word)
        : std::invalid_argument("subject word \"" + word + "\" missing from composition prompt"),
          word(word) {}
    std::string word;
};

}  // namespace ft
