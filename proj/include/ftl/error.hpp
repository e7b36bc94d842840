#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A model law or preset was given parameters outside its admissible range.
class ModelError : public Error {
public:
    using Error::Error;
};

class AtomizationError : public Error {
public:
    using Error::Error;
};

/// A particle state broke ordering, size or finiteness requirements.
class StateError : public Error {
public:
    using Error::Error;
};

/// Raised when time integration cannot continue. Carries the time reached and
/// the smallest gap of the last trial state so callers can see how the run
/// left the regime where the gap bracket is guaranteed.
class IntegrationError : public Error {
public:
    IntegrationError(const std::string& what, double time, double min_gap,
                     std::size_t gap_index)
        : Error(what), time_(time), min_gap_(min_gap), gap_index_(gap_index) {}

    double time() const noexcept { return time_; }
    double min_gap() const noexcept { return min_gap_; }
    std::size_t gap_index() const noexcept { return gap_index_; }

private:
    double time_;
    double min_gap_;
    std::size_t gap_index_;
};

/// One schema problem in a configuration document, addressed by JSON pointer.
struct ConfigIssue {
    std::string path;
    std::string message;
};

class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<ConfigIssue> issues)
        : Error(summarize(issues)), issues_(std::move(issues)) {}

    const std::vector<ConfigIssue>& issues() const noexcept { return issues_; }

private:
    static std::string summarize(const std::vector<ConfigIssue>& issues) {
        std::string out = "invalid configuration:";
        for (const auto& issue : issues) {
            out += "\n  " + issue.path + ": " + issue.message;
        }
        return out;
    }

    std::vector<ConfigIssue> issues_;
};

}  // namespace ftl
