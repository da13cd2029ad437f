#pragma once

#include <stdexcept>
#include <string>

namespace jamcancel {

// Caller violated a precondition (bad argument, bad config field).
class UsageError : public std::invalid_argument {
public:
    explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

// On-disk data is malformed: bad magic, version, truncation, shape mismatch.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace jamcancel
