#pragma once

#include <stdexcept>
#include <string>

namespace wbmae {

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

struct NotPositiveDefinite : std::runtime_error {
    explicit NotPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};

// malformed or truncated external bytes (IDX, CIFAR, checkpoint, CSV)
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

struct MaskError : std::runtime_error {
    explicit MaskError(const std::string& what) : std::runtime_error(what) {}
};

struct DegenerateLabels : std::runtime_error {
    explicit DegenerateLabels(const std::string& what) : std::runtime_error(what) {}
};

struct InsufficientTrials : std::runtime_error {
    explicit InsufficientTrials(const std::string& what) : std::runtime_error(what) {}
};

} // namespace wbmae
