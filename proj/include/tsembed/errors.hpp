#pragma once

#include <stdexcept>
#include <string>

namespace tsembed {

// Error hierarchy. UsageError maps to CLI exit code 1, DataError (and
// subclasses) to exit code 2.

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : DataError {
  explicit FormatError(const std::string& msg) : DataError(msg) {}
};

struct ShapeMismatch : DataError {
  explicit ShapeMismatch(const std::string& msg) : DataError(msg) {}
};

struct DegenerateData : DataError {
  explicit DegenerateData(const std::string& msg) : DataError(msg) {}
};

struct EmptyCombination : DataError {
  explicit EmptyCombination(const std::string& msg) : DataError(msg) {}
};

struct SingleClass : DataError {
  explicit SingleClass(const std::string& msg) : DataError(msg) {}
};

struct InsufficientCalibration : DataError {
  explicit InsufficientCalibration(const std::string& msg) : DataError(msg) {}
};

struct AllZeroDifferences : DataError {
  explicit AllZeroDifferences(const std::string& msg) : DataError(msg) {}
};

}  // namespace tsembed
