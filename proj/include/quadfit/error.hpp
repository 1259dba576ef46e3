#pragma once

#include <stdexcept>
#include <string>

namespace quadfit {

/// Malformed input file: truncated JSON, missing keys, wrong shapes.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input parsed but violates a documented invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failures (cannot open, cannot write).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Point configuration too degenerate to define the requested alignment.
class DegenerateConfiguration : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Precondition failure on a library call. Alias kept so callers can catch
/// std::invalid_argument without depending on this header.
using InvalidArgument = std::invalid_argument;

}  // namespace quadfit
