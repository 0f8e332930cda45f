// error.hpp: exception types shared by the dtmm library.
#pragma once

#include <stdexcept>
#include <string>

namespace dtmm {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Coordinate or patch outside the tensor / filter extents.
struct BoundsError : Error {
  using Error::Error;
};

// Shape mismatches, non-finite values, bad numeric input.
struct DataError : Error {
  using Error::Error;
};

// Encoder input that does not match the declared layer geometry.
struct FormatError : Error {
  using Error::Error;
};

// Encoded payload whose indexes or lengths are inconsistent.
struct CorruptionError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct MalformedStreamError : Error {
  using Error::Error;
};

// Strategy values outside [0, 1].
struct DomainError : Error {
  using Error::Error;
};

struct FitError : Error {
  using Error::Error;
};

struct TopologyError : Error {
  using Error::Error;
};

}  // namespace dtmm
