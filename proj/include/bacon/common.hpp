#ifndef BACON_COMMON_HPP
#define BACON_COMMON_HPP

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace bacon {

// Scalar type for all tensor math. fp64 by default; build with
// -DBACON_REAL=float to trade gradient-check headroom for speed.
#ifdef BACON_REAL
using real = BACON_REAL;
#else
using real = double;
#endif

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};
struct InvalidAxis : Error {
  using Error::Error;
};
struct NotScalar : Error {
  using Error::Error;
};
struct NoTape : Error {
  using Error::Error;
};
struct EmptyBatch : Error {
  using Error::Error;
};
struct AllTermsDisabled : Error {
  using Error::Error;
};
struct DimMismatch : Error {
  using Error::Error;
};
struct BadDistributionSpec : Error {
  using Error::Error;
};
struct ConditionalUnavailable : Error {
  using Error::Error;
};
struct NonPositiveValue : Error {
  using Error::Error;
};
struct EmptyGrid : Error {
  using Error::Error;
};
struct LabelOutOfRange : Error {
  using Error::Error;
};
struct InsufficientClassExamples : Error {
  using Error::Error;
};
struct UnknownClass : Error {
  using Error::Error;
};
struct BadMagic : Error {
  using Error::Error;
};
struct CountMismatch : Error {
  using Error::Error;
};
struct TruncatedFile : Error {
  using Error::Error;
};
struct VersionUnsupported : Error {
  using Error::Error;
};
struct BadShape : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

}  // namespace bacon

#endif
