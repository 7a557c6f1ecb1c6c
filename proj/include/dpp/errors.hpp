#pragma once

#include <stdexcept>
#include <string>

namespace dpp {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// sphere_geometry
class HemisphereViolation : public Error { public: using Error::Error; };
class InvalidFov : public Error { public: using Error::Error; };
class InvalidResolution : public Error { public: using Error::Error; };

// resampler / model
class DimensionError : public Error { public: using Error::Error; };
class StrideMismatch : public Error { public: using Error::Error; };
class StaleCache : public Error { public: using Error::Error; };

// losses
class ZeroVector : public Error { public: using Error::Error; };
class ShapeMismatch : public Error { public: using Error::Error; };
class LabelOutOfRange : public Error { public: using Error::Error; };
class AllIgnored : public Error { public: using Error::Error; };
class NonFiniteTerm : public Error { public: using Error::Error; };

// trainer / metrics
class NonFiniteLoss : public Error { public: using Error::Error; };
class EmptyEvalSet : public Error { public: using Error::Error; };
class EmptyMatrix : public Error { public: using Error::Error; };

// cli_io
class UsageError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };
class ValidationError : public Error { public: using Error::Error; };

}  // namespace dpp
