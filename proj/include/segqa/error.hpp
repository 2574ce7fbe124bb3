#pragma once

#include <stdexcept>
#include <string>

namespace segqa {

// Base for every error raised by the library. Subclasses name the failure
// category so callers (and the HTTP layer) can map them to responses.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error { public: using Error::Error; };
class ShapeError : public Error { public: using Error::Error; };
class NonFiniteError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class UnsupportedTypeError : public Error { public: using Error::Error; };
class LengthError : public Error { public: using Error::Error; };
class RangeError : public Error { public: using Error::Error; };
class BoundsError : public Error { public: using Error::Error; };
class EmptyInputError : public Error { public: using Error::Error; };
class DegenerateError : public Error { public: using Error::Error; };
class StructureError : public Error { public: using Error::Error; };
class ValidationError : public Error { public: using Error::Error; };
class NotFoundError : public Error { public: using Error::Error; };
class LeakageError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };

}  // namespace segqa
