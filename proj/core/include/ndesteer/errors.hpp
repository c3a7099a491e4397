#pragma once

#include <stdexcept>
#include <string>

namespace ndesteer {

// Every error raised by the library derives from Error so callers can catch
// the whole family; the CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// data / format / numeric problems
class ShapeError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class DegenerateVariance : public Error { using Error::Error; };
class ZeroVector : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class TruncatedFile : public FormatError { using FormatError::FormatError; };
class VersionError : public FormatError { using FormatError::FormatError; };
class ConfigError : public Error { using Error::Error; };
class OverflowError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class DigestMismatch : public Error { using Error::Error; };
class InvariantError : public Error { using Error::Error; };
class EmptyLexicon : public Error { using Error::Error; };
class InsufficientObjects : public Error { using Error::Error; };
class LengthMismatch : public Error { using Error::Error; };
class RangeError : public Error { using Error::Error; };
class NoiseError : public Error { using Error::Error; };
class MissingNull : public Error { using Error::Error; };

// remote endpoints
class NetworkError : public Error { using Error::Error; };
class TimeoutError : public NetworkError { using NetworkError::NetworkError; };
class ProtocolError : public NetworkError { using NetworkError::NetworkError; };

}  // namespace ndesteer
