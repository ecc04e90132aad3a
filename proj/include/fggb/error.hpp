#pragma once

#include <stdexcept>
#include <string>

namespace fggb {

// Base for every error raised by the library. Callers that only need to
// report a message can catch this; tests distinguish the subclasses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not line up (image vs model input, map vs image).
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Zero-norm embedding handed to a cosine-based operation.
class DegenerateEmbeddingError : public Error {
 public:
  using Error::Error;
};

// Inconsistent layer chain in a ModelSpec.
class SpecError : public Error {
 public:
  using Error::Error;
};

// Bad user-supplied settings (even blur kernel, too few masks, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fggb
