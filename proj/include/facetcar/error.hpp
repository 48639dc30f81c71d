#pragma once

#include <stdexcept>
#include <string>

namespace facetcar {

// Base of every error raised by the library. The CLI maps subclasses onto
// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define FACETCAR_DEFINE_ERROR(Name)        \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

FACETCAR_DEFINE_ERROR(MalformedQuery);
FACETCAR_DEFINE_ERROR(InvalidConfig);
FACETCAR_DEFINE_ERROR(EmptyCorpus);
FACETCAR_DEFINE_ERROR(DuplicateDocument);
FACETCAR_DEFINE_ERROR(UnknownDocument);
FACETCAR_DEFINE_ERROR(ShapeError);
FACETCAR_DEFINE_ERROR(EmbeddingError);
FACETCAR_DEFINE_ERROR(VariantError);
FACETCAR_DEFINE_ERROR(MissingContext);
FACETCAR_DEFINE_ERROR(NumericalError);
FACETCAR_DEFINE_ERROR(IoError);

// Parse failure with the offending 1-based line number (0 when unknown).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

#undef FACETCAR_DEFINE_ERROR

}  // namespace facetcar
