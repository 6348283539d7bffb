#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace liv {

// Base of every domain error raised by the library. The CLI maps these to
// exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class UnknownTokenError : public Error {
 public:
  explicit UnknownTokenError(const std::string& word)
      : Error("unknown token '" + word + "'"), word_(word) {}
  const std::string& word() const { return word_; }

 private:
  std::string word_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient. Carries the first offending parameter name
// when one is known.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, std::string parameter = {})
      : Error(parameter.empty() ? what : what + " (parameter '" + parameter + "')"),
        parameter_(std::move(parameter)) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

class DegenerateEmbeddingError : public Error {
 public:
  using Error::Error;
};

class EmptyAnnotationError : public Error {
 public:
  EmptyAnnotationError() : Error("empty annotation: text encoder needs at least one token") {}
};

class MissingTextError : public Error {
 public:
  using Error::Error;
};

class NoAnnotatedVideosError : public Error {
 public:
  NoAnnotatedVideosError() : Error("no annotated videos in dataset") {}
};

class CorruptCheckpointError : public Error {
 public:
  using Error::Error;
};

class VocabularyMismatchError : public Error {
 public:
  VocabularyMismatchError(const std::string& expected, const std::string& actual)
      : Error("vocabulary mismatch: checkpoint " + expected + " vs dataset " + actual) {}
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace liv
