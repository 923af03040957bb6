#pragma once

#include <stdexcept>
#include <string>

namespace copatch {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition or invariant violated by caller-supplied values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// I/O failure while reading or writing a file.
class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Malformed CPT1 container. `field()` names the offending part of the
/// header or payload ("magic", "dtype", "ndim", "dim", "payload").
class FormatError : public Error {
 public:
  FormatError(const std::string& path, std::string field, const std::string& what)
      : Error(path + ": " + field + ": " + what), path_(path), field_(std::move(field)) {}
  const std::string& path() const noexcept { return path_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string path_;
  std::string field_;
};

/// Problem with a fixture directory. `sample_id()` is empty for
/// manifest-level errors.
class FixtureError : public Error {
 public:
  FixtureError(std::string sample_id, const std::string& what)
      : Error(sample_id.empty() ? what : "sample '" + sample_id + "': " + what),
        sample_id_(std::move(sample_id)) {}
  const std::string& sample_id() const noexcept { return sample_id_; }

 private:
  std::string sample_id_;
};

}  // namespace copatch
