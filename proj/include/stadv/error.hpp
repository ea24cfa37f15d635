#ifndef STADV_ERROR_HPP
#define STADV_ERROR_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace stadv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor or image geometry.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Out-of-domain argument: bad class index, negative budget, non-finite flow.
class ValueError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff tape (non-scalar loss, second backward pass).
class TapeError : public Error {
 public:
  using Error::Error;
};

// Structural problem in a binary or text file; carries the byte offset at
// which the inconsistency was detected.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::uint64_t offset, const std::string& what)
      : Error(path + ": byte " + std::to_string(offset) + ": " + what),
        path_(path),
        offset_(offset) {}

  const std::string& path() const noexcept { return path_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::string path_;
  std::uint64_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace stadv

#endif  // STADV_ERROR_HPP
