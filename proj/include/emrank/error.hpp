#pragma once

#include <stdexcept>
#include <string>

namespace emrank {

/// Raised when an input violates a documented precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised while reading a file; carries the path and, for line-oriented
/// formats, the 1-based line number (0 when not applicable).
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string path, std::size_t line, const std::string& what)
      : std::runtime_error(format(path, line, what)),
        path_(std::move(path)),
        line_(line) {}

  const std::string& path() const noexcept { return path_; }
  std::size_t line() const noexcept { return line_; }

 private:
  static std::string format(const std::string& path, std::size_t line,
                            const std::string& what) {
    std::string msg = path;
    if (line > 0) msg += ":" + std::to_string(line);
    return msg + ": " + what;
  }

  std::string path_;
  std::size_t line_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace emrank
