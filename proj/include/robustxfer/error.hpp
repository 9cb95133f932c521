#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace rx {

// Base of every error raised by the library. `kind()` is a stable short
// identifier that tests and the CLI dispatch on.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error("shape", w) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& w) : Error("validation", w) {}
};

struct FormatError : Error {
  FormatError(std::string kind, const std::string& w) : Error(std::move(kind), w) {}
};

struct MissingArtifactError : Error {
  explicit MissingArtifactError(const std::string& w) : Error("missing-artifact", w) {}
};

struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error("divergence", w) {}
};

namespace detail {

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail
}  // namespace rx
