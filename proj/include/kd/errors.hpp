#pragma once

#include <stdexcept>
#include <string>

namespace kd {

// Error categories surfaced by the CLI as "category: detail".
struct Error : std::runtime_error {
  Error(const std::string& category, const std::string& detail)
      : std::runtime_error(category + ": " + detail), category_(category) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

struct DimError : Error {
  explicit DimError(const std::string& d) : Error("dimension error", d) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& d) : Error("config error", d) {}
};
struct DataError : Error {
  explicit DataError(const std::string& d) : Error("data error", d) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& d) : Error("numeric error", d) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& d) : Error("format error", d) {}
};
struct TrainError : Error {
  explicit TrainError(const std::string& d) : Error("training error", d) {}
};

}  // namespace kd
