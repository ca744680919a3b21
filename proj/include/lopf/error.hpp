#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace lopf {

// Base class of every error raised by the library. kind() is a short,
// stable token used by the command-line tool for machine-readable output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ParseError : public Error {
 public:
  ParseError(int line, const std::string& message)
      : Error("parse", "line " + std::to_string(line) + ": " + message), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

// Semantic problems with a parsed case (two slack buses, dangling branch...).
// entities() holds the ids involved, in the order they were found.
class CaseError : public Error {
 public:
  CaseError(const std::string& message, std::vector<int> entities)
      : Error("case", message), entities_(std::move(entities)) {}

  const std::vector<int>& entities() const noexcept { return entities_; }

 private:
  std::vector<int> entities_;
};

class SingularBranchError : public Error {
 public:
  SingularBranchError(int from, int to)
      : Error("singular-branch", "branch " + std::to_string(from) + "-" + std::to_string(to) +
                                     " has zero series impedance") {}
};

class SingularSystemError : public Error {
 public:
  SingularSystemError(const std::string& what, double rcond)
      : Error("singular-system", what + " (reciprocal condition estimate " + std::to_string(rcond) + ")"),
        rcond_(rcond) {}

  double rcond() const noexcept { return rcond_; }

 private:
  double rcond_;
};

class DegenerateEmbeddingError : public Error {
 public:
  explicit DegenerateEmbeddingError(const std::string& message) : Error("degenerate-embedding", message) {}
};

class PoleAtOneError : public Error {
 public:
  explicit PoleAtOneError(const std::string& message) : Error("pole-at-one", message) {}
};

// Misuse of an object's lifecycle, e.g. recording on a finished tape.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error("usage", message) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& message) : Error("contract", message) {}
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& message) : Error("precondition", message) {}
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message) : Error("dimension", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

}  // namespace lopf
