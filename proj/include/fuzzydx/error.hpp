#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fdx {

// Base of every domain error thrown by the library. The CLI maps these to
// exit code 1 and the service to 4xx responses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t line, std::size_t column, std::string expected)
      : Error("syntax error at " + std::to_string(line) + ":" + std::to_string(column) +
              ": expected " + expected),
        line_(line),
        column_(column),
        expected_(std::move(expected)) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }
  const std::string& expected() const { return expected_; }

 private:
  std::size_t line_;
  std::size_t column_;
  std::string expected_;
};

class DuplicateClause : public Error {
 public:
  using Error::Error;
};

class WeightOutOfRange : public Error {
 public:
  using Error::Error;
};

class ConsistencyViolation : public Error {
 public:
  using Error::Error;
};

class UnknownRuleId : public Error {
 public:
  using Error::Error;
};

class StaleVersion : public Error {
 public:
  StaleVersion(long long base, long long head)
      : Error("stale version: edits built against v" + std::to_string(base) + ", head is v" +
              std::to_string(head)),
        base_(base),
        head_(head) {}
  long long base() const { return base_; }
  long long head() const { return head_; }

 private:
  long long base_;
  long long head_;
};

class VersionOrder : public Error {
 public:
  using Error::Error;
};

class MissingSnapshot : public Error {
 public:
  using Error::Error;
};

class EmptyCase : public Error {
 public:
  using Error::Error;
};

class EmptyTruth : public Error {
 public:
  using Error::Error;
};

class EmptySet : public Error {
 public:
  using Error::Error;
};

class EmptyIndex : public Error {
 public:
  using Error::Error;
};

class EmptySymptomSet : public Error {
 public:
  using Error::Error;
};

class MissingPrior : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class EmptyDataset : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fdx
