#pragma once

#include <stdexcept>
#include <string>

namespace mcaoan {

// Extent mismatches; the message names the offending shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Softmax over a slice whose positions are all masked out.
struct DegenerateSliceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Violated API preconditions (empty question, non-scalar loss, bad targets).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Out-of-range ids (embedding rows, sample indices).
struct LookupError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Malformed dataset or config file; carries the 1-based line number.
struct ParseError : std::runtime_error {
  ParseError(long line_no, const std::string& what)
      : std::runtime_error("line " + std::to_string(line_no) + ": " + what),
        line(line_no) {}
  long line;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value met while evaluating a function under finite differences.
struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient during training; names the parameter path.
struct TrainAbortError : std::runtime_error {
  explicit TrainAbortError(const std::string& where_)
      : std::runtime_error("non-finite value in training at: " + where_),
        where(where_) {}
  std::string where;
};

}  // namespace mcaoan
