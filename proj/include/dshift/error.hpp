#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dshift {

enum class ErrorKind {
  // data errors
  MalformedCsv,
  MalformedJson,
  DuplicateImageId,
  MissingRequiredColumn,
  UnknownOrigin,
  ClassTooSmall,
  DegenerateImage,
  EmptyInput,
  EmptyClass,
  NotADistribution,
  ZeroVector,
  DimMismatch,
  RaggedRows,
  NonFiniteValue,
  DuplicateId,
  DegenerateDistances,
  InfeasiblePerplexity,
  SingleClass,
  ZeroVariance,
  LengthMismatch,
  MissingInput,
  Io,
  // usage / configuration errors
  InvalidArgument,
  Config,
  // network errors
  NetworkError,
  SchemaDrift,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Process exit code for an error kind: 1 usage/config, 2 data, 3 network.
int exit_code(ErrorKind kind) noexcept;

/// The single exception type thrown by the library. `items` carries the
/// offending identifiers where the error names several (duplicate ids,
/// missing columns); `row` is the 1-based line of a CSV failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::vector<std::string> items = {},
        std::optional<std::size_t> row = std::nullopt);

  ErrorKind kind() const noexcept { return kind_; }
  const std::vector<std::string>& items() const noexcept { return items_; }
  std::optional<std::size_t> row() const noexcept { return row_; }

 private:
  ErrorKind kind_;
  std::vector<std::string> items_;
  std::optional<std::size_t> row_;
};

}  // namespace dshift
