#include "dshift/error.hpp"

namespace dshift {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MalformedCsv: return "MalformedCsv";
    case ErrorKind::MalformedJson: return "MalformedJson";
    case ErrorKind::DuplicateImageId: return "DuplicateImageId";
    case ErrorKind::MissingRequiredColumn: return "MissingRequiredColumn";
    case ErrorKind::UnknownOrigin: return "UnknownOrigin";
    case ErrorKind::ClassTooSmall: return "ClassTooSmall";
    case ErrorKind::DegenerateImage: return "DegenerateImage";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::NotADistribution: return "NotADistribution";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::RaggedRows: return "RaggedRows";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::DegenerateDistances: return "DegenerateDistances";
    case ErrorKind::InfeasiblePerplexity: return "InfeasiblePerplexity";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::MissingInput: return "MissingInput";
    case ErrorKind::Io: return "Io";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Config: return "Config";
    case ErrorKind::NetworkError: return "NetworkError";
    case ErrorKind::SchemaDrift: return "SchemaDrift";
  }
  return "Unknown";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::Config:
      return 1;
    case ErrorKind::NetworkError:
    case ErrorKind::SchemaDrift:
      return 3;
    default:
      return 2;
  }
}

Error::Error(ErrorKind kind, const std::string& message,
             std::vector<std::string> items, std::optional<std::size_t> row)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message),
      kind_(kind),
      items_(std::move(items)),
      row_(row) {}

}  // namespace dshift
