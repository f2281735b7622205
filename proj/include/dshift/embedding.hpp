#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dshift {

/// n x d feature matrix with one image id per row. Values are stored in
/// single precision, so the 9-significant-digit CSV form is lossless.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  /// Throws DuplicateId, NonFiniteValue, or RaggedRows (values.size() != n * dim).
  EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim, std::vector<float> values);

  std::size_t rows() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<float>& values() const noexcept { return values_; }

  std::span<const float> row(std::size_t i) const noexcept {
    return {values_.data() + i * dim_, dim_};
  }
  std::optional<std::size_t> index_of(std::string_view id) const;

  /// Rows for the given ids, in that order. Throws MissingInput.
  EmbeddingMatrix select(std::span<const std::string> ids) const;

  bool operator==(const EmbeddingMatrix& o) const {
    return ids_ == o.ids_ && dim_ == o.dim_ && values_ == o.values_;
  }

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// CSV with header `image_id,f0,...,f{d-1}`.
EmbeddingMatrix read_embeddings(std::string_view bytes);
std::string write_embeddings(const EmbeddingMatrix& m);

}  // namespace dshift
