#include "dshift/embedding.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <sstream>

#include "dshift/csv.hpp"
#include "dshift/error.hpp"

namespace dshift {

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim,
                                 std::vector<float> values)
    : ids_(std::move(ids)), dim_(dim), values_(std::move(values)) {
  if (values_.size() != ids_.size() * dim_) {
    throw Error(ErrorKind::RaggedRows, "embedding values do not form an n x d matrix");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw Error(ErrorKind::NonFiniteValue, "non-finite embedding value for " + ids_[i / dim_],
                  {ids_[i / dim_]});
    }
  }
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) {
      throw Error(ErrorKind::DuplicateId, "duplicate embedding id " + ids_[i], {ids_[i]});
    }
  }
}

std::optional<std::size_t> EmbeddingMatrix::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

EmbeddingMatrix EmbeddingMatrix::select(std::span<const std::string> ids) const {
  std::vector<float> values;
  values.reserve(ids.size() * dim_);
  for (const auto& id : ids) {
    const auto i = index_of(id);
    if (!i) throw Error(ErrorKind::MissingInput, "no embedding for image " + id, {id});
    const auto r = row(*i);
    values.insert(values.end(), r.begin(), r.end());
  }
  return EmbeddingMatrix({ids.begin(), ids.end()}, dim_, std::move(values));
}

EmbeddingMatrix read_embeddings(std::string_view bytes) {
  const auto rows = csv::parse(bytes);
  if (rows.empty()) throw Error(ErrorKind::MalformedCsv, "embedding file has no header");
  const auto& header = rows[0].fields;
  if (header.empty() || csv::trim(header[0]) != "image_id") {
    throw Error(ErrorKind::MalformedCsv, "embedding header must start with image_id", {}, 1);
  }
  const std::size_t dim = header.size() - 1;
  for (std::size_t k = 0; k < dim; ++k) {
    if (csv::trim(header[k + 1]) != "f" + std::to_string(k)) {
      throw Error(ErrorKind::MalformedCsv, "embedding column " + std::to_string(k + 1) +
                                               " must be named f" + std::to_string(k),
                  {}, 1);
    }
  }
  std::vector<std::string> ids;
  std::vector<float> values;
  ids.reserve(rows.size() - 1);
  values.reserve((rows.size() - 1) * dim);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.fields.size() != header.size()) {
      throw Error(ErrorKind::RaggedRows,
                  "row has " + std::to_string(row.fields.size()) + " fields, expected " +
                      std::to_string(header.size()),
                  {}, row.line);
    }
    const std::string id = csv::trim(row.fields[0]);
    for (std::size_t k = 0; k < dim; ++k) {
      const std::string cell = csv::trim(row.fields[k + 1]);
      float v = 0.0f;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ptr != cell.data() + cell.size() || (ec != std::errc{} && ec != std::errc::result_out_of_range)) {
        throw Error(ErrorKind::MalformedCsv, "not a number: '" + cell + "'", {id}, row.line);
      }
      if (!std::isfinite(v) || ec == std::errc::result_out_of_range) {
        throw Error(ErrorKind::NonFiniteValue, "non-finite value '" + cell + "' for " + id, {id},
                    row.line);
      }
      values.push_back(v);
    }
    ids.push_back(id);
  }
  return EmbeddingMatrix(std::move(ids), dim, std::move(values));
}

std::string write_embeddings(const EmbeddingMatrix& m) {
  std::ostringstream out;
  std::vector<std::string> header{"image_id"};
  for (std::size_t k = 0; k < m.dim(); ++k) header.push_back("f" + std::to_string(k));
  csv::write_row(out, header);
  std::array<char, 48> buf{};
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out << csv::escape(m.ids()[i]);
    for (float v : m.row(i)) {
      auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v,
                                     std::chars_format::general, 9);
      out << ',' << std::string_view(buf.data(), static_cast<std::size_t>(ptr - buf.data()));
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace dshift
