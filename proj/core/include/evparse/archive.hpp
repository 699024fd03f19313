#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evparse/embeddings.hpp"

namespace evparse {

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary embedding archive, little-endian:
//   magic "EGEMB1" (6 bytes)
//   record count: u32
//   per record: id length u16, id bytes (UTF-8), n u32, d u32,
//               n*d float32 row-major
// All records in one archive share the same d.
void write_archive(const std::filesystem::path& path,
                   std::span<const EmbeddingMatrix> matrices);

// Reads the whole archive up front and indexes records by sentence id, so
// lookups are safe from concurrent readers.
class EmbeddingArchive {
 public:
  static EmbeddingArchive open(const std::filesystem::path& path);

  std::size_t size() const { return records_.size(); }
  std::size_t dim() const { return dim_; }
  const EmbeddingMatrix& at(std::size_t index) const { return records_[index]; }
  const EmbeddingMatrix* find(std::string_view sentence_id) const;

  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

 private:
  std::vector<EmbeddingMatrix> records_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t dim_ = 0;
};

}  // namespace evparse
