#include "evparse/archive.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace evparse {

namespace {

constexpr char kMagic[6] = {'E', 'G', 'E', 'M', 'B', '1'};

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  Reader(std::string data, std::string path)
      : data_(std::move(data)), path_(std::move(path)) {}

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return data_.size() - offset_; }

  [[noreturn]] void fail(const std::string& message) const {
    throw ArchiveError(path_ + " @ byte " + std::to_string(offset_) + ": " +
                       message);
  }

  void expect(std::size_t n, const char* what) const {
    if (remaining() < n)
      fail("truncated " + std::string(what) + " (need " + std::to_string(n) +
           " bytes, have " + std::to_string(remaining()) + ")");
  }

  std::uint16_t u16() {
    expect(2, "u16");
    auto v = static_cast<std::uint16_t>(
        static_cast<std::uint8_t>(data_[offset_]) |
        (static_cast<std::uint8_t>(data_[offset_ + 1]) << 8));
    offset_ += 2;
    return v;
  }

  std::uint32_t u32() {
    expect(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[offset_ + i]))
           << (8 * i);
    offset_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string bytes(std::size_t n, const char* what) {
    expect(n, what);
    std::string out = data_.substr(offset_, n);
    offset_ += n;
    return out;
  }

 private:
  std::string data_;
  std::string path_;
  std::size_t offset_ = 0;
};

}  // namespace

void write_archive(const std::filesystem::path& path,
                   std::span<const EmbeddingMatrix> matrices) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(matrices.size()));

  std::size_t dim = matrices.empty() ? 0 : matrices.front().values.cols();
  for (const auto& m : matrices) {
    if (static_cast<std::size_t>(m.values.cols()) != dim)
      throw ArchiveError("record \"" + m.sentence_id +
                         "\": dimension mismatch within one archive");
    if (m.values.rows() < 1)
      throw ArchiveError("record \"" + m.sentence_id + "\": empty matrix");
    if (m.sentence_id.size() > 0xffff)
      throw ArchiveError("record id longer than 65535 bytes");
    put_u16(out, static_cast<std::uint16_t>(m.sentence_id.size()));
    out += m.sentence_id;
    put_u32(out, static_cast<std::uint32_t>(m.values.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.values.cols()));
    for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.values.cols(); ++c) {
        float v = m.values(r, c);
        if (!std::isfinite(v))
          throw ArchiveError("record \"" + m.sentence_id +
                             "\": non-finite value at (" + std::to_string(r) +
                             "," + std::to_string(c) + ")");
        put_f32(out, v);
      }
    }
  }

  std::ofstream file(path, std::ios::binary);
  if (!file) throw ArchiveError("cannot write \"" + path.string() + "\"");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
}

EmbeddingArchive EmbeddingArchive::open(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ArchiveError("cannot open \"" + path.string() + "\"");
  std::string data((std::istreambuf_iterator<char>(file)),
                   std::istreambuf_iterator<char>());
  Reader reader(std::move(data), path.string());

  std::string magic = reader.bytes(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0)
    reader.fail("bad magic \"" + magic + "\"");

  EmbeddingArchive archive;
  std::uint32_t count = reader.u32();
  archive.records_.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    EmbeddingMatrix record;
    std::uint16_t id_len = reader.u16();
    record.sentence_id = reader.bytes(id_len, "record id");
    std::uint32_t n = reader.u32();
    std::uint32_t d = reader.u32();
    if (n == 0 || d == 0) reader.fail("record \"" + record.sentence_id +
                                      "\": zero-sized matrix");
    // Bound the allocation by what the file can actually hold.
    std::uint64_t cells = static_cast<std::uint64_t>(n) * d;
    if (cells > reader.remaining() / 4)
      reader.fail("truncated record \"" + record.sentence_id + "\" (" +
                  std::to_string(cells) + " values declared, " +
                  std::to_string(reader.remaining() / 4) + " available)");
    if (i == 0) {
      archive.dim_ = d;
    } else if (d != archive.dim_) {
      reader.fail("record \"" + record.sentence_id + "\": dimension " +
                  std::to_string(d) + " differs from archive dimension " +
                  std::to_string(archive.dim_));
    }
    record.values.resize(n, d);
    for (std::uint32_t r = 0; r < n; ++r) {
      for (std::uint32_t c = 0; c < d; ++c) {
        float v = reader.f32();
        if (!std::isfinite(v))
          reader.fail("record \"" + record.sentence_id +
                      "\": non-finite value at (" + std::to_string(r) + "," +
                      std::to_string(c) + ")");
        record.values(r, c) = v;
      }
    }
    if (!archive.index_.emplace(record.sentence_id, archive.records_.size())
             .second) {
      reader.fail("duplicate sentence id \"" + record.sentence_id + "\"");
    }
    archive.records_.push_back(std::move(record));
  }
  if (reader.remaining() != 0)
    reader.fail(std::to_string(reader.remaining()) + " trailing bytes");
  return archive;
}

const EmbeddingMatrix* EmbeddingArchive::find(std::string_view sentence_id) const {
  auto it = index_.find(std::string(sentence_id));
  return it == index_.end() ? nullptr : &records_[it->second];
}

}  // namespace evparse
