#pragma once

#include <filesystem>

#include "evparse/parser.hpp"

namespace evparse {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Single-file model archive:
//   magic "EVPCKPT1" (8 bytes)
//   header length u32, header JSON (config echo, encoder config, vocabulary,
//     seed, epoch)
//   tensor count u32
//   per tensor: name length u16, name, rows u32, cols u32,
//     rows*cols float32 row-major
// All integers and floats little-endian.
void save_checkpoint(const std::filesystem::path& path, ParserModel& model,
                     std::size_t epoch);

struct LoadedCheckpoint {
  ParserModel model;
  std::size_t epoch = 0;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace evparse
