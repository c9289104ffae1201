#pragma once

// Versioned little-endian parameter checkpoints.
//
//   offset  size  field
//   0       8     magic "RDRLCKPT"
//   8       4     u32 format version (currently 1)
//   12      4     u32 metadata length L (bytes)
//   16      L     metadata, UTF-8 (JSON text)
//   ...     4     u32 block count B
//   then B blocks, each:
//           4     u32 name length N
//           N     name, UTF-8
//           8     u64 architecture hash (MlpSpec::hash, or 0 for raw scalars)
//           8     u64 scalar count C
//           8*C   f64 values, IEEE-754 little-endian

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rdrl {

inline constexpr char kCheckpointMagic[8] = {'R', 'D', 'R', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBlock {
  std::string name;
  std::uint64_t spec_hash = 0;
  std::vector<double> values;
};

struct Checkpoint {
  std::string metadata;
  std::vector<CheckpointBlock> blocks;

  /// Throws InvalidArgument when no block has this name.
  const CheckpointBlock& block(const std::string& name) const;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rdrl
