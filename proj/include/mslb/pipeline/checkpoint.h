// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container:
//   "MSLB" | u32 version | u32 config length | config JSON | u32 record count
//   per record: u32 name length | name | u32 rank | rank x u64 extents |
//               f32 values (little endian) | u32 CRC-32 of the record bytes
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mslb/numerics/tensor.h"

namespace mslb::pipeline {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Record {
  std::string name;
  std::vector<std::uint64_t> extents;
  std::vector<float> values;

  int rank() const { return static_cast<int>(extents.size()); }
  bool operator==(const Record&) const = default;
};

struct Checkpoint {
  std::string config_json;
  std::vector<Record> records;

  const Record* find(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

std::vector<Record> to_records(const std::vector<num::NamedTensor<float>>& params);

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// FormatError on bad magic, unknown version, truncation, shape mismatch, or
/// checksum failure, naming the offending record.
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every record named like a parameter into it; FormatError on a
/// missing record or an extent mismatch.
void assign_parameters(const Checkpoint& ckpt, const std::vector<num::NamedTensor<float>>& params);

}  // namespace mslb::pipeline
