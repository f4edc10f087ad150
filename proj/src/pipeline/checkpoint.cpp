// SPDX-License-Identifier: Apache-2.0
#include "mslb/pipeline/checkpoint.h"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mslb/error.h"

namespace mslb::pipeline {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const Record* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

std::vector<Record> to_records(const std::vector<num::NamedTensor<float>>& params) {
  std::vector<Record> out;
  for (const auto& [name, t] : params) {
    Record r;
    r.name = name;
    for (const auto e : t.shape()) r.extents.push_back(static_cast<std::uint64_t>(e));
    r.values.assign(t.value().data(), t.value().data() + t.value().size());
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Cursor {
 public:
  explicit Cursor(const std::string& s) : s_(s) {}
  template <typename T>
  T get(const std::string& what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n, const std::string& what) {
    need(n, what);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n, const std::string& what) {
    if (s_.size() - pos_ < n) throw FormatError("checkpoint truncated while reading " + what);
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

constexpr std::uint64_t kMaxElements = 1ULL << 32;

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out = "MSLB";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.config_json.size()));
  out += ckpt.config_json;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    std::uint64_t count = 1;
    for (auto e : r.extents) count *= e;
    if (count != r.values.size()) throw ShapeError("record " + r.name + " has extents that disagree with its values");
    const std::size_t start = out.size();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.extents.size()));
    for (auto e : r.extents) put<std::uint64_t>(out, e);
    out.append(reinterpret_cast<const char*>(r.values.data()), r.values.size() * sizeof(float));
    put<std::uint32_t>(out, crc(out.data() + start, out.size() - start));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Cursor c(bytes);
  if (bytes.size() < 4 || bytes.compare(0, 4, "MSLB") != 0) throw FormatError("bad magic (not an MSLB checkpoint)");
  c.bytes(4, "magic");
  const auto version = c.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  const auto cfg_len = c.get<std::uint32_t>("config length");
  ck.config_json = c.bytes(cfg_len, "config");
  const auto n = c.get<std::uint32_t>("record count");
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string label = "record #" + std::to_string(i);
    const std::size_t start = c.pos();
    Record r;
    const auto name_len = c.get<std::uint32_t>(label + " name length");
    r.name = c.bytes(name_len, label + " name");
    const std::string rl = "record '" + r.name + "'";
    const auto rank = c.get<std::uint32_t>(rl + " rank");
    if (rank > 8) throw FormatError(rl + " has implausible rank " + std::to_string(rank));
    std::uint64_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto e = c.get<std::uint64_t>(rl + " extents");
      r.extents.push_back(e);
      if (e > kMaxElements || count * std::max<std::uint64_t>(e, 1) > kMaxElements) {
        throw FormatError(rl + " has implausible extents");
      }
      count *= e;
    }
    const std::string payload = c.bytes(count * sizeof(float), rl + " values (shape mismatch or truncation)");
    r.values.resize(count);
    std::memcpy(r.values.data(), payload.data(), payload.size());
    const std::size_t end = c.pos();
    const auto stored = c.get<std::uint32_t>(rl + " checksum");
    if (stored != crc(bytes.data() + start, end - start)) throw FormatError(rl + " failed its checksum");
    ck.records.push_back(std::move(r));
  }
  if (!c.done()) throw FormatError("trailing bytes after the last record");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DependencyError("checkpoint " + path.string() + " not found");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void assign_parameters(const Checkpoint& ckpt, const std::vector<num::NamedTensor<float>>& params) {
  for (const auto& [name, t] : params) {
    const Record* r = ckpt.find(name);
    if (!r) throw FormatError("checkpoint has no record '" + name + "'");
    const auto shape = t.shape();
    bool ok = r->extents.size() == shape.size();
    for (std::size_t k = 0; ok && k < shape.size(); ++k) ok = r->extents[k] == static_cast<std::uint64_t>(shape[k]);
    if (!ok) throw FormatError("record '" + name + "' has extents that do not match the model");
    num::Tensor<float> dst = t;
    std::memcpy(dst.mutable_value().data(), r->values.data(), r->values.size() * sizeof(float));
  }
}

}  // namespace mslb::pipeline
