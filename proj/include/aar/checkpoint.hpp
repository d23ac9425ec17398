#pragma once

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "aar/json_util.hpp"
#include "aar/trainer.hpp"

namespace aar::checkpoint {

inline constexpr char kMagic[4] = {'A', 'A', 'R', 'C'};
inline constexpr std::uint32_t kVersion = 1;

// Layout (all integers little-endian):
//   magic[4] u32 version u64 config_hash u64 file_length
//   u32 meta_length u32 meta_crc  meta (JSON, UTF-8)
//   u32 blob_count  u32 dir_crc   directory entries:
//       u16 name_length, name, u8 rank, u64 dims[rank], u64 offset, u64 length, u32 crc32
//   payloads: f32 values
struct Checkpoint {
  std::uint64_t config_hash = 0;
  json config;  // the run configuration the hash was computed over
  trainer::TrainState state;
};

namespace detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
  }
  std::vector<std::uint8_t> buf;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t pos = 0) : buf_(b), pos_(pos) {}
  template <class U>
  U le() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw IntegrityError("checkpoint truncated at byte " + std::to_string(pos_));
  }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_;
};

inline std::uint32_t crc(const std::uint8_t* p, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

struct Blob {
  std::string name;
  const numeric::Tensor* tensor;
};

inline std::vector<std::uint8_t> encode_floats(const numeric::Tensor& t) {
  std::vector<std::uint8_t> out(t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(t[i]);
    for (int k = 0; k < 4; ++k) out[4 * i + k] = static_cast<std::uint8_t>(u >> (8 * k));
  }
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const Checkpoint& ck) {
  const auto& st = ck.state;
  if (st.adam.m.size() != st.params.size() || st.adam.v.size() != st.params.size())
    throw ContractError("checkpoint: optimizer state does not match parameters");
  json meta{{"config", ck.config},
            {"epoch", st.epoch},
            {"step", st.step},
            {"adam", {{"t", st.adam.t}, {"beta1", st.adam.beta1}, {"beta2", st.adam.beta2}, {"eps", st.adam.eps}}},
            {"rng", {st.rng[0], st.rng[1], st.rng[2], st.rng[3]}},
            {"train_classes", st.train_classes}};
  const std::string meta_s = meta.dump();

  std::vector<detail::Blob> blobs;
  for (std::size_t i = 0; i < st.params.size(); ++i) blobs.push_back({st.params.names()[i], &st.params.tensors()[i]});
  for (std::size_t i = 0; i < st.params.size(); ++i) blobs.push_back({"adam.m." + st.params.names()[i], &st.adam.m[i]});
  for (std::size_t i = 0; i < st.params.size(); ++i) blobs.push_back({"adam.v." + st.params.names()[i], &st.adam.v[i]});

  std::vector<std::vector<std::uint8_t>> payloads;
  for (const auto& b : blobs) payloads.push_back(detail::encode_floats(*b.tensor));

  std::size_t dir_size = 0;
  for (const auto& b : blobs) dir_size += 2 + b.name.size() + 1 + 8 * b.tensor->rank() + 8 + 8 + 4;
  const std::size_t header = 4 + 4 + 8 + 8 + 4 + 4 + meta_s.size() + 4 + 4;
  std::size_t offset = header + dir_size, total = offset;
  for (const auto& p : payloads) total += p.size();

  detail::Writer dir;
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const auto& b = blobs[i];
    dir.le<std::uint16_t>(static_cast<std::uint16_t>(b.name.size()));
    dir.bytes(b.name.data(), b.name.size());
    dir.le<std::uint8_t>(static_cast<std::uint8_t>(b.tensor->rank()));
    for (auto d : b.tensor->shape()) dir.le<std::uint64_t>(d);
    dir.le<std::uint64_t>(offset);
    dir.le<std::uint64_t>(payloads[i].size());
    dir.le<std::uint32_t>(detail::crc(payloads[i].data(), payloads[i].size()));
    offset += payloads[i].size();
  }

  detail::Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kVersion);
  w.le<std::uint64_t>(ck.config_hash);
  w.le<std::uint64_t>(total);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(meta_s.size()));
  w.le<std::uint32_t>(detail::crc(reinterpret_cast<const std::uint8_t*>(meta_s.data()), meta_s.size()));
  w.bytes(meta_s.data(), meta_s.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(blobs.size()));
  w.le<std::uint32_t>(detail::crc(dir.buf.data(), dir.buf.size()));
  w.bytes(dir.buf.data(), dir.buf.size());
  for (const auto& p : payloads) w.bytes(p.data(), p.size());
  return w.buf;
}

/// Parses a checkpoint image. Version or expected-hash mismatch raises
/// IncompatibleError; length, checksum or structure failures raise IntegrityError.
inline Checkpoint deserialize(const std::vector<std::uint8_t>& buf, std::optional<std::uint64_t> expected_hash = std::nullopt) {
  detail::Reader r(buf);
  if (r.str(4) != std::string(kMagic, 4)) throw IntegrityError("not a checkpoint (bad magic)");
  const auto version = r.le<std::uint32_t>();
  if (version != kVersion)
    throw IncompatibleError("checkpoint format version " + std::to_string(version) + ", expected " + std::to_string(kVersion));
  Checkpoint ck;
  ck.config_hash = r.le<std::uint64_t>();
  if (expected_hash && *expected_hash != ck.config_hash)
    throw IncompatibleError("checkpoint config hash " + hex64(ck.config_hash) + " does not match " + hex64(*expected_hash));
  const auto total = r.le<std::uint64_t>();
  if (total != buf.size())
    throw IntegrityError("checkpoint length " + std::to_string(buf.size()) + " does not match header " + std::to_string(total));

  const auto meta_len = r.le<std::uint32_t>();
  const auto meta_crc = r.le<std::uint32_t>();
  const std::size_t meta_pos = r.pos();
  const std::string meta_s = r.str(meta_len);
  if (detail::crc(buf.data() + meta_pos, meta_len) != meta_crc) throw IntegrityError("checkpoint metadata checksum mismatch");
  const json meta = json::parse(meta_s, nullptr, false);
  if (meta.is_discarded()) throw IntegrityError("checkpoint metadata is not JSON");
  ck.config = meta.at("config");
  if (canonical_hash(ck.config) != ck.config_hash) throw IntegrityError("checkpoint config hash does not match its config");

  auto& st = ck.state;
  st.epoch = meta.at("epoch").get<std::size_t>();
  st.step = meta.at("step").get<std::size_t>();
  for (int i = 0; i < 4; ++i) st.rng[i] = meta.at("rng").at(static_cast<std::size_t>(i)).get<std::uint64_t>();
  st.train_classes = meta.at("train_classes").get<std::vector<int>>();

  const auto count = r.le<std::uint32_t>();
  const auto dir_crc = r.le<std::uint32_t>();
  const std::size_t dir_pos = r.pos();
  struct Entry {
    std::string name;
    numeric::Shape shape;
    std::uint64_t offset, length;
    std::uint32_t crc;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str(r.le<std::uint16_t>());
    const auto rank = r.le<std::uint8_t>();
    for (int d = 0; d < rank; ++d) e.shape.push_back(static_cast<std::size_t>(r.le<std::uint64_t>()));
    e.offset = r.le<std::uint64_t>();
    e.length = r.le<std::uint64_t>();
    e.crc = r.le<std::uint32_t>();
    entries.push_back(std::move(e));
  }
  if (detail::crc(buf.data() + dir_pos, r.pos() - dir_pos) != dir_crc) throw IntegrityError("checkpoint directory checksum mismatch");
  if (count % 3 != 0) throw IntegrityError("checkpoint blob count is not a multiple of 3");

  std::vector<numeric::Tensor> tensors;
  for (const auto& e : entries) {
    if (e.offset + e.length > buf.size() || e.length != numeric::numel(e.shape) * 4)
      throw IntegrityError("checkpoint blob " + e.name + " out of bounds");
    if (detail::crc(buf.data() + e.offset, e.length) != e.crc) throw IntegrityError("checksum mismatch in blob " + e.name);
    std::vector<float> vals(numeric::numel(e.shape));
    for (std::size_t i = 0; i < vals.size(); ++i) {
      std::uint32_t u = 0;
      for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(buf[e.offset + 4 * i + k]) << (8 * k);
      vals[i] = std::bit_cast<float>(u);
    }
    tensors.emplace_back(e.shape, std::move(vals));
  }
  const std::size_t n = count / 3;
  for (std::size_t i = 0; i < n; ++i) {
    if (entries[n + i].name != "adam.m." + entries[i].name || entries[2 * n + i].name != "adam.v." + entries[i].name)
      throw IntegrityError("checkpoint optimizer blobs out of order");
    st.params.add(entries[i].name, std::move(tensors[i]));
    st.adam.m.push_back(std::move(tensors[n + i]));
    st.adam.v.push_back(std::move(tensors[2 * n + i]));
  }
  const auto& adam = meta.at("adam");
  st.adam.t = adam.at("t").get<long>();
  st.adam.beta1 = adam.at("beta1").get<float>();
  st.adam.beta2 = adam.at("beta2").get<float>();
  st.adam.eps = adam.at("eps").get<float>();
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = serialize(ck);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash = std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize(buf, expected_hash);
}

}  // namespace aar::checkpoint
