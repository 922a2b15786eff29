#pragma once

// Byte-level delta codec.
//
// A delta is a header (4-byte BE target length) followed by a sequence of ops:
//   0x01 COPY   offset (4-byte BE) length (4-byte BE)   bytes from the base
//   0x02 INSERT length (4-byte BE) <length bytes>       literal bytes
//
// Encoding is greedy: the target is scanned left to right, long common
// substrings with the base become COPY ops (found via an 8-byte seed index
// over the base, extended in both directions), everything else becomes
// INSERT runs. Offsets are 4 bytes, so bases are capped at 4 GiB.
//
// Codecs are registrable as (compress, decompress) pairs; "builtin" is the
// pair below. decompress(base, compress(base, target)) == target for every
// input — the suite checks this as a property.

#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "common.hpp"

namespace vstore {

namespace delta_detail {

constexpr std::size_t kSeedSize = 8;
constexpr std::size_t kMinMatch = 16;
constexpr std::size_t kMaxBucket = 16;
constexpr std::uint8_t kOpCopy = 0x01;
constexpr std::uint8_t kOpInsert = 0x02;

inline std::uint64_t load_seed(const char* p) {
  std::uint64_t v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

inline void emit_copy(std::string& out, std::uint32_t off, std::uint32_t len) {
  out.push_back(static_cast<char>(kOpCopy));
  put_u32be(out, off);
  put_u32be(out, len);
}

inline void emit_insert(std::string& out, std::string_view bytes) {
  if (bytes.empty()) return;
  out.push_back(static_cast<char>(kOpInsert));
  put_lp(out, bytes);
}

}  // namespace delta_detail

inline Bytes encode_delta(std::string_view base, std::string_view target) {
  using namespace delta_detail;
  Bytes out;
  put_u32be(out, static_cast<std::uint32_t>(target.size()));

  if (base.size() < kSeedSize || target.size() < kMinMatch) {
    emit_insert(out, target);
    return out;
  }

  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> index;
  index.reserve(base.size());
  for (std::size_t i = 0; i + kSeedSize <= base.size(); ++i) {
    auto& bucket = index[load_seed(base.data() + i)];
    if (bucket.size() < kMaxBucket) bucket.push_back(static_cast<std::uint32_t>(i));
  }

  std::size_t j = 0;
  std::size_t insert_start = 0;
  while (j + kSeedSize <= target.size()) {
    auto it = index.find(load_seed(target.data() + j));
    if (it != index.end()) {
      std::size_t best_len = 0, best_pos = 0;
      for (std::uint32_t pos : it->second) {
        std::size_t len = 0;
        while (pos + len < base.size() && j + len < target.size() &&
               base[pos + len] == target[j + len])
          ++len;
        if (len > best_len) {
          best_len = len;
          best_pos = pos;
        }
      }
      if (best_len >= kMinMatch) {
        // grow the match backwards into the pending literal run
        while (best_pos > 0 && j > insert_start && base[best_pos - 1] == target[j - 1]) {
          --best_pos;
          --j;
          ++best_len;
        }
        emit_insert(out, target.substr(insert_start, j - insert_start));
        emit_copy(out, static_cast<std::uint32_t>(best_pos),
                  static_cast<std::uint32_t>(best_len));
        j += best_len;
        insert_start = j;
        continue;
      }
    }
    ++j;
  }
  emit_insert(out, target.substr(insert_start));
  return out;
}

inline Result<Bytes> decode_delta(std::string_view base, std::string_view delta) {
  using namespace delta_detail;
  try {
    ByteReader r(delta);
    std::uint32_t target_len = r.read_u32();
    Bytes out;
    out.reserve(target_len);
    while (!r.done()) {
      std::uint8_t op = r.read_u8();
      if (op == kOpCopy) {
        std::uint64_t off = r.read_u32();
        std::uint64_t len = r.read_u32();
        if (off + len > base.size())
          return {ErrorCode::kCorruptDelta, "copy beyond base"};
        out.append(base.data() + off, len);
      } else if (op == kOpInsert) {
        auto bytes = r.read_lp();
        out.append(bytes.data(), bytes.size());
      } else {
        return {ErrorCode::kCorruptDelta, "unknown delta op"};
      }
      if (out.size() > target_len) return {ErrorCode::kCorruptDelta, "overlong output"};
    }
    if (out.size() != target_len) return {ErrorCode::kCorruptDelta, "length mismatch"};
    return out;
  } catch (const std::out_of_range&) {
    return {ErrorCode::kCorruptDelta, "truncated delta"};
  }
}

// ------------------------------------------------------------------ registry

struct DeltaCodec {
  std::function<Bytes(std::string_view base, std::string_view target)> compress;
  std::function<Result<Bytes>(std::string_view base, std::string_view delta)> decompress;
};

inline constexpr const char* kBuiltinCodec = "builtin";

class CodecRegistry {
 public:
  CodecRegistry() {
    codecs_[kBuiltinCodec] = DeltaCodec{
        [](std::string_view b, std::string_view t) { return encode_delta(b, t); },
        [](std::string_view b, std::string_view d) { return decode_delta(b, d); }};
  }

  void register_codec(const std::string& name, DeltaCodec codec) {
    codecs_[name] = std::move(codec);
  }

  const DeltaCodec* find(const std::string& name) const {
    auto it = codecs_.find(name.empty() ? kBuiltinCodec : name);
    return it == codecs_.end() ? nullptr : &it->second;
  }

 private:
  std::map<std::string, DeltaCodec> codecs_;
};

}  // namespace vstore
