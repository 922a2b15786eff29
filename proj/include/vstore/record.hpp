#pragma once

// Stored form of one version: the record is immutable once written.
//
// Payload is either the full value or a delta against a base version that is
// itself stored full (deltas never chain). Region accounting charges the
// encoded payload size, so delta records are what make long version chains
// cheap.
//
// verify_record re-derives the version from (key, parents, value) and accepts
// the record only if the stored identity matches: any flip in the value or in
// a parent digest is detected.

#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"
#include "version.hpp"

namespace vstore {

enum class PayloadKind : std::uint8_t { kFull = 0, kDelta = 1 };

struct Payload {
  PayloadKind kind = PayloadKind::kFull;
  Bytes bytes;          // full value, or delta body
  Digest delta_base{};  // h of the base record when kind == kDelta
  std::string codec;    // codec that produced a delta body; empty for full

  std::size_t encoded_size() const { return bytes.size(); }
};

struct NodeRecord {
  std::string key;
  VersionId version;
  std::vector<VersionId> parents;  // 1 entry (put; may be ROOT) or 2 (merge)
  Payload payload;

  bool created_by_merge() const { return parents.size() == 2; }
};

// Re-derive the identity from first principles. The payload must already be
// materialized to the full value (resolve deltas first).
inline bool verify_record(const NodeRecord& r, std::string_view full_value) {
  if (r.version.is_root()) return false;
  for (const auto& p : r.parents)
    if (!well_formed(p)) return false;
  if (r.parents.size() == 1) {
    VersionId expect = derive_put_version(r.key, r.parents[0], full_value, r.version.n);
    return expect.h == r.version.h && expect.l == r.version.l;
  }
  if (r.parents.size() == 2) {
    auto expect =
        derive_merge_version(r.key, r.parents[0], r.parents[1], full_value, r.version.n);
    if (!expect) return false;
    return expect->h == r.version.h && expect->l == r.version.l;
  }
  return false;
}

inline bool verify_record(const NodeRecord& r) {
  if (r.payload.kind != PayloadKind::kFull) return false;
  return verify_record(r, r.payload.bytes);
}

// Wire form used when records travel between servers or to clients: identity,
// parents, and the materialized full value. Local payload encoding (delta vs
// full) never leaves the node that chose it.
inline void encode_record(std::string& out, const NodeRecord& r,
                          std::string_view full_value) {
  put_lp(out, r.key);
  encode_version(out, r.version);
  out.push_back(static_cast<char>(r.parents.size()));
  for (const auto& p : r.parents) encode_version(out, p);
  put_lp(out, full_value);
}

inline NodeRecord decode_record(ByteReader& in) {
  NodeRecord r;
  r.key = std::string(in.read_lp());
  r.version = decode_version(in);
  auto n_parents = in.read_u8();
  if (n_parents > 2) throw std::out_of_range("record parent count");
  for (std::uint8_t i = 0; i < n_parents; ++i) r.parents.push_back(decode_version(in));
  r.payload.kind = PayloadKind::kFull;
  r.payload.bytes = Bytes(in.read_lp());
  return r;
}

}  // namespace vstore
