#pragma once

// Version identity for the immutable DAG.
//
// A VersionId is the triple (h, l, n):
//   h  32-byte SHA-256 digest binding key, parent identities and value
//   l  depth in the DAG (ROOT = 0, every derived version = parent depth + 1;
//      a merge sits at max(parent depths) + 1)
//   n  node tag: opaque routing salt chosen at placement time; deliberately
//      excluded from h so the same logical write relocated by a redirect
//      keeps the same digest
//
// Digest preimages use a canonical injective encoding: every field carries a
// 4-byte big-endian length prefix, fields appear in operation order, and l is
// encoded as an 8-byte big-endian integer field. ROOT's h encodes as the
// empty field.
//
// Wire form of a VersionId is fixed width + tag:
//   h (32 bytes) || l (8-byte BE) || n length (4-byte BE) || n
// ROOT is therefore exactly 44 zero bytes.

#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

#include "common.hpp"
#include "sha256.hpp"

namespace vstore {

struct VersionId {
  Digest h{};          // all-zero for ROOT
  std::uint64_t l = 0; // 0 only for ROOT
  std::string n;       // node tag; empty unless placement was redirected

  bool is_root() const { return l == 0; }

  friend bool operator==(const VersionId&, const VersionId&) = default;
};

// Identity ignoring the node tag: h alone pins key, parents, value and depth.
inline bool same_version(const VersionId& a, const VersionId& b) {
  return a.h == b.h && a.l == b.l;
}

// Depth 0 is reserved for ROOT, whose h and n are empty by definition; a
// depth-0 id carrying other bytes is malformed and must never verify.
inline bool well_formed(const VersionId& v) {
  return v.l != 0 || (v.h == Digest{} && v.n.empty());
}

inline const VersionId& root_version() {
  static const VersionId root{};
  return root;
}

inline std::string_view digest_view(const Digest& d) {
  return {reinterpret_cast<const char*>(d.data()), d.size()};
}

inline std::string short_hex(const VersionId& v) { return to_hex(v.h).substr(0, 12); }

// ------------------------------------------------------------- wire form

inline void encode_version(std::string& out, const VersionId& v) {
  out.append(digest_view(v.h));
  put_u64be(out, v.l);
  put_lp(out, v.n);
}

inline std::string encode_version(const VersionId& v) {
  std::string out;
  encode_version(out, v);
  return out;
}

inline VersionId decode_version(ByteReader& r) {
  VersionId v;
  auto h = r.read_raw(32);
  std::memcpy(v.h.data(), h.data(), 32);
  v.l = r.read_u64();
  v.n = std::string(r.read_lp());
  return v;
}

// --------------------------------------------------- canonical digest input

// Append one length-prefixed field.
inline void canonical_field(std::string& out, std::string_view bytes) {
  put_lp(out, bytes);
}

// Depth is a fixed 8-byte big-endian integer field (itself length-prefixed).
inline void canonical_depth(std::string& out, std::uint64_t l) {
  put_u32be(out, 8);
  put_u64be(out, l);
}

// ROOT's digest field is empty; any real version contributes its 32 bytes.
inline void canonical_parent(std::string& out, const VersionId& v) {
  if (v.is_root())
    canonical_field(out, {});
  else
    canonical_field(out, digest_view(v.h));
  canonical_depth(out, v.l);
}

// -------------------------------------------------------------- derivation

// New version for writing value o on top of parent vp under key k. The tag
// names the placement: vp.n for a first attempt, the redirect tag afterwards.
inline VersionId derive_put_version(std::string_view k, const VersionId& vp,
                                    std::string_view o, std::string_view tag) {
  std::string pre;
  canonical_field(pre, k);
  canonical_parent(pre, vp);
  canonical_field(pre, o);
  VersionId v;
  v.h = sha256(pre);
  v.l = vp.l + 1;
  v.n = std::string(tag);
  return v;
}

inline VersionId derive_put_version(std::string_view k, const VersionId& vp,
                                    std::string_view o) {
  return derive_put_version(k, vp, o, vp.n);
}

// Merge version of two existing parents. Parent order is significant: the
// digest binds (v1, v2) in argument order, so merge(a,b) != merge(b,a).
inline Result<VersionId> derive_merge_version(std::string_view k, const VersionId& v1,
                                              const VersionId& v2, std::string_view o,
                                              std::string_view tag) {
  if (v1.is_root() || v2.is_root())
    return {ErrorCode::kBadRequest, "merge parent may not be ROOT"};
  if (same_version(v1, v2))
    return {ErrorCode::kEqualParents, "merge requires two distinct parents"};
  std::string pre;
  canonical_field(pre, k);
  canonical_parent(pre, v1);
  canonical_parent(pre, v2);
  canonical_field(pre, o);
  VersionId v;
  v.h = sha256(pre);
  v.l = std::max(v1.l, v2.l) + 1;
  v.n = std::string(tag);
  return v;
}

inline Result<VersionId> derive_merge_version(std::string_view k, const VersionId& v1,
                                              const VersionId& v2, std::string_view o) {
  return derive_merge_version(k, v1, v2, o, v1.n);
}

struct DigestHash {
  std::size_t operator()(const Digest& d) const {
    std::size_t v;
    std::memcpy(&v, d.data(), sizeof(v));
    return v;
  }
};

}  // namespace vstore
