#pragma once

// Shared primitives: byte-order helpers, hex, and the Result/Status types
// used across the store, wire protocol and client layers.
//
// All multi-byte integers on disk and on the wire are big-endian.
// Variable-length fields carry a 4-byte big-endian length prefix.

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vstore {

using Bytes = std::string;  // byte strings; values are opaque binary

// ---------------------------------------------------------------- byte order

inline void put_u32be(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

inline void put_u64be(std::string& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8)
    out.push_back(static_cast<char>((v >> shift) & 0xff));
}

inline std::uint32_t get_u32be(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline std::uint64_t get_u64be(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
  return v;
}

// Sequential reader over a byte string; all read_* throw std::out_of_range
// on truncated input so malformed frames surface as one error type.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t read_u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t read_u32() {
    need(4);
    auto v = get_u32be(reinterpret_cast<const unsigned char*>(data_.data()) + pos_);
    pos_ += 4;
    return v;
  }
  std::uint64_t read_u64() {
    need(8);
    auto v = get_u64be(reinterpret_cast<const unsigned char*>(data_.data()) + pos_);
    pos_ += 8;
    return v;
  }
  std::string_view read_raw(std::size_t n) {
    need(n);
    auto v = data_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  // 4-byte BE length prefix + payload
  std::string_view read_lp() { return read_raw(read_u32()); }

  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw std::out_of_range("truncated input");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline void put_lp(std::string& out, std::string_view v) {
  put_u32be(out, static_cast<std::uint32_t>(v.size()));
  out.append(v.data(), v.size());
}

// ----------------------------------------------------------------------- hex

inline std::string to_hex(std::string_view bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xf]);
  }
  return out;
}

template <std::size_t N>
std::string to_hex(const std::array<std::uint8_t, N>& a) {
  return to_hex(std::string_view(reinterpret_cast<const char*>(a.data()), N));
}

// ------------------------------------------------------------ result/status

// Wire status bytes. SUCCESS/REDIRECT/NOTFOUND/DENIED are expected outcomes
// of normal operation; ERROR carries an ErrorCode + message.
enum class Status : std::uint8_t {
  kSuccess = 0x00,
  kRedirect = 0x01,
  kNotFound = 0x02,
  kDenied = 0x03,
  kError = 0x04,
};

enum class ErrorCode : std::uint8_t {
  kNone = 0,
  kEqualParents = 1,
  kRegionExhaustedNoAlternative = 2,
  kBelowUsage = 3,
  kQuorumUnavailable = 4,
  kNotFoundEverywhere = 5,
  kNotOwner = 6,
  kNoCommonAncestor = 7,
  kUnknownMergeFunction = 8,
  kTxnAborted = 9,
  kUnknownTid = 10,
  kAlreadyTerminal = 11,
  kKeyUninitialized = 12,
  kCorruptDelta = 13,
  kConfigInvalid = 14,
  kIOFailure = 15,
  kBadRequest = 16,
  kConflict = 17,
  kNotFound = 18,  // single-node miss; cluster layer may still fall back
  kDenied = 19,
};

inline const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::kNone: return "None";
    case ErrorCode::kEqualParents: return "EqualParents";
    case ErrorCode::kRegionExhaustedNoAlternative: return "RegionExhaustedNoAlternative";
    case ErrorCode::kBelowUsage: return "BelowUsage";
    case ErrorCode::kQuorumUnavailable: return "QuorumUnavailable";
    case ErrorCode::kNotFoundEverywhere: return "NotFoundEverywhere";
    case ErrorCode::kNotOwner: return "NotOwner";
    case ErrorCode::kNoCommonAncestor: return "NoCommonAncestor";
    case ErrorCode::kUnknownMergeFunction: return "UnknownMergeFunction";
    case ErrorCode::kTxnAborted: return "TxnAborted";
    case ErrorCode::kUnknownTid: return "UnknownTid";
    case ErrorCode::kAlreadyTerminal: return "AlreadyTerminal";
    case ErrorCode::kKeyUninitialized: return "KeyUninitialized";
    case ErrorCode::kCorruptDelta: return "CorruptDelta";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kIOFailure: return "IOFailure";
    case ErrorCode::kBadRequest: return "BadRequest";
    case ErrorCode::kConflict: return "Conflict";
    case ErrorCode::kNotFound: return "NotFound";
    case ErrorCode::kDenied: return "Denied";
  }
  return "Unknown";
}

// Small expected<T>-style carrier: either a value or (ErrorCode, message).
template <class T>
class Result {
 public:
  Result(T value) : value_(std::move(value)) {}  // NOLINT: implicit by design
  Result(ErrorCode code, std::string message)
      : code_(code), message_(std::move(message)) {}

  bool ok() const { return value_.has_value(); }
  explicit operator bool() const { return ok(); }
  ErrorCode code() const { return code_; }
  const std::string& message() const { return message_; }

  T& value() { return *value_; }
  const T& value() const { return *value_; }
  T& operator*() { return *value_; }
  const T& operator*() const { return *value_; }
  T* operator->() { return &*value_; }
  const T* operator->() const { return &*value_; }

 private:
  std::optional<T> value_;
  ErrorCode code_ = ErrorCode::kNone;
  std::string message_;
};

struct Unit {};
using VoidResult = Result<Unit>;

inline VoidResult ok_void() { return VoidResult(Unit{}); }

}  // namespace vstore
