#pragma once

// Binary wire protocol, shared verbatim by the TCP stack and the in-process
// simulator.
//
// Frame:    length (4-byte BE, counts opcode + body) || opcode (1) || body
// Request:  userId (length-prefixed) || op-specific fields
// Response: status (1) || status-specific fields
//
// All variable-length fields carry a 4-byte BE length prefix; integers are
// big-endian; VersionIds use their fixed wire form (h || l || tag).
//
// Opcodes and request bodies:
//   0x01 PUT          key, parent version, placement tag, compress flag, value
//   0x02 GET          key, version
//   0x03 MERGE        key, v1, v2, placement tag, compress flag, value
//   0x04 GETPREV      key, version
//   0x05 GETKPREV     key, version, m (u32), flags (u8: 1 local-only,
//                     2 resume-at-version)
//   0x06 SUBSCRIBE    key
//   0x07 POLICY_PUT   key, grantee, count (u32), versions
//   0x08 ADMIN_SET_T  key, capacity (u64)
//   0x09 STATS        key (empty = whole node)
//   0x0A TXN_BEGIN    -
//   0x0B TXN_READ     tid (u64), key
//   0x0C TXN_WRITE    tid (u64), key, value
//   0x0D TXN_COMMIT   tid (u64)
//   0x0E TXN_ABORT    tid (u64)
//   0x0F AV_GET       key
//   0x10 AV_SET       key, version, commit tid (u64), holder tid (u64)
//   0x11 AV_LOCK      key, tid (u64)
//   0x12 AV_UNLOCK    key, tid (u64)
//   0x13 EVENT        server push on a subscribed connection: key, version
//
// Response statuses: 0x00 SUCCESS (op-specific body), 0x01 REDIRECT (tag),
// 0x02 NOTFOUND, 0x03 DENIED, 0x04 ERROR (code u8, message).

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "common.hpp"
#include "version.hpp"

namespace vstore::wire {

enum Opcode : std::uint8_t {
  kPut = 0x01,
  kGet = 0x02,
  kMerge = 0x03,
  kGetPrev = 0x04,
  kGetKPrev = 0x05,
  kSubscribe = 0x06,
  kPolicyPut = 0x07,
  kAdminSetT = 0x08,
  kStats = 0x09,
  kTxnBegin = 0x0A,
  kTxnRead = 0x0B,
  kTxnWrite = 0x0C,
  kTxnCommit = 0x0D,
  kTxnAbort = 0x0E,
  kAvGet = 0x0F,
  kAvSet = 0x10,
  kAvLock = 0x11,
  kAvUnlock = 0x12,
  kEvent = 0x13,
};

// GETKPREV flags
constexpr std::uint8_t kScanLocalOnly = 0x01;  // don't chase remote links
constexpr std::uint8_t kScanResume = 0x02;     // output starts AT the version

struct Frame {
  std::uint8_t opcode = 0;
  std::string body;
};

inline std::string encode_frame(const Frame& f) {
  std::string out;
  put_u32be(out, static_cast<std::uint32_t>(1 + f.body.size()));
  out.push_back(static_cast<char>(f.opcode));
  out += f.body;
  return out;
}

// Incremental decode from a byte buffer: returns a frame and sets consumed,
// or nullopt when the buffer does not yet hold a complete frame.
inline std::optional<Frame> decode_frame(std::string_view buf, std::size_t& consumed) {
  consumed = 0;
  if (buf.size() < 4) return std::nullopt;
  std::uint32_t len = get_u32be(reinterpret_cast<const unsigned char*>(buf.data()));
  if (len < 1) throw std::out_of_range("frame without opcode");
  if (buf.size() < 4 + std::size_t(len)) return std::nullopt;
  Frame f;
  f.opcode = static_cast<std::uint8_t>(buf[4]);
  f.body.assign(buf.data() + 5, len - 1);
  consumed = 4 + len;
  return f;
}

// --------------------------------------------------------- request building

inline Frame request(std::uint8_t opcode, std::string_view user, std::string_view rest) {
  Frame f;
  f.opcode = opcode;
  put_lp(f.body, user);
  f.body += rest;
  return f;
}

// -------------------------------------------------------- response building

inline Frame response(std::uint8_t opcode, Status status, std::string_view rest = {}) {
  Frame f;
  f.opcode = opcode;
  f.body.push_back(static_cast<char>(status));
  f.body += rest;
  return f;
}

inline Frame error_response(std::uint8_t opcode, ErrorCode code, std::string_view msg) {
  Frame f;
  f.opcode = opcode;
  f.body.push_back(static_cast<char>(Status::kError));
  f.body.push_back(static_cast<char>(code));
  put_lp(f.body, msg);
  return f;
}

inline Frame redirect_response(std::uint8_t opcode, std::string_view tag) {
  Frame f;
  f.opcode = opcode;
  f.body.push_back(static_cast<char>(Status::kRedirect));
  put_lp(f.body, tag);
  return f;
}

// ---------------------------------------------------------- response parsing

struct Reply {
  Status status = Status::kError;
  ErrorCode code = ErrorCode::kNone;     // when status == kError
  std::string message;                   // when status == kError
  std::string redirect_tag;              // when status == kRedirect
  std::string payload;                   // SUCCESS body after the status byte
};

inline Reply parse_reply(const Frame& f) {
  Reply r;
  try {
    ByteReader in(f.body);
    r.status = static_cast<Status>(in.read_u8());
    switch (r.status) {
      case Status::kSuccess:
        r.payload = std::string(in.read_raw(in.remaining()));
        break;
      case Status::kRedirect:
        r.redirect_tag = std::string(in.read_lp());
        break;
      case Status::kNotFound:
      case Status::kDenied:
        break;
      case Status::kError:
        r.code = static_cast<ErrorCode>(in.read_u8());
        r.message = std::string(in.read_lp());
        break;
      default:
        r.status = Status::kError;
        r.code = ErrorCode::kBadRequest;
        r.message = "unknown status byte";
    }
  } catch (const std::out_of_range&) {
    r.status = Status::kError;
    r.code = ErrorCode::kBadRequest;
    r.message = "truncated reply";
  }
  return r;
}

}  // namespace vstore::wire
