#pragma once

#include <cstring>
#include <string>
#include <variant>
#include <vector>

#include "skiff/common.hpp"

namespace skiff {
namespace wire {

// Frame layout: [length: u32 LE, payload bytes excluding this header]
// [msg_type: u8] [payload]. All integers fixed-width little-endian,
// floats IEEE-754 binary64 little-endian, strings u32-length-prefixed.

enum MsgType : std::uint8_t {
  kGetReq = 0x01,
  kGetResp = 0x02,
  kInc = 0x03,
  kPut = 0x04,
  kClockCommit = 0x05,
  kDecision = 0x10,
  kPartial = 0x11,
  kPullDone = 0x12,
  kHello = 0x20,
  kShutdown = 0x21,
};

constexpr std::uint8_t kProtocolVersion = 1;

enum class Role : std::uint8_t { kWorker = 0, kScheduler = 1, kServer = 2 };

struct GetReq {
  std::string table;
  std::uint64_t row = 0;
  std::uint32_t reader = 0;
  bool operator==(const GetReq&) const = default;
};

struct GetResp {
  std::vector<double> values;
  bool operator==(const GetResp&) const = default;
};

struct Inc {
  std::string table;
  std::uint32_t producer = 0;
  std::int64_t timestamp = 0;
  struct Entry {
    std::uint64_t row;
    std::uint32_t col;
    double delta;
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries;
  bool operator==(const Inc&) const = default;
};

struct Put {
  std::string table;
  std::uint32_t writer = 0;
  std::int64_t timestamp = 0;
  std::uint64_t row = 0;
  std::uint32_t col = 0;
  double value = 0.0;
  bool operator==(const Put&) const = default;
};

struct ClockCommit {
  std::uint32_t worker = 0;
  std::uint64_t clock = 0;
  bool operator==(const ClockCommit&) const = default;
};

struct Decision {
  std::uint64_t clock = 0;
  std::uint32_t degree = 0;
  std::vector<std::pair<std::uint32_t, std::vector<std::uint64_t>>> assignments;
  bool operator==(const Decision&) const = default;
};

struct Partial {
  std::uint64_t clock = 0;
  std::uint32_t worker = 0;
  std::vector<std::uint8_t> payload;
  bool operator==(const Partial&) const = default;
};

struct PullDone {
  std::uint64_t clock = 0;
  bool operator==(const PullDone&) const = default;
};

struct Hello {
  std::uint8_t version = kProtocolVersion;
  Role role = Role::kWorker;
  std::uint32_t id = 0;
  bool operator==(const Hello&) const = default;
};

struct Shutdown {
  bool operator==(const Shutdown&) const = default;
};

using Message = std::variant<GetReq, GetResp, Inc, Put, ClockCommit, Decision,
                             Partial, PullDone, Hello, Shutdown>;

// --------------------------------------------------------------------------

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(std::uint64_t(v)); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(std::uint32_t(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void bytes(const std::vector<std::uint8_t>& b) {
    u32(std::uint32_t(b.size()));
    out_.insert(out_.end(), b.begin(), b.end());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size, std::size_t base = 0)
      : data_(data), size_(size), base_(base) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int64_t i64() { return std::int64_t(u64()); }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<std::uint8_t> bytes() {
    std::uint32_t n = u32();
    need(n);
    std::vector<std::uint8_t> b(data_ + pos_, data_ + pos_ + n);
    pos_ += n;
    return b;
  }
  std::size_t remaining() const { return size_ - pos_; }
  std::size_t offset() const { return base_ + pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > size_)
      throw ProtocolError("truncated payload", base_ + pos_);
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

// --------------------------------------------------------------------------

inline std::uint8_t msg_type_of(const Message& m) {
  struct V {
    std::uint8_t operator()(const GetReq&) { return kGetReq; }
    std::uint8_t operator()(const GetResp&) { return kGetResp; }
    std::uint8_t operator()(const Inc&) { return kInc; }
    std::uint8_t operator()(const Put&) { return kPut; }
    std::uint8_t operator()(const ClockCommit&) { return kClockCommit; }
    std::uint8_t operator()(const Decision&) { return kDecision; }
    std::uint8_t operator()(const Partial&) { return kPartial; }
    std::uint8_t operator()(const PullDone&) { return kPullDone; }
    std::uint8_t operator()(const Hello&) { return kHello; }
    std::uint8_t operator()(const Shutdown&) { return kShutdown; }
  };
  return std::visit(V{}, m);
}

inline void encode_payload(const Message& m, ByteWriter& w) {
  struct V {
    ByteWriter& w;
    void operator()(const GetReq& x) {
      w.str(x.table);
      w.u64(x.row);
      w.u32(x.reader);
    }
    void operator()(const GetResp& x) {
      w.u32(std::uint32_t(x.values.size()));
      for (double v : x.values) w.f64(v);
    }
    void operator()(const Inc& x) {
      w.str(x.table);
      w.u32(x.producer);
      w.i64(x.timestamp);
      w.u32(std::uint32_t(x.entries.size()));
      for (const auto& e : x.entries) {
        w.u64(e.row);
        w.u32(e.col);
        w.f64(e.delta);
      }
    }
    void operator()(const Put& x) {
      w.str(x.table);
      w.u32(x.writer);
      w.i64(x.timestamp);
      w.u64(x.row);
      w.u32(x.col);
      w.f64(x.value);
    }
    void operator()(const ClockCommit& x) {
      w.u32(x.worker);
      w.u64(x.clock);
    }
    void operator()(const Decision& x) {
      w.u64(x.clock);
      w.u32(x.degree);
      w.u32(std::uint32_t(x.assignments.size()));
      for (const auto& [worker, idxs] : x.assignments) {
        w.u32(worker);
        w.u32(std::uint32_t(idxs.size()));
        for (std::uint64_t j : idxs) w.u64(j);
      }
    }
    void operator()(const Partial& x) {
      w.u64(x.clock);
      w.u32(x.worker);
      w.bytes(x.payload);
    }
    void operator()(const PullDone& x) { w.u64(x.clock); }
    void operator()(const Hello& x) {
      w.u8(x.version);
      w.u8(std::uint8_t(x.role));
      w.u32(x.id);
    }
    void operator()(const Shutdown&) {}
  };
  std::visit(V{w}, m);
}

// Full frame: header (length + type) followed by the payload.
inline std::vector<std::uint8_t> encode(const Message& m) {
  ByteWriter payload;
  encode_payload(m, payload);
  std::vector<std::uint8_t> body = payload.take();
  ByteWriter frame;
  frame.u32(std::uint32_t(body.size()));
  frame.u8(msg_type_of(m));
  std::vector<std::uint8_t> out = frame.take();
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

inline Message decode_payload(std::uint8_t type, ByteReader& r) {
  switch (type) {
    case kGetReq: {
      GetReq x;
      x.table = r.str();
      x.row = r.u64();
      x.reader = r.u32();
      return x;
    }
    case kGetResp: {
      GetResp x;
      std::uint32_t n = r.u32();
      x.values.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) x.values.push_back(r.f64());
      return x;
    }
    case kInc: {
      Inc x;
      x.table = r.str();
      x.producer = r.u32();
      x.timestamp = r.i64();
      std::uint32_t n = r.u32();
      x.entries.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        Inc::Entry e;
        e.row = r.u64();
        e.col = r.u32();
        e.delta = r.f64();
        x.entries.push_back(e);
      }
      return x;
    }
    case kPut: {
      Put x;
      x.table = r.str();
      x.writer = r.u32();
      x.timestamp = r.i64();
      x.row = r.u64();
      x.col = r.u32();
      x.value = r.f64();
      return x;
    }
    case kClockCommit: {
      ClockCommit x;
      x.worker = r.u32();
      x.clock = r.u64();
      return x;
    }
    case kDecision: {
      Decision x;
      x.clock = r.u64();
      x.degree = r.u32();
      std::uint32_t n = r.u32();
      x.assignments.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        std::uint32_t worker = r.u32();
        std::uint32_t m = r.u32();
        std::vector<std::uint64_t> idxs;
        idxs.reserve(m);
        for (std::uint32_t j = 0; j < m; ++j) idxs.push_back(r.u64());
        x.assignments.emplace_back(worker, std::move(idxs));
      }
      return x;
    }
    case kPartial: {
      Partial x;
      x.clock = r.u64();
      x.worker = r.u32();
      x.payload = r.bytes();
      return x;
    }
    case kPullDone: {
      PullDone x;
      x.clock = r.u64();
      return x;
    }
    case kHello: {
      Hello x;
      x.version = r.u8();
      x.role = Role(r.u8());
      x.id = r.u32();
      return x;
    }
    case kShutdown:
      return Shutdown{};
    default:
      throw ProtocolError("unknown msg_type " + std::to_string(int(type)),
                          r.offset());
  }
}

// Decodes one frame from `data`; sets `consumed` to the frame size.
// Throws ProtocolError (with byte offset) on truncation, unknown type, or
// declared-length mismatch.
inline Message decode(const std::uint8_t* data, std::size_t size,
                      std::size_t* consumed = nullptr) {
  if (size < 5) throw ProtocolError("truncated frame header", size);
  ByteReader header(data, 5);
  std::uint32_t length = header.u32();
  std::uint8_t type = header.u8();
  if (5 + std::size_t(length) > size)
    throw ProtocolError("frame declares " + std::to_string(length) +
                            " payload bytes, only " + std::to_string(size - 5) +
                            " available",
                        5);
  ByteReader payload(data + 5, length, 5);
  Message m = decode_payload(type, payload);
  if (payload.remaining() != 0)
    throw ProtocolError("frame length mismatch: " +
                            std::to_string(payload.remaining()) +
                            " trailing bytes",
                        payload.offset());
  if (consumed) *consumed = 5 + length;
  return m;
}

inline Message decode(const std::vector<std::uint8_t>& data,
                      std::size_t* consumed = nullptr) {
  return decode(data.data(), data.size(), consumed);
}

}  // namespace wire
}  // namespace skiff
