#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>

#include "skiff/transport.hpp"

namespace skiff {
namespace wire {

// Framed bidirectional message connection. recv() returns nullopt on a
// clean peer close; a close mid-frame raises ProtocolError.
class Conn {
 public:
  virtual ~Conn() = default;

  void send(const Message& m) {
    std::vector<std::uint8_t> frame = encode(m);
    if (send_tap_) send_tap_(frame);
    std::lock_guard<std::mutex> lk(send_mu_);
    write_all(frame.data(), frame.size());
  }

  std::optional<Message> recv() {
    std::uint8_t header[5];
    if (!read_exact(header, 5, /*allow_eof_at_start=*/true)) return std::nullopt;
    ByteReader hr(header, 5);
    std::uint32_t length = hr.u32();
    std::uint8_t type = hr.u8();
    std::vector<std::uint8_t> payload(length);
    if (length > 0 && !read_exact(payload.data(), length, false))
      throw ProtocolError("connection closed mid-frame", 5);
    ByteReader pr(payload.data(), payload.size(), 5);
    Message m = decode_payload(type, pr);
    if (pr.remaining() != 0)
      throw ProtocolError("frame length mismatch", pr.offset());
    return m;
  }

  virtual void close() = 0;

  // Test hook: observe outgoing frames byte-for-byte.
  void set_send_tap(std::function<void(const std::vector<std::uint8_t>&)> tap) {
    send_tap_ = std::move(tap);
  }

 protected:
  virtual void write_all(const std::uint8_t* data, std::size_t size) = 0;
  // Returns false on EOF before the first byte when allowed; throws on
  // EOF mid-read.
  virtual bool read_exact(std::uint8_t* data, std::size_t size,
                          bool allow_eof_at_start) = 0;

 private:
  std::mutex send_mu_;
  std::function<void(const std::vector<std::uint8_t>&)> send_tap_;
};

class TcpConn : public Conn {
 public:
  explicit TcpConn(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~TcpConn() override { close(); }

  void close() override {
    int fd = fd_.exchange(-1);
    if (fd >= 0) {
      ::shutdown(fd, SHUT_RDWR);
      ::close(fd);
    }
  }

 protected:
  void write_all(const std::uint8_t* data, std::size_t size) override {
    std::size_t sent = 0;
    while (sent < size) {
      int fd = fd_.load();
      if (fd < 0) throw InterruptedError("send on closed connection");
      ssize_t n = ::send(fd, data + sent, size - sent, MSG_NOSIGNAL);
      if (n <= 0) throw InterruptedError("send failed");
      sent += std::size_t(n);
    }
  }

  bool read_exact(std::uint8_t* data, std::size_t size,
                  bool allow_eof_at_start) override {
    std::size_t got = 0;
    while (got < size) {
      int fd = fd_.load();
      if (fd < 0) {
        if (got == 0 && allow_eof_at_start) return false;
        throw ProtocolError("connection closed mid-frame", got);
      }
      ssize_t n = ::recv(fd, data + got, size - got, 0);
      if (n == 0) {
        if (got == 0 && allow_eof_at_start) return false;
        throw ProtocolError("connection closed mid-frame", got);
      }
      if (n < 0) {
        if (got == 0 && allow_eof_at_start) return false;
        throw ProtocolError("recv failed mid-frame", got);
      }
      got += std::size_t(n);
    }
    return true;
  }

 private:
  std::atomic<int> fd_;
};

class TcpListener {
 public:
  explicit TcpListener(const std::string& host, std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw RunError("socket() failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
      throw UsageError("bad listen address: " + host);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw RunError("bind failed on " + host + ":" + std::to_string(port));
    if (::listen(fd_, 64) != 0) throw RunError("listen failed");
    socklen_t len = sizeof(addr);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  ~TcpListener() { close(); }

  std::uint16_t port() const { return port_; }

  std::unique_ptr<TcpConn> accept() {
    int fd = ::accept(fd_.load(), nullptr, nullptr);
    if (fd < 0) return nullptr;  // listener closed
    return std::make_unique<TcpConn>(fd);
  }

  void close() {
    int fd = fd_.exchange(-1);
    if (fd >= 0) {
      ::shutdown(fd, SHUT_RDWR);
      ::close(fd);
    }
  }

 private:
  std::atomic<int> fd_;
  std::uint16_t port_ = 0;
};

inline std::unique_ptr<TcpConn> tcp_connect(const std::string& host,
                                            std::uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw RunError("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw UsageError("bad connect address: " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw RunError("connect failed to " + host + ":" + std::to_string(port));
  }
  return std::make_unique<TcpConn>(fd);
}

// In-process byte pipe with the exact framing of the TCP path; gives tests
// a loopback transport whose byte stream can be compared against the wire.
class BytePipe {
 public:
  void write(const std::uint8_t* data, std::size_t size) {
    std::lock_guard<std::mutex> lk(mu_);
    if (closed_) throw InterruptedError("write on closed pipe");
    buf_.insert(buf_.end(), data, data + size);
    cv_.notify_all();
  }
  bool read_exact(std::uint8_t* data, std::size_t size, bool allow_eof) {
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [&] { return closed_ || buf_.size() >= size; });
    if (buf_.size() < size) {
      if (buf_.empty() && allow_eof) return false;
      if (buf_.empty()) throw ProtocolError("pipe closed mid-frame", 0);
      throw ProtocolError("pipe closed mid-frame", buf_.size());
    }
    std::copy_n(buf_.begin(), size, data);
    buf_.erase(buf_.begin(), buf_.begin() + size);
    return true;
  }
  void close() {
    std::lock_guard<std::mutex> lk(mu_);
    closed_ = true;
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::uint8_t> buf_;
  bool closed_ = false;
};

class LoopbackConn : public Conn {
 public:
  LoopbackConn(std::shared_ptr<BytePipe> out, std::shared_ptr<BytePipe> in)
      : out_(std::move(out)), in_(std::move(in)) {}
  ~LoopbackConn() override { close(); }

  void close() override {
    out_->close();
    in_->close();
  }

 protected:
  void write_all(const std::uint8_t* data, std::size_t size) override {
    out_->write(data, size);
  }
  bool read_exact(std::uint8_t* data, std::size_t size,
                  bool allow_eof_at_start) override {
    return in_->read_exact(data, size, allow_eof_at_start);
  }

 private:
  std::shared_ptr<BytePipe> out_;
  std::shared_ptr<BytePipe> in_;
};

inline std::pair<std::unique_ptr<LoopbackConn>, std::unique_ptr<LoopbackConn>>
make_loopback_pair() {
  auto a = std::make_shared<BytePipe>();
  auto b = std::make_shared<BytePipe>();
  return {std::make_unique<LoopbackConn>(a, b),
          std::make_unique<LoopbackConn>(b, a)};
}

}  // namespace wire
}  // namespace skiff
