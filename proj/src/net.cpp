#include "tycoon/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

namespace tycoon::net {

namespace {

using Clock = std::chrono::steady_clock;

constexpr int kPollSlice = 100;  // ms; how often blocked loops notice stop()

class Fd {
 public:
  explicit Fd(int fd = -1) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }
  int release() { return std::exchange(fd_, -1); }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_;
};

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
  return static_cast<int>(std::max<long long>(0, left.count()));
}

// Waits for `events` on fd. False on timeout.
bool wait_for(int fd, short events, Clock::time_point deadline) {
  for (;;) {
    pollfd p{fd, events, 0};
    const int ms = remaining_ms(deadline);
    const int rc = ::poll(&p, 1, ms);
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw ConnectionError(errno_text("poll"));
  }
}

void write_all(int fd, const std::uint8_t* data, std::size_t size, Clock::time_point deadline) {
  while (size > 0) {
    if (!wait_for(fd, POLLOUT, deadline)) throw ConnectionError("timed out sending");
    const ssize_t n = ::send(fd, data, size, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw ConnectionError(errno_text("send"));
    }
    data += n;
    size -= static_cast<std::size_t>(n);
  }
}

// False if the peer closed the connection before the first byte.
bool read_all(int fd, std::uint8_t* data, std::size_t size, Clock::time_point deadline) {
  std::size_t got = 0;
  while (got < size) {
    if (!wait_for(fd, POLLIN, deadline)) throw ConnectionError("timed out receiving");
    const ssize_t n = ::recv(fd, data + got, size - got, 0);
    if (n == 0) {
      if (got == 0) return false;
      throw ConnectionError("connection closed mid-frame");
    }
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw ConnectionError(errno_text("recv"));
    }
    got += static_cast<std::size_t>(n);
  }
  return true;
}

void write_frame(int fd, std::span<const std::uint8_t> frame, Clock::time_point deadline) {
  if (frame.size() > kMaxFrame) throw ConnectionError("frame too large");
  const auto n = static_cast<std::uint32_t>(frame.size());
  std::uint8_t header[4] = {static_cast<std::uint8_t>(n >> 24), static_cast<std::uint8_t>(n >> 16),
                            static_cast<std::uint8_t>(n >> 8), static_cast<std::uint8_t>(n)};
  write_all(fd, header, 4, deadline);
  write_all(fd, frame.data(), frame.size(), deadline);
}

std::optional<Bytes> read_frame(int fd, Clock::time_point deadline) {
  std::uint8_t header[4];
  if (!read_all(fd, header, 4, deadline)) return std::nullopt;
  const std::uint32_t n = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                          (std::uint32_t{header[2]} << 8) | header[3];
  if (n > kMaxFrame) throw ConnectionError("frame too large");
  Bytes frame(n);
  if (n > 0 && !read_all(fd, frame.data(), n, deadline)) {
    throw ConnectionError("connection closed mid-frame");
  }
  return frame;
}

struct AddrInfo {
  addrinfo* list = nullptr;
  ~AddrInfo() {
    if (list) ::freeaddrinfo(list);
  }
};

void resolve(const Endpoint& ep, bool passive, AddrInfo& out) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  const std::string port = std::to_string(ep.port);
  const int rc = ::getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), port.c_str(), &hints,
                               &out.list);
  if (rc != 0) throw ConnectionError("cannot resolve " + ep.str() + ": " + ::gai_strerror(rc));
}

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

}  // namespace

Endpoint Endpoint::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw std::invalid_argument("endpoint must look like address:port, got '" + std::string(text) + "'");
  }
  std::string host(text.substr(0, colon));
  if (host.size() > 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  const auto port_text = text.substr(colon + 1);
  unsigned port = 0;
  auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc() || ptr != port_text.data() + port_text.size() || port > 65535) {
    throw std::invalid_argument("bad port in endpoint '" + std::string(text) + "'");
  }
  return {host, static_cast<std::uint16_t>(port)};
}

Bytes call(const Endpoint& endpoint, std::span<const std::uint8_t> frame,
           std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  AddrInfo ai;
  resolve(endpoint, false, ai);
  std::string last_error = "no address";
  for (auto* a = ai.list; a; a = a->ai_next) {
    Fd fd(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
    if (fd.get() < 0) {
      last_error = errno_text("socket");
      continue;
    }
    set_nonblocking(fd.get());
    if (::connect(fd.get(), a->ai_addr, a->ai_addrlen) != 0) {
      if (errno != EINPROGRESS) {
        last_error = errno_text("connect");
        continue;
      }
      if (!wait_for(fd.get(), POLLOUT, deadline)) {
        last_error = "connect timed out";
        continue;
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
      if (err != 0) {
        last_error = std::string("connect: ") + std::strerror(err);
        continue;
      }
    }
    int one = 1;
    ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    write_frame(fd.get(), frame, deadline);
    auto reply = read_frame(fd.get(), deadline);
    if (!reply) throw ConnectionError(endpoint.str() + " closed the connection");
    return std::move(*reply);
  }
  throw ConnectionError(endpoint.str() + ": " + last_error);
}

FrameServer::FrameServer(const Endpoint& bind, Handler handler)
    : handler_(std::move(handler)), host_(bind.host) {
  AddrInfo ai;
  resolve(bind, true, ai);
  std::string last_error = "no address";
  for (auto* a = ai.list; a; a = a->ai_next) {
    Fd fd(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
    if (fd.get() < 0) continue;
    int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd.get(), a->ai_addr, a->ai_addrlen) != 0 || ::listen(fd.get(), 64) != 0) {
      last_error = errno_text("bind");
      continue;
    }
    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                             : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
    set_nonblocking(fd.get());
    listen_fd_ = fd.release();
    break;
  }
  if (listen_fd_ < 0) throw ConnectionError("cannot listen on " + bind.str() + ": " + last_error);
  acceptor_ = std::thread([this] { accept_loop(); });
}

FrameServer::~FrameServer() { stop(); }

void FrameServer::stop() {
  if (stopping_.exchange(true)) return;
  if (acceptor_.joinable()) acceptor_.join();
  reap(true);
  if (listen_fd_ >= 0) ::close(listen_fd_);
  listen_fd_ = -1;
}

void FrameServer::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, kPollSlice) <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    reap(false);
    std::lock_guard lock(mutex_);
    auto& w = workers_.emplace_back();
    w.thread = std::thread([this, fd, &w] {
      serve_connection(fd);
      w.done = true;
    });
  }
}

void FrameServer::reap(bool all) {
  std::lock_guard lock(mutex_);
  for (auto it = workers_.begin(); it != workers_.end();) {
    if (all || it->done) {
      it->thread.join();
      it = workers_.erase(it);
    } else {
      ++it;
    }
  }
}

void FrameServer::serve_connection(int raw) {
  Fd fd(raw);
  set_nonblocking(fd.get());
  try {
    while (!stopping_) {
      // Idle connections are polled in short slices so stop() is prompt.
      pollfd p{fd.get(), POLLIN, 0};
      const int rc = ::poll(&p, 1, kPollSlice);
      if (rc == 0) continue;
      if (rc < 0) break;
      const auto deadline = Clock::now() + kDefaultTimeout;
      auto frame = read_frame(fd.get(), deadline);
      if (!frame) break;
      const Bytes reply = handler_(*frame);
      write_frame(fd.get(), reply, deadline);
    }
  } catch (const ConnectionError&) {
    // The peer misbehaved or went away; drop the connection.
  }
}

}  // namespace tycoon::net
