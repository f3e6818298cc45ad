#pragma once

// Frames over TCP. Each frame travels as a 4-byte big-endian length and
// that many bytes; a connection carries any number of request/response
// pairs.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <list>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>

#include "tycoon/types.hpp"

namespace tycoon::net {

inline constexpr std::size_t kMaxFrame = 1 << 20;
inline constexpr std::chrono::milliseconds kDefaultTimeout{5000};

class ConnectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  // "address:port"; throws std::invalid_argument.
  static Endpoint parse(std::string_view text);
  std::string str() const { return host + ":" + std::to_string(port); }
};

// Sends one frame and waits for the reply. Throws ConnectionError on
// connect failure, timeout, a closed connection or an oversized reply.
Bytes call(const Endpoint& endpoint, std::span<const std::uint8_t> frame,
           std::chrono::milliseconds timeout = kDefaultTimeout);

// Accepts connections on a background thread and answers every frame with
// handler(frame). One thread per connection; the handler must be thread-safe.
class FrameServer {
 public:
  using Handler = std::function<Bytes(std::span<const std::uint8_t>)>;

  // Port 0 picks a free port. Throws ConnectionError if binding fails.
  FrameServer(const Endpoint& bind, Handler handler);
  ~FrameServer();
  FrameServer(const FrameServer&) = delete;
  FrameServer& operator=(const FrameServer&) = delete;

  std::uint16_t port() const { return port_; }
  Endpoint endpoint() const { return {host_, port_}; }
  void stop();

 private:
  struct Worker {
    std::thread thread;
    std::atomic<bool> done{false};
  };

  void accept_loop();
  void serve_connection(int fd);
  void reap(bool all);

  Handler handler_;
  std::string host_;
  std::uint16_t port_ = 0;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::mutex mutex_;
  std::list<Worker> workers_;
  std::thread acceptor_;
};

}  // namespace tycoon::net
