#pragma once

// Websocket transport for the control service: ws://HOST:PORT/ws carries the
// JSON message protocol, GET /health reports version and session count.

#include <cstddef>
#include <memory>
#include <string>

#include "stts/service.hpp"

namespace stts {

class Server {
 public:
  // port 0 binds an ephemeral port; see port().
  Server(ServiceHub& hub, const std::string& address, unsigned short port);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  unsigned short port() const;
  // Blocks until stop() is called from another thread, or on SIGINT/SIGTERM
  // when handle_signals is set.
  void run(std::size_t threads = 1, bool handle_signals = false);
  // Runs on background threads and returns immediately.
  void start(std::size_t threads = 1);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace stts
