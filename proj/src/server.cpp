#include "stts/server.hpp"

#include <chrono>
#include <csignal>
#include <deque>
#include <optional>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace stts {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

constexpr auto kTick = std::chrono::milliseconds(80);

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, ServiceHub& hub)
      : ws_(std::move(socket)), timer_(ws_.get_executor()), hub_(hub), t0_(std::chrono::steady_clock::now()) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.set_option(websocket::stream_base::decorator([](websocket::response_type& res) {
      res.set(http::field::server, "stts/" + std::string(kServiceVersion));
    }));
    ws_.read_message_max(1 << 20);
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

 private:
  std::int64_t now_us() const {
    return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - t0_).count();
  }

  void on_accept(beast::error_code ec) {
    if (ec) return;
    t0_ = std::chrono::steady_clock::now();
    conn_ = hub_.connect();
    flush();
    if (conn_->refused()) return;  // closed once the refusal is written
    do_read();
    schedule_tick();
  }

  void do_read() { ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this())); }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      closing_ = true;
      timer_.cancel();
      conn_.reset();  // releases the session slot
      return;
    }
    const std::string msg = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    conn_->handle(msg, now_us());
    flush();
    do_read();
  }

  void schedule_tick() {
    timer_.expires_after(kTick);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closing_ || !self->conn_) return;
      self->conn_->tick(self->now_us());
      self->flush();
      self->schedule_tick();
    });
  }

  // Pulls from the connection's bounded queue only when the socket is idle,
  // so a slow reader backs up there (where sps/histogram get shed).
  void flush() {
    if (writing_ || !conn_) return;
    for (auto& m : conn_->drain()) pending_.push_back(std::move(m));
    if (pending_.empty()) {
      if (conn_->refused() && !closing_) {
        closing_ = true;
        ws_.async_close(websocket::close_reason(websocket::close_code::try_again_later),
                        [self = shared_from_this()](beast::error_code) {});
      }
      return;
    }
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(pending_.front()), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    writing_ = false;
    if (ec) return;
    pending_.pop_front();
    if (!pending_.empty()) {
      writing_ = true;
      ws_.async_write(net::buffer(pending_.front()), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
      return;
    }
    flush();
  }

  websocket::stream<beast::tcp_stream> ws_;
  net::steady_timer timer_;
  beast::flat_buffer buffer_;
  ServiceHub& hub_;
  std::unique_ptr<Connection> conn_;
  std::deque<std::string> pending_;
  bool writing_ = false;
  bool closing_ = false;
  std::chrono::steady_clock::time_point t0_;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, ServiceHub& hub) : stream_(std::move(socket)), hub_(hub) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

 private:
  void on_read(beast::error_code ec, std::size_t) {
    if (ec) return;
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/ws") {
        stream_.expires_never();
        std::make_shared<WsSession>(stream_.release_socket(), hub_)->run(std::move(req_));
        return;
      }
      respond(http::status::not_found, R"({"error":"websocket endpoint is /ws"})");
      return;
    }
    if (req_.method() == http::verb::get && req_.target() == "/health") {
      respond(http::status::ok, hub_.health_json());
      return;
    }
    respond(http::status::not_found, R"({"error":"not found"})");
  }

  void respond(http::status status, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::server, "stts/" + std::string(kServiceVersion));
    res->set(http::field::content_type, "application/json");
    res->keep_alive(false);
    res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  ServiceHub& hub_;
};

}  // namespace

struct Server::Impl {
  Impl(ServiceHub& h, const std::string& address, unsigned short port)
      : hub(h), acceptor(ioc), guard(net::make_work_guard(ioc)) {
    const tcp::endpoint ep(net::ip::make_address(address), port);
    acceptor.open(ep.protocol());
    acceptor.set_option(net::socket_base::reuse_address(true));
    acceptor.bind(ep);
    acceptor.listen(net::socket_base::max_listen_connections);
    do_accept();
  }

  void do_accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) {
        if (ec == net::error::operation_aborted) return;
      } else {
        std::make_shared<HttpSession>(std::move(socket), hub)->run();
      }
      do_accept();
    });
  }

  ServiceHub& hub;
  net::io_context ioc;
  tcp::acceptor acceptor;
  net::executor_work_guard<net::io_context::executor_type> guard;
  std::vector<std::thread> threads;
};

Server::Server(ServiceHub& hub, const std::string& address, unsigned short port)
    : impl_(std::make_unique<Impl>(hub, address, port)) {}

Server::~Server() { stop(); }

unsigned short Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::run(std::size_t threads, bool handle_signals) {
  std::optional<net::signal_set> signals;
  if (handle_signals) {
    signals.emplace(impl_->ioc, SIGINT, SIGTERM);
    signals->async_wait([this](beast::error_code ec, int) {
      if (!ec) {
        impl_->guard.reset();
        impl_->ioc.stop();
      }
    });
  }
  start(threads > 1 ? threads - 1 : 0);
  impl_->ioc.run();
  stop();
}

void Server::start(std::size_t threads) {
  for (std::size_t i = 0; i < threads; ++i) impl_->threads.emplace_back([this] { impl_->ioc.run(); });
}

void Server::stop() {
  if (!impl_) return;
  impl_->guard.reset();
  net::post(impl_->ioc, [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
  });
  impl_->ioc.stop();
  for (auto& t : impl_->threads) {
    if (t.joinable() && t.get_id() != std::this_thread::get_id()) t.join();
  }
  impl_->threads.clear();
}

}  // namespace stts
