#include <doctest.h>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>
#include <thread>

#include "stts/rng.hpp"
#include "stts/server.hpp"

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;
using namespace stts;

namespace {

struct Http {
  unsigned status;
  std::string body;
};

Http http_get(unsigned short port, const std::string& target) {
  net::io_context ioc;
  beast::tcp_stream stream(ioc);
  stream.connect(tcp::endpoint(net::ip::make_address("127.0.0.1"), port));
  http::request<http::empty_body> req(http::verb::get, target, 11);
  req.set(http::field::host, "127.0.0.1");
  http::write(stream, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(stream, buf, res);
  return {res.result_int(), res.body()};
}

class Client {
 public:
  explicit Client(unsigned short port) : ws_(ioc_) {
    beast::get_lowest_layer(ws_).connect(tcp::endpoint(net::ip::make_address("127.0.0.1"), port));
    beast::get_lowest_layer(ws_).expires_after(std::chrono::seconds(30));
    ws_.handshake("127.0.0.1", "/ws");
  }

  void send(const std::string& s) {
    ws_.text(true);
    ws_.write(net::buffer(s));
  }

  // nullopt once the server closes
  std::optional<json> recv() {
    beast::flat_buffer buf;
    beast::error_code ec;
    ws_.read(buf, ec);
    if (ec) return std::nullopt;
    return json::parse(beast::buffers_to_string(buf.data()));
  }

  std::vector<json> until(const std::string& type) {
    std::vector<json> out;
    while (auto m = recv()) {
      out.push_back(*m);
      if ((*m)["type"] == type) break;
    }
    return out;
  }

  void close() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }

 private:
  net::io_context ioc_;
  websocket::stream<beast::tcp_stream> ws_;
};

void wait_for_sessions(ServiceHub& hub, std::size_t n) {
  for (int i = 0; i < 500 && hub.active_sessions() != n; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
}

}  // namespace

TEST_CASE("health, 404 and a full websocket session over a real socket") {
  ServiceConfig cfg;
  cfg.max_sessions = 2;
  ServiceHub hub(cfg);
  Server server(hub, "127.0.0.1", 0);
  server.start(2);
  const auto port = server.port();
  REQUIRE(port != 0);

  auto h = http_get(port, "/health");
  CHECK(h.status == 200);
  auto hj = json::parse(h.body);
  CHECK(hj["version"] == std::string(kServiceVersion));
  CHECK(hj["active_sessions"] == 0);
  CHECK(http_get(port, "/nope").status == 404);

  {
    Client c(port);
    c.send(R"({"type":"text","token":"early"})");
    auto e = c.recv();
    REQUIRE(e);
    CHECK((*e)["code"] == "not_started");

    c.send(R"({"type":"start","tps":"inf","src":true})");
    CHECK((*c.recv())["type"] == "started");
    CHECK(json::parse(http_get(port, "/health").body)["active_sessions"] == 1);
    for (const char* w : {"Hello", "there."}) c.send(json{{"type", "text"}, {"token", w}}.dump());
    c.send(R"({"type":"set_rate","sps":5})");
    c.send(R"({"type":"end_text"})");
    const auto msgs = c.until("done");
    REQUIRE_FALSE(msgs.empty());
    CHECK(msgs.back()["type"] == "done");
    std::size_t frames = 0;
    bool saw_rate = false;
    for (const auto& m : msgs) {
      frames += m["type"] == "frame";
      saw_rate = saw_rate || (m["type"] == "sps" && m["target"] == 5.0);
    }
    CHECK(msgs.back()["frames"] == frames);
    CHECK(saw_rate);
    c.close();
  }
  wait_for_sessions(hub, 0);
  CHECK(hub.active_sessions() == 0);
  server.stop();
}

TEST_CASE("sessions beyond the limit are refused and the server keeps serving") {
  ServiceConfig cfg;
  cfg.max_sessions = 1;
  ServiceHub hub(cfg);
  Server server(hub, "127.0.0.1", 0);
  server.start();
  {
    Client a(server.port());
    a.send(R"({"type":"start"})");
    CHECK((*a.recv())["type"] == "started");
    Client b(server.port());
    auto r = b.recv();
    REQUIRE(r);
    CHECK((*r)["code"] == "session_limit");
    CHECK_FALSE(b.recv().has_value());  // closed by the server
    a.close();
  }
  wait_for_sessions(hub, 0);
  Client c(server.port());
  c.send(R"({"type":"start"})");
  CHECK((*c.recv())["type"] == "started");
  c.close();
  server.stop();
}

TEST_CASE("garbage over the wire yields errors, never a dead server") {
  ServiceHub hub;
  Server server(hub, "127.0.0.1", 0);
  server.start();
  Rng rng(5);
  for (int round = 0; round < 20; ++round) {
    Client c(server.port());
    for (int i = 0; i < 10; ++i) {
      std::string junk;
      const auto len = rng.next() % 40;
      for (std::uint64_t k = 0; k < len; ++k) junk.push_back(static_cast<char>(' ' + rng.next() % 95));
      c.send(junk);
      auto r = c.recv();
      REQUIRE(r);
      CHECK((*r)["type"] == "error");
    }
    c.close();
  }
  CHECK(http_get(server.port(), "/health").status == 200);
  server.stop();
}
