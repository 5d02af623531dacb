#pragma once

#include <chrono>
#include <deque>
#include <memory>
#include <string>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "springtwin/service.hpp"

namespace springtwin {

namespace net = boost::asio;
namespace beast = boost::beast;
using tcp = net::ip::tcp;

namespace detail {

class WsPeer : public std::enable_shared_from_this<WsPeer> {
 public:
  WsPeer(tcp::socket socket, const FixtureCatalog& catalog, std::string id, SessionConfig cfg)
      : ws_(std::move(socket)), timer_(ws_.get_executor()), conn_(catalog, std::move(id), cfg) {}

  net::awaitable<void> run(beast::http::request<beast::http::string_body> req) {
    auto self = shared_from_this();
    ws_.text(true);
    co_await ws_.async_accept(req, net::use_awaitable);
    net::co_spawn(ws_.get_executor(), self->ticker(), net::detached);
    try {
      for (;;) {
        beast::flat_buffer buf;
        co_await ws_.async_read(buf, net::use_awaitable);
        for (auto& reply : conn_.handle_text(beast::buffers_to_string(buf.data()))) send(reply);
      }
    } catch (const boost::system::system_error&) {
    }
    closed_ = true;
    timer_.cancel();
  }

 private:
  net::awaitable<void> ticker() {
    auto self = shared_from_this();
    auto next = std::chrono::steady_clock::now();
    while (!closed_) {
      const auto* s = conn_.session();
      next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(s ? s->tick_seconds() : 1.0 / 60.0));
      timer_.expires_at(next);
      boost::system::error_code ec;
      co_await timer_.async_wait(net::redirect_error(net::use_awaitable, ec));
      if (closed_) break;
      if (auto f = conn_.on_tick()) send(*f);
    }
  }

  void send(const json& msg) {
    out_.push_back(msg.dump());
    if (!writing_) net::co_spawn(ws_.get_executor(), shared_from_this()->flush(), net::detached);
  }

  net::awaitable<void> flush() {
    auto self = shared_from_this();
    writing_ = true;
    try {
      while (!out_.empty() && !closed_) {
        co_await ws_.async_write(net::buffer(out_.front()), net::use_awaitable);
        out_.pop_front();
      }
    } catch (const boost::system::system_error&) {
      closed_ = true;
      timer_.cancel();
    }
    writing_ = false;
  }

  beast::websocket::stream<tcp::socket> ws_;
  net::steady_timer timer_;
  Connection conn_;
  std::deque<std::string> out_;
  bool writing_ = false;
  bool closed_ = false;
};

}  // namespace detail

/// WebSocket session server plus `GET /fixtures`. Runs on the io_context
/// it is given; every connection lives on that context's executor.
class Server {
 public:
  Server(net::io_context& ioc, FixtureCatalog catalog, unsigned short port,
         const std::string& host = "127.0.0.1", SessionConfig cfg = {})
      : ioc_(ioc), catalog_(std::move(catalog)), cfg_(cfg),
        acceptor_(ioc, tcp::endpoint(net::ip::make_address(host), port)) {}

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  void start() { net::co_spawn(ioc_, accept_loop(), net::detached); }

  void stop() {
    boost::system::error_code ec;
    acceptor_.close(ec);
  }

 private:
  net::awaitable<void> accept_loop() {
    while (acceptor_.is_open()) {
      boost::system::error_code ec;
      tcp::socket socket = co_await acceptor_.async_accept(net::redirect_error(net::use_awaitable, ec));
      if (ec) {
        if (!acceptor_.is_open()) break;
        continue;
      }
      net::co_spawn(ioc_, serve(std::move(socket)), net::detached);
    }
  }

  net::awaitable<void> serve(tcp::socket socket) {
    namespace http = beast::http;
    try {
      beast::flat_buffer buf;
      http::request<http::string_body> req;
      co_await http::async_read(socket, buf, req, net::use_awaitable);
      if (beast::websocket::is_upgrade(req)) {
        auto peer = std::make_shared<detail::WsPeer>(std::move(socket), catalog_,
                                                     "s" + std::to_string(++connections_), cfg_);
        co_await peer->run(std::move(req));
        co_return;
      }
      http::response<http::string_body> res;
      res.version(req.version());
      res.keep_alive(false);
      if (req.method() == http::verb::get && req.target() == "/fixtures") {
        res.result(http::status::ok);
        res.set(http::field::content_type, "application/json");
        res.body() = catalog_.listing().dump();
      } else {
        res.result(http::status::not_found);
        res.set(http::field::content_type, "application/json");
        res.body() = error_message("not_found", std::string(req.target())).dump();
      }
      res.prepare_payload();
      co_await http::async_write(socket, res, net::use_awaitable);
      boost::system::error_code ec;
      socket.shutdown(tcp::socket::shutdown_send, ec);
    } catch (const boost::system::system_error&) {
    }
  }

  net::io_context& ioc_;
  FixtureCatalog catalog_;
  SessionConfig cfg_;
  tcp::acceptor acceptor_;
  std::size_t connections_ = 0;
};

}  // namespace springtwin
