#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/post.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "fieldanno/session.hpp"
#include "fieldanno/wire.hpp"

namespace fieldanno {

class GatewayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Serves one session to a single operator:
//   GET  /stream  WebSocket: frame/stats/ack/error out, command in
//   GET  /status  SessionStats snapshot as JSON
//   POST /stop    flush the report, close the stream; {"report": path}
// Frames advance only once the pending frame is saved or skipped (unless
// the session auto-saves), so the operator sets the pace.
class Gateway {
 public:
  Gateway(Session& session, const std::string& address, unsigned short port) : session_(session) {
    namespace net = boost::asio;
    using tcp = net::ip::tcp;
    boost::system::error_code ec;
    const auto addr = net::ip::make_address(address, ec);
    if (ec) throw GatewayError("bad bind address '" + address + "': " + ec.message());
    const tcp::endpoint ep(addr, port);
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw GatewayError("cannot bind " + address + ":" + std::to_string(port) + ": " + ec.message());
    port_ = acceptor_.local_endpoint().port();
  }

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  ~Gateway() {
    stop();
    join();
  }

  unsigned short port() const { return port_; }

  void start() {
    accept_next();
    io_thread_ = std::thread([this] { ioc_.run(); });
    driver_ = std::thread([this] { drive(); });
  }

  // Idempotent. Flushes the session report and returns its path.
  std::filesystem::path stop() {
    std::filesystem::path report;
    {
      std::lock_guard lock(mu_);
      report = session_.stop();
      if (stopping_) return report;
      stopping_ = true;
      if (active_) shutdown(*active_);
    }
    cv_.notify_all();
    boost::asio::post(ioc_, [this] {
      boost::system::error_code ec;
      acceptor_.close(ec);
    });
    return report;
  }

  bool stopped() const {
    std::lock_guard lock(mu_);
    return stopping_;
  }

  // Blocks until stop() and all worker threads have finished.
  void join() {
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_; });
    }
    if (driver_.joinable()) driver_.join();
    ioc_.stop();
    if (io_thread_.joinable()) io_thread_.join();
    std::list<std::thread> handlers;
    {
      std::lock_guard lock(mu_);
      handlers.swap(handlers_);
    }
    for (auto& t : handlers)
      if (t.joinable()) t.join();
  }

 private:
  using tcp = boost::asio::ip::tcp;
  using WebSocket = boost::beast::websocket::stream<tcp::socket>;

  struct Connection {
    explicit Connection(tcp::socket s) : ws(std::move(s)) {}
    WebSocket ws;
    std::mutex write_mu;
    std::optional<FrameId> last_frame_sent;
    bool closed = false;
  };

  static void shutdown(Connection& c) {
    boost::system::error_code ec;
    c.ws.next_layer().shutdown(tcp::socket::shutdown_both, ec);
  }

  static bool send(Connection& c, const std::string& text) {
    std::lock_guard lock(c.write_mu);
    if (c.closed) return false;
    boost::system::error_code ec;
    c.ws.text(true);
    c.ws.write(boost::asio::buffer(text), ec);
    if (ec) c.closed = true;
    return !ec;
  }

  // Frames go out in strictly increasing id order per connection.
  void send_frame(Connection& c, const FrameRecord& rec) {
    {
      std::lock_guard lock(c.write_mu);
      if (c.last_frame_sent && *c.last_frame_sent >= rec.frame_id) return;
      c.last_frame_sent = rec.frame_id;
    }
    const auto image = session_.pending_image();
    const auto pending = session_.pending_frame();
    std::vector<std::uint8_t> jpeg;
    if (image && pending == rec.frame_id) jpeg = encode_image(*image, ".jpg", session_.config().jpeg_quality);
    const auto boxes = pending == rec.frame_id ? session_.pending_detections() : rec.detections;
    send(c, wire::frame_message(rec, boxes, jpeg));
  }

  void send_stats(Connection& c) {
    send(c, wire::stats_message(session_.stats(), session_.active_class(), session_.exhausted()));
  }

  void accept_next() {
    acceptor_.async_accept([this](boost::system::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::lock_guard lock(mu_);
      if (stopping_) return;
      handlers_.emplace_back([this, s = std::move(socket)]() mutable { handle(std::move(s)); });
      accept_next();
    });
  }

  // Advances the session whenever nothing is pending.
  void drive() {
    while (true) {
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] {
          return stopping_ || (!session_.pending_frame() && session_.running() && !session_.exhausted());
        });
        if (stopping_) return;
      }
      std::optional<FrameRecord> rec;
      try {
        rec = session_.process_next();
      } catch (const std::exception&) {
        return;  // session stopped underneath us
      }
      std::shared_ptr<Connection> conn;
      {
        std::lock_guard lock(mu_);
        conn = active_;
      }
      if (!conn) continue;
      if (rec) send_frame(*conn, *rec);
      send_stats(*conn);
    }
  }

  void handle(tcp::socket socket) {
    namespace http = boost::beast::http;
    namespace websocket = boost::beast::websocket;
    boost::beast::flat_buffer buffer;
    http::request<http::string_body> req;
    boost::system::error_code ec;
    http::read(socket, buffer, req, ec);
    if (ec) return;

    if (websocket::is_upgrade(req)) {
      if (req.target() != "/stream") return respond(socket, req, http::status::not_found, R"({"error":"not found"})");
      auto conn = std::make_shared<Connection>(std::move(socket));
      conn->ws.accept(req, ec);
      if (ec) return;
      {
        std::lock_guard lock(mu_);
        if (active_ || stopping_) {
          send(*conn, wire::error_message(std::nullopt, "connect", stopping_ ? "stopped" : "busy"));
          conn->ws.close(websocket::close_code::try_again_later, ec);
          return;
        }
        active_ = conn;
      }
      on_connect(*conn);
      serve_stream(*conn);
      {
        std::lock_guard lock(mu_);
        if (active_ == conn) active_.reset();
      }
      return;
    }

    if (req.method() == http::verb::get && req.target() == "/status") {
      return respond(socket, req, http::status::ok, to_json(session_.stats()).dump());
    }
    if (req.method() == http::verb::post && req.target() == "/stop") {
      const auto report = stop();
      return respond(socket, req, http::status::ok, nlohmann::json{{"report", report.string()}}.dump());
    }
    respond(socket, req, http::status::not_found, R"({"error":"not found"})");
  }

  template <typename Request>
  static void respond(tcp::socket& socket, const Request& req, boost::beast::http::status status,
                      const std::string& body) {
    namespace http = boost::beast::http;
    http::response<http::string_body> res{status, req.version()};
    res.set(http::field::content_type, "application/json");
    res.keep_alive(false);
    res.body() = body;
    res.prepare_payload();
    boost::system::error_code ec;
    http::write(socket, res, ec);
    socket.shutdown(tcp::socket::shutdown_both, ec);
  }

  // A (re)connecting operator resumes at the pending frame.
  void on_connect(Connection& c) {
    if (const auto id = session_.pending_frame())
      if (const auto rec = session_.record(*id)) send_frame(c, *rec);
    send_stats(c);
  }

  void serve_stream(Connection& c) {
    boost::beast::flat_buffer buffer;
    while (true) {
      boost::system::error_code ec;
      buffer.clear();
      c.ws.read(buffer, ec);
      if (ec) return;  // drop: the session waits at its pending frame
      const auto text = boost::beast::buffers_to_string(buffer.data());
      std::optional<FrameId> frame_id;
      std::string action = "unknown";
      try {
        const auto msg = wire::parse_command(text);
        frame_id = msg.frame_id;
        action = action_name(msg.command);
        const auto effect = session_.apply_command(msg.frame_id, msg.command);
        send(c, wire::ack_message(msg.frame_id, effect.action));
        if (effect.stopped) {
          stop();
          return;
        }
        send_stats(c);
      } catch (const std::exception& e) {
        send(c, wire::error_message(frame_id, action, e.what()));
      }
      { std::lock_guard lock(mu_); }
      cv_.notify_all();
    }
  }

  Session& session_;
  boost::asio::io_context ioc_;
  tcp::acceptor acceptor_{ioc_};
  unsigned short port_ = 0;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool stopping_ = false;
  std::shared_ptr<Connection> active_;
  std::thread io_thread_;
  std::thread driver_;
  std::list<std::thread> handlers_;
};

}  // namespace fieldanno
