#include <csignal>
#include <iostream>
#include <regex>

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <json.hpp>

#include "scriptdrive/session.hpp"

namespace scriptdrive::session {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

namespace {

using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;

Response make_json(const Request& req, http::status status, const json& body) {
  Response res{status, req.version()};
  res.set(http::field::content_type, "application/json");
  res.set(http::field::access_control_allow_origin, "*");
  res.keep_alive(req.keep_alive());
  res.body() = body.dump();
  res.prepare_payload();
  return res;
}

Response error(const Request& req, http::status status, const std::string& message) {
  return make_json(req, status, json{{"error", message}});
}

json session_json(const Session& s) {
  return {{"id", s.id()},
          {"scenario", s.scenario().name},
          {"status", std::string(to_string(s.status()))},
          {"tick", s.tick()},
          {"speed_factor", s.speed_factor()},
          {"busy", s.busy()}};
}

/// Matches /api/sessions/<id>[/<leaf>].
bool match_session(const std::string& target, std::string& id, std::string& leaf) {
  static const std::regex re(R"(^/api/sessions/([A-Za-z0-9_-]+)(?:/([a-z_]+))?/?$)");
  std::smatch m;
  if (!std::regex_match(target, m, re)) {
    return false;
  }
  id = m[1];
  leaf = m[2];
  return true;
}

json parse_body(const Request& req) {
  if (req.body().empty()) {
    return json::object();
  }
  json body = json::parse(req.body());
  if (!body.is_object()) {
    throw std::invalid_argument("request body must be a JSON object");
  }
  return body;
}

Response handle(SessionManager& sessions, const Request& req) {
  std::string target(req.target());
  if (auto q = target.find('?'); q != std::string::npos) {
    target.resize(q);
  }
  const auto method = req.method();
  if (method == http::verb::options) {
    Response res{http::status::no_content, req.version()};
    res.set(http::field::access_control_allow_origin, "*");
    res.set(http::field::access_control_allow_methods, "GET, POST, DELETE, OPTIONS");
    res.set(http::field::access_control_allow_headers, "Content-Type");
    res.keep_alive(req.keep_alive());
    res.prepare_payload();
    return res;
  }
  try {
    if (target == "/api/health" && method == http::verb::get) {
      return make_json(req, http::status::ok, {{"ok", true}, {"schema", kFrameSchemaVersion}});
    }
    if (target == "/api/scenarios" && method == http::verb::get) {
      return make_json(req, http::status::ok,
                       {{"scenarios", sessions.scenario_ids()},
                        {"backends", sessions.backend_names()}});
    }
    if (target == "/api/sessions" && method == http::verb::get) {
      json list = json::array();
      for (const auto& id : sessions.session_ids()) {
        try {
          list.push_back(session_json(*sessions.get(id)));
        } catch (const SessionNotFound&) {
        }
      }
      return make_json(req, http::status::ok, {{"sessions", list}});
    }
    if (target == "/api/sessions" && method == http::verb::post) {
      const json body = parse_body(req);
      const std::string scenario = body.value("scenario", "");
      const std::string backend = body.value("backend", "stub");
      std::optional<std::uint64_t> seed;
      if (body.contains("seed")) {
        seed = body.at("seed").get<std::uint64_t>();
      }
      const std::string id = sessions.create(scenario, backend, seed);
      return make_json(req, http::status::created, session_json(*sessions.get(id)));
    }

    std::string id;
    std::string leaf;
    if (!match_session(target, id, leaf)) {
      return error(req, http::status::not_found, "no route for " + target);
    }
    if (leaf.empty() && method == http::verb::delete_) {
      sessions.remove(id);
      return make_json(req, http::status::ok, {{"id", id}, {"deleted", true}});
    }
    const std::shared_ptr<Session> s = sessions.get(id);
    if (leaf.empty() && method == http::verb::get) {
      return make_json(req, http::status::ok, session_json(*s));
    }
    if (leaf == "snapshot" && method == http::verb::get) {
      return make_json(req, http::status::ok, json::parse(frame_json(s->snapshot())));
    }
    if (leaf == "control" && method == http::verb::post) {
      const json body = parse_body(req);
      const auto action = action_from_string(body.value("action", ""));
      if (!action) {
        return error(req, http::status::bad_request,
                     "action must be start, pause, reset or set_speed_factor");
      }
      std::optional<double> factor;
      if (body.contains("factor")) {
        factor = body.at("factor").get<double>();
      }
      s->control(*action, factor);
      return make_json(req, http::status::ok, session_json(*s));
    }
    if (leaf == "instructions" && method == http::verb::post) {
      const json body = parse_body(req);
      const std::string text = body.value("text", "");
      if (text.empty()) {
        return error(req, http::status::bad_request, "text must be a non-empty string");
      }
      const Ack ack = s->submit_instruction(text);
      json out{{"accepted", ack.accepted}};
      if (!ack.accepted) {
        out["reason"] = ack.reason;
      }
      const auto status = ack.accepted          ? http::status::accepted
                          : ack.reason == "busy" ? http::status::conflict
                                                 : http::status::gone;
      return make_json(req, status, out);
    }
    return error(req, http::status::method_not_allowed,
                 std::string(req.method_string()) + " " + target);
  } catch (const SessionNotFound& e) {
    return error(req, http::status::not_found, e.what());
  } catch (const NotFound& e) {
    return error(req, http::status::not_found, e.what());
  } catch (const json::exception& e) {
    return error(req, http::status::bad_request, e.what());
  } catch (const std::invalid_argument& e) {
    return error(req, http::status::bad_request, e.what());
  } catch (const std::exception& e) {
    return error(req, http::status::internal_server_error, e.what());
  }
}

// ---------------------------------------------------------------- WebSocket

class StreamConnection : public std::enable_shared_from_this<StreamConnection> {
 public:
  StreamConnection(tcp::socket socket, std::shared_ptr<Session> session)
      : ws_(std::move(socket)), timer_(ws_.get_executor()), session_(std::move(session)) {}

  void run(Request req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&StreamConnection::on_accept,
                                                    shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) {
      return;
    }
    sub_ = session_->subscribe();
    read();
    poll();
  }

  void read() {
    ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->finish();
        return;
      }
      self->in_.consume(self->in_.size());
      self->read();
    });
  }

  void poll() {
    if (done_) {
      return;
    }
    if (!writing_) {
      for (Frame& f : sub_->drain()) {
        out_.push_back(frame_json(f));
      }
      write_next();
    }
    timer_.expires_after(std::chrono::milliseconds(10));
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (!ec) {
        self->poll();
      }
    });
  }

  void write_next() {
    if (out_.empty() || done_) {
      return;
    }
    writing_ = true;
    ws_.text(true);
    ws_.async_write(asio::buffer(out_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      self->writing_ = false;
                      self->out_.pop_front();
                      if (ec) {
                        self->finish();
                        return;
                      }
                      self->write_next();
                    });
  }

  void finish() {
    if (done_) {
      return;
    }
    done_ = true;
    timer_.cancel();
    if (sub_) {
      session_->unsubscribe(sub_);
    }
  }

  websocket::stream<beast::tcp_stream> ws_;
  asio::steady_timer timer_;
  std::shared_ptr<Session> session_;
  std::shared_ptr<Subscription> sub_;
  beast::flat_buffer in_;
  std::deque<std::string> out_;
  bool writing_ = false;
  bool done_ = false;
};

// ---------------------------------------------------------------- HTTP

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket socket, SessionManager& sessions)
      : stream_(std::move(socket)), sessions_(sessions) {}

  void run() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(60));
    http::async_read(stream_, buffer_, req_,
                     beast::bind_front_handler(&HttpConnection::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (websocket::is_upgrade(req_)) {
      std::string id;
      std::string leaf;
      std::string target(req_.target());
      std::shared_ptr<Session> session;
      if (match_session(target, id, leaf) && leaf == "stream") {
        try {
          session = sessions_.get(id);
        } catch (const SessionNotFound&) {
        }
      }
      if (session) {
        stream_.expires_never();
        std::make_shared<StreamConnection>(stream_.release_socket(), session)
            ->run(std::move(req_));
        return;
      }
      respond(error(req_, http::status::not_found, "no stream at " + target));
      return;
    }
    respond(handle(sessions_, req_));
  }

  void respond(Response res) {
    auto shared = std::make_shared<Response>(std::move(res));
    http::async_write(stream_, *shared,
                      [self = shared_from_this(), shared](beast::error_code ec, std::size_t) {
                        if (ec) {
                          return;
                        }
                        if (!shared->keep_alive()) {
                          self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
                          return;
                        }
                        self->read();
                      });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  Request req_;
  SessionManager& sessions_;
};

}  // namespace

struct Server::Impl {
  explicit Impl(ServiceConfig c)
      : config(std::move(c)),
        sessions(config.scenario_dir, config.backends,
                 SessionConfig{config.controller, config.seed, 0.0, config.injected_latency, false, 256}),
        acceptor(io) {}

  void accept() {
    acceptor.async_accept(asio::make_strand(io), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) {
        return;
      }
      std::make_shared<HttpConnection>(std::move(socket), sessions)->run();
      accept();
    });
  }

  ServiceConfig config;
  SessionManager sessions;
  asio::io_context io;
  tcp::acceptor acceptor;
  std::vector<std::thread> threads;
  unsigned short port = 0;
};

Server::Server(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Server::~Server() { stop(); }

void Server::start() {
  const tcp::endpoint endpoint(asio::ip::make_address(impl_->config.host), impl_->config.port);
  impl_->acceptor.open(endpoint.protocol());
  impl_->acceptor.set_option(asio::socket_base::reuse_address(true));
  impl_->acceptor.bind(endpoint);
  impl_->acceptor.listen();
  impl_->port = impl_->acceptor.local_endpoint().port();
  impl_->accept();
  for (int i = 0; i < 2; ++i) {
    impl_->threads.emplace_back([this] { impl_->io.run(); });
  }
}

void Server::stop() {
  if (!impl_) {
    return;
  }
  impl_->io.stop();
  for (auto& t : impl_->threads) {
    t.join();
  }
  impl_->threads.clear();
}

unsigned short Server::port() const { return impl_->port; }

SessionManager& Server::sessions() { return impl_->sessions; }

int serve(ServiceConfig config) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Server server(std::move(config));
  server.start();
  std::cerr << "listening on port " << server.port() << "\n";
  int sig = 0;
  sigwait(&signals, &sig);
  std::cerr << "shutting down\n";
  server.stop();
  return 0;
}

}  // namespace scriptdrive::session
