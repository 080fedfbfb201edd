#pragma once

#include <cstdlib>
#include <memory>
#include <sstream>
#include <string>

#include <spdlog/spdlog.h>

#include "reviewlens/corpus/io.hpp"
#include "reviewlens/service/store.hpp"
#include "reviewlens/util/http.hpp"

namespace reviewlens::service {

inline constexpr const char* kApiPrefix = "/api/v1";
inline constexpr const char* kDefaultBindAddr = "127.0.0.1:8080";

inline int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownRound: return 404;
    case ErrorKind::DuplicateSubmission:
    case ErrorKind::DuplicateRecord:
    case ErrorKind::RoundClosed: return 409;
    case ErrorKind::GatingViolation:
    case ErrorKind::InsufficientPopulation:
    case ErrorKind::PanelTooSmall: return 422;
    case ErrorKind::NotInPanel:
    case ErrorKind::NotAssigned: return 403;
    case ErrorKind::MalformedRecord:
    case ErrorKind::InvalidArgument: return 400;
    default: return 500;
  }
}

struct BindAddress {
  std::string host;
  int port = 0;
};

/// "host:port", or ":port" for all interfaces.
inline BindAddress parse_bind_address(std::string_view s) {
  const auto colon = s.rfind(':');
  if (colon == std::string_view::npos) fail(ErrorKind::InvalidArgument, "bind address needs host:port");
  BindAddress b{std::string(s.substr(0, colon)), 0};
  if (b.host.empty()) b.host = "0.0.0.0";
  try {
    std::size_t used = 0;
    const std::string port(s.substr(colon + 1));
    b.port = std::stoi(port, &used);
    if (used != port.size() || b.port < 0 || b.port > 65535) throw std::invalid_argument("port");
  } catch (const std::exception&) {
    fail(ErrorKind::InvalidArgument, "invalid port in bind address '" + std::string(s) + "'");
  }
  return b;
}

inline std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

namespace detail {

inline void send_json(httplib::Response& res, const Json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, ErrorKind kind, const std::string& message) {
  send_json(res, Json{{"error", to_string(kind)}, {"message", message}}, http_status(kind));
}

inline Json parse_body(const httplib::Request& req) {
  auto j = Json::parse(req.body, nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::MalformedRecord, "request body is not valid JSON");
  return j;
}

/// Runs `fn`, mapping library errors to their HTTP status and anything else to 500.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, e.kind(), e.what());
  } catch (const std::invalid_argument& e) {
    send_error(res, ErrorKind::MalformedRecord, e.what());
  } catch (const Json::exception& e) {
    send_error(res, ErrorKind::MalformedRecord, e.what());
  } catch (const std::exception& e) {
    spdlog::error("unhandled error: {}", e.what());
    res.status = 500;
    res.set_content(Json{{"error", "Internal"}, {"message", e.what()}}.dump(), "application/json");
  }
}

}  // namespace detail

/// Registers the /api/v1 routes on `server`. The store must outlive it.
inline void register_routes(httplib::Server& server, Store& store) {
  using detail::guarded;
  using detail::send_json;
  const std::string p = kApiPrefix;

  server.Get(p + "/categories", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, category_descriptors());
  });

  // Sentence pool: a JSON array of sentences, or sentences.jsonl lines.
  server.Post(p + "/sentences", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::vector<corpus::Sentence> sentences;
      auto j = Json::parse(req.body, nullptr, false);
      if (!j.is_discarded() && j.is_array()) {
        for (const auto& s : j) sentences.push_back(corpus::sentence_from_json(s));
      } else {
        std::istringstream in(req.body);
        std::size_t line_no = 0;
        for (std::string line; std::getline(in, line);) {
          ++line_no;
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          auto item = Json::parse(line, nullptr, false);
          if (item.is_discarded()) fail(ErrorKind::MalformedRecord, "line " + std::to_string(line_no) + ": invalid JSON");
          sentences.push_back(corpus::sentence_from_json(item));
        }
      }
      const auto added = store.add_sentences(sentences);
      send_json(res, Json{{"added", added}, {"pool_size", store.pool_size()}}, 201);
    });
  });

  server.Get(p + "/rounds", [&store](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      Json arr = Json::array();
      for (const auto& id : store.round_ids()) {
        Json j = round_json(store.round(id), false);
        j["progress"] = to_json(store.progress(id));
        arr.push_back(std::move(j));
      }
      send_json(res, arr);
    });
  });

  server.Post(p + "/rounds", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = detail::parse_body(req);
      if (!body.is_object() || !body.contains("spec") || !body.contains("panel"))
        fail(ErrorKind::MalformedRecord, "expected {spec, panel}");
      const auto round = store.create_round(spec_from_json(body.at("spec")),
                                            body.at("panel").get<std::vector<std::string>>(),
                                            body.value("round_id", std::string()));
      send_json(res, round_json(round), 201);
    });
  });

  server.Get(p + R"(/rounds/([^/]+))", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      Json j = round_json(store.round(id));
      j["progress"] = to_json(store.progress(id));
      send_json(res, j);
    });
  });

  server.Get(p + R"(/rounds/([^/]+)/assignments)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!req.has_param("annotator")) fail(ErrorKind::InvalidArgument, "annotator query parameter is required");
      std::size_t n = 20;
      if (req.has_param("n")) {
        const auto v = req.get_param_value("n");
        std::size_t used = 0;
        long long parsed = -1;
        try {
          parsed = std::stoll(v, &used);
        } catch (const std::exception&) {
        }
        if (parsed < 0 || used != v.size()) fail(ErrorKind::InvalidArgument, "n must be a non-negative integer");
        n = static_cast<std::size_t>(parsed);
      }
      const auto categories = category_descriptors();
      Json arr = Json::array();
      for (const auto& s : store.next_assignments(req.get_param_value("annotator"), req.matches[1], n)) {
        Json j = corpus::to_json(s);
        j["categories"] = categories;
        arr.push_back(std::move(j));
      }
      send_json(res, arr);
    });
  });

  server.Post(p + R"(/rounds/([^/]+)/annotations)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto body = detail::parse_body(req);
      if (!body.is_object()) fail(ErrorKind::MalformedRecord, "annotation must be an object");
      const std::string id = req.matches[1];
      if (!body.contains("round_id")) body["round_id"] = id;
      const auto record = corpus::annotation_from_json(body);
      if (record.round_id != id) fail(ErrorKind::InvalidArgument, "round_id in body differs from the path");
      store.submit(record);
      send_json(res, Json{{"accepted", true}}, 201);
    });
  });

  server.Post(p + R"(/rounds/([^/]+)/revocations)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = detail::parse_body(req);
      Revocation rev{req.matches[1], body.at("sentence_id").get<std::string>(), body.at("annotator_id").get<std::string>(),
                     body.value("reason", std::string())};
      store.revoke(rev);
      send_json(res, Json{{"revoked", true}}, 201);
    });
  });

  server.Post(p + R"(/rounds/([^/]+)/close)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      store.close_round(req.matches[1]);
      send_json(res, round_json(store.round(req.matches[1]), false));
    });
  });

  server.Get(p + R"(/rounds/([^/]+)/agreement)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, to_json(store.round_agreement(req.matches[1]))); });
  });

  server.Get(p + R"(/rounds/([^/]+)/export)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      res.status = 200;
      res.set_content(store.export_round(req.matches[1]), "application/x-ndjson");
    });
  });
}

/// Opens the store at REVIEWLENS_DB_PATH (or `db_path`) and serves until stopped.
class Service {
 public:
  explicit Service(const std::filesystem::path& db_path) : store_(db_path) { register_routes(server_, store_); }

  Store& store() { return store_; }
  httplib::Server& server() { return server_; }

  /// Binds without blocking; returns the bound port (useful with port 0).
  int bind(const BindAddress& addr) {
    if (addr.port == 0) {
      const int port = server_.bind_to_any_port(addr.host);
      if (port < 0) fail(ErrorKind::Io, "cannot bind " + addr.host);
      return port;
    }
    if (!server_.bind_to_port(addr.host, addr.port))
      fail(ErrorKind::Io, "cannot bind " + addr.host + ":" + std::to_string(addr.port));
    return addr.port;
  }

  void run() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }

 private:
  Store store_;
  httplib::Server server_;
};

}  // namespace reviewlens::service
