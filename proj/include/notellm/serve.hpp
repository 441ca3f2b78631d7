#pragma once

// Read-only related-note service over TCP.
//
// Wire protocol: one JSON object per line in each direction.
//
//   request   {"id": "<note id>", "k": 10}
//             {"note": {"title": "...", "content": "...", "hashtags": [...],
//                       "category": "...", "id": "..."}, "k": 10}
//   success   {"ok": true, "results": [{"id": "...", "sim": 0.93}, ...]}
//   failure   {"ok": false, "code": "<code>", "message": "..."}
//
// `k` defaults to 10 and must be a positive integer. Codes: "bad_request"
// (unparseable line, wrong field types, k < 1, line over 1 MiB) and
// "unknown_id". Id queries exclude the note itself. Raw-note queries are
// embedded server-side with the same prompt used to build the store; every
// note field is optional, and a given id that exists in the store is excluded.
// After an error the connection stays open, except for overlong lines.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "notellm/eval.hpp"
#include "notellm/store.hpp"

namespace notellm {

inline constexpr std::size_t kDefaultK = 10;
inline constexpr std::size_t kMaxRequestBytes = 1 << 20;

struct QueryResult {
  std::string id;
  double sim = 0.0;

  friend bool operator==(const QueryResult&, const QueryResult&) = default;
};

class RetrievalService {
 public:
  RetrievalService(EmbeddingStore store, ModelParams<float> params, std::uint64_t checkpoint_fingerprint,
                   TruncationConfig trunc = {})
      : params_(std::move(params)), index_(store.vectors, store.ids), trunc_(trunc) {
    if (store.fingerprint != checkpoint_fingerprint)
      throw Error("store was built from checkpoint " + hex64(store.fingerprint) + ", not " +
                  hex64(checkpoint_fingerprint));
    if (store.dim() != params_.config.embed_dim)
      throw Error("store dimension " + std::to_string(store.dim()) + " does not match model embed_dim " +
                  std::to_string(params_.config.embed_dim));
    for (std::size_t i = 0; i < index_.size(); ++i) by_id_.emplace(index_.ids()[i], i);
  }

  const RankIndex& index() const { return index_; }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<QueryResult> by_id(const std::string& id, std::size_t k) const {
    auto idx = find(id);
    if (!idx) throw UnknownId(id);
    return results(index_.rank(*idx, k));
  }

  std::vector<QueryResult> by_note(const Note& n, std::size_t k) const {
    const Mat<float> q = note_embedding(params_, build_embedding_prompt(n, trunc_));
    return results(index_.query(q.data(), n.id.empty() ? std::nullopt : find(n.id), k));
  }

  // One request line in, one response line out (without the newline).
  std::string handle(std::string_view line) const {
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      return error("bad_request", "request is not valid JSON");
    }
    if (!req.is_object()) return error("bad_request", "request must be a JSON object");
    std::size_t k = kDefaultK;
    if (auto it = req.find("k"); it != req.end()) {
      if (!it->is_number_integer() || it->get<std::int64_t>() < 1) return error("bad_request", "k must be an integer >= 1");
      k = it->get<std::size_t>();
    }
    const bool has_id = req.contains("id"), has_note = req.contains("note");
    if (has_id == has_note) return error("bad_request", "exactly one of 'id' or 'note' is required");
    try {
      std::vector<QueryResult> res;
      if (has_id) {
        if (!req["id"].is_string()) return error("bad_request", "id must be a string");
        res = by_id(req["id"].get<std::string>(), k);
      } else {
        res = by_note(parse_note(req["note"]), k);
      }
      nlohmann::ordered_json out;
      out["ok"] = true;
      out["results"] = nlohmann::ordered_json::array();
      for (const auto& r : res) out["results"].push_back({{"id", r.id}, {"sim", r.sim}});
      return out.dump();
    } catch (const UnknownId& e) {
      return error("unknown_id", e.what());
    } catch (const Error& e) {
      return error("bad_request", e.what());
    }
  }

  static std::string error(const std::string& code, const std::string& message) {
    nlohmann::ordered_json out;
    out["ok"] = false;
    out["code"] = code;
    out["message"] = message;
    return out.dump();
  }

 private:
  struct UnknownId : Error {
    explicit UnknownId(const std::string& id) : Error("unknown note id '" + id + "'") {}
  };

  static Note parse_note(const nlohmann::json& j) {
    if (!j.is_object()) throw Error("note must be a JSON object");
    Note n;
    auto str = [&](const char* key, std::string& dst) {
      if (auto it = j.find(key); it != j.end()) {
        if (!it->is_string()) throw Error(std::string("note.") + key + " must be a string");
        dst = it->get<std::string>();
      }
    };
    str("id", n.id);
    str("title", n.title);
    str("content", n.content);
    str("category", n.category);
    if (auto it = j.find("hashtags"); it != j.end()) {
      if (!it->is_array()) throw Error("note.hashtags must be a list");
      for (const auto& t : *it) {
        if (!t.is_string()) throw Error("note.hashtags must hold strings");
        n.hashtags.push_back(t.get<std::string>());
      }
    }
    return n;
  }

  std::vector<QueryResult> results(const std::vector<ScoredNote>& ranked) const {
    std::vector<QueryResult> out;
    out.reserve(ranked.size());
    for (const auto& s : ranked) out.push_back({index_.ids()[s.index], s.sim});
    return out;
  }

  ModelParams<float> params_;
  RankIndex index_;
  TruncationConfig trunc_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// ---------------------------------------------------------------------------
// Sockets

namespace detail {

inline bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

// Buffered line reader over a socket.
class LineReader {
 public:
  explicit LineReader(int fd) : fd_(fd) {}

  // false on EOF/error; `overlong` set when a line exceeds the limit.
  bool next(std::string& line, bool& overlong) {
    overlong = false;
    for (;;) {
      const auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        line.assign(buf_, 0, nl);
        buf_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
      }
      if (buf_.size() > kMaxRequestBytes) {
        overlong = true;
        return true;
      }
      char chunk[4096];
      const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return false;
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  std::string buf_;
};

inline std::pair<std::string, std::string> split_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) throw Error("address must be host:port, got '" + address + "'");
  return {address.substr(0, colon), address.substr(colon + 1)};
}

}  // namespace detail

class Server {
 public:
  explicit Server(const RetrievalService& service) : service_(service) {}
  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and starts accepting in the background. Port 0 picks a free port.
  void start(const std::string& address) {
    const auto [host, port] = detail::split_address(address);
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), port.c_str(), &hints, &res); rc != 0)
      throw Error("cannot resolve '" + address + "': " + ::gai_strerror(rc));
    listen_fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    const bool ok = listen_fd_ >= 0 && ::bind(listen_fd_, res->ai_addr, res->ai_addrlen) == 0 &&
                    ::listen(listen_fd_, 128) == 0;
    ::freeaddrinfo(res);
    if (!ok) {
      const std::string why = std::strerror(errno);
      if (listen_fd_ >= 0) ::close(listen_fd_);
      listen_fd_ = -1;
      throw Error("cannot listen on '" + address + "': " + why);
    }
    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  std::uint16_t port() const { return port_; }

  void stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();
    std::list<Worker> workers;
    {
      std::lock_guard lock(mu_);
      for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
      workers.swap(workers_);
    }
    for (auto& w : workers) w.thread.join();
    stopped_.notify_all();
  }

  // Blocks until stop() is called from another thread.
  void wait() {
    std::unique_lock lock(mu_);
    stopped_.wait(lock, [this] { return !running_; });
  }

 private:
  void accept_loop() {
    while (running_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR || errno == ECONNABORTED) continue;
        break;
      }
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lock(mu_);
      if (!running_) {
        ::close(fd);
        break;
      }
      reap_finished();
      open_fds_.push_back(fd);
      auto& w = workers_.emplace_back();
      w.thread = std::thread([this, fd, &w] {
        serve_connection(fd);
        w.done = true;
      });
    }
  }

  // Caller holds mu_.
  void reap_finished() {
    for (auto it = workers_.begin(); it != workers_.end();) {
      if (it->done) {
        it->thread.join();
        it = workers_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void serve_connection(int fd) {
    detail::LineReader reader(fd);
    std::string line;
    bool overlong = false;
    while (reader.next(line, overlong)) {
      if (overlong) {
        detail::send_all(fd, RetrievalService::error("bad_request", "request line exceeds 1 MiB") + "\n");
        break;
      }
      if (trim(line).empty()) continue;
      if (!detail::send_all(fd, service_.handle(line) + "\n")) break;
    }
    std::lock_guard lock(mu_);
    open_fds_.remove(fd);
    ::close(fd);
  }

  const RetrievalService& service_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  struct Worker {
    std::thread thread;
    std::atomic<bool> done{false};
  };

  std::mutex mu_;
  std::condition_variable stopped_;
  std::list<int> open_fds_;
  std::list<Worker> workers_;
};

// Minimal blocking client: one request line, one response line.
class Client {
 public:
  Client(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const auto port_s = std::to_string(port);
    if (int rc = ::getaddrinfo(host.c_str(), port_s.c_str(), &hints, &res); rc != 0)
      throw Error("cannot resolve '" + host + "': " + ::gai_strerror(rc));
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const bool ok = fd_ >= 0 && ::connect(fd_, res->ai_addr, res->ai_addrlen) == 0;
    ::freeaddrinfo(res);
    if (!ok) {
      if (fd_ >= 0) ::close(fd_);
      throw Error("cannot connect to " + host + ":" + port_s);
    }
    const int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    reader_ = std::make_unique<detail::LineReader>(fd_);
  }
  ~Client() {
    if (fd_ >= 0) ::close(fd_);
  }
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  std::string request(std::string_view line) {
    if (!detail::send_all(fd_, std::string(line) + "\n")) throw Error("send failed");
    std::string out;
    bool overlong = false;
    if (!reader_->next(out, overlong) || overlong) throw Error("connection closed");
    return out;
  }

 private:
  int fd_ = -1;
  std::unique_ptr<detail::LineReader> reader_;
};

}  // namespace notellm
