#include "aifml/bus.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "aifml/behavior.hpp"
#include "aifml/experiments.hpp"
#include "aifml/records.hpp"

namespace aifml::bus {

namespace {

constexpr const char* known_types[] = {
    msg::observation, msg::record_batch, msg::train_request,  msg::train_status,
    msg::prediction,  msg::assessment,   msg::predict_request, msg::error,
};

std::pair<std::string, std::string> split_address(const std::string& address) {
  const std::size_t colon = address.rfind(':');
  if (colon == std::string::npos) {
    throw BusError("address must look like host:port, got " + address);
  }
  std::string host = address.substr(0, colon);
  std::string port = address.substr(colon + 1);
  if (host.empty()) host = "127.0.0.1";
  if (port.empty()) throw BusError("address has no port: " + address);
  return {host, port};
}

std::size_t read_some(int fd, char* buf, std::size_t want) {
  std::size_t got = 0;
  while (got < want) {
    const ssize_t n = ::read(fd, buf + got, want - got);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BusError(std::string("read failed: ") + std::strerror(errno));
    }
    if (n == 0) break;
    got += static_cast<std::size_t>(n);
  }
  return got;
}

void write_all(int fd, const char* buf, std::size_t len) {
  std::size_t sent = 0;
  while (sent < len) {
    const ssize_t n = ::send(fd, buf + sent, len - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BusError(std::string("write failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

records::LearningRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw BusError("record row must be an object");
  const auto opt = [&](const char* key) -> std::optional<double> {
    const nlohmann::json& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    if (!v.is_number()) throw BusError(std::string("record field ") + key + " must be a number");
    return v.get<double>();
  };
  records::LearningRecord r;
  r.date = j.at("date").get<std::string>();
  const int school = j.at("school").get<int>();
  if (school < 0 || school > 2) throw BusError("record school code out of range");
  r.school = static_cast<records::School>(school);
  r.grade = j.at("grade").get<int>();
  const int gender = j.at("gender").get<int>();
  if (gender < 0 || gender > 1) throw BusError("record gender code out of range");
  r.gender = static_cast<records::Gender>(gender);
  r.x4 = opt("x4");
  r.x5 = opt("x5");
  r.x6 = opt("x6");
  r.x7 = opt("x7");
  r.x8 = opt("x8");
  r.x9 = opt("x9");
  r.y1 = opt("y1");
  r.y2 = opt("y2");
  return r;
}

}  // namespace

bool is_known_type(const std::string& type) {
  for (const char* t : known_types) {
    if (type == t) return true;
  }
  return false;
}

nlohmann::json message_to_json(const AgentMessage& m) {
  nlohmann::json j;
  j["type"] = m.type;
  j["session"] = m.session;
  j["sender"] = m.sender;
  j["seq"] = m.seq;
  j["sent_at"] = m.sent_at;
  j["payload"] = m.payload;
  return j;
}

AgentMessage message_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw BusError("envelope must be a JSON object");
  for (const char* key : {"type", "session", "sender", "seq", "sent_at", "payload"}) {
    if (!j.contains(key)) throw BusError(std::string("envelope misses field ") + key);
  }
  if (j.size() != 6) throw BusError("envelope has unexpected extra fields");
  AgentMessage m;
  if (!j["type"].is_string() || !j["session"].is_string() || !j["sender"].is_string()) {
    throw BusError("envelope type, session, and sender must be strings");
  }
  m.type = j["type"].get<std::string>();
  m.session = j["session"].get<std::string>();
  m.sender = j["sender"].get<std::string>();
  if (!j["seq"].is_number_unsigned()) throw BusError("envelope seq must be a non-negative integer");
  m.seq = j["seq"].get<std::uint64_t>();
  if (!j["sent_at"].is_number_integer()) throw BusError("envelope sent_at must be an integer");
  m.sent_at = j["sent_at"].get<std::int64_t>();
  if (!j["payload"].is_object()) throw BusError("envelope payload must be an object");
  m.payload = j["payload"];
  return m;
}

std::string encode_frame(const AgentMessage& m) {
  const std::string body = message_to_json(m).dump();
  if (body.size() > max_frame_body) {
    throw BusError("frame body exceeds the 16 MiB limit: " + std::to_string(body.size()));
  }
  std::string out;
  out.reserve(body.size() + 4);
  const std::uint32_t len = static_cast<std::uint32_t>(body.size());
  out.push_back(static_cast<char>((len >> 24) & 0xff));
  out.push_back(static_cast<char>((len >> 16) & 0xff));
  out.push_back(static_cast<char>((len >> 8) & 0xff));
  out.push_back(static_cast<char>(len & 0xff));
  out += body;
  return out;
}

AgentMessage decode_frame(std::string_view frame) {
  if (frame.size() < 4) throw BusError("truncated frame: missing length prefix");
  const auto* b = reinterpret_cast<const unsigned char*>(frame.data());
  const std::uint32_t len = (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
                            (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
  if (len > max_frame_body) {
    throw BusError("frame body exceeds the 16 MiB limit: " + std::to_string(len));
  }
  if (frame.size() - 4 < len) {
    throw BusError("truncated frame: body shorter than declared length");
  }
  if (frame.size() - 4 > len) {
    throw BusError("frame has trailing bytes beyond the declared length");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(frame.substr(4));
  } catch (const nlohmann::json::exception& e) {
    throw BusError(std::string("frame body is not valid JSON: ") + e.what());
  }
  return message_from_json(j);
}

std::int64_t now_epoch_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// ---------------------------------------------------------------------
// Sockets.

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    o.fd_ = -1;
  }
  return *this;
}

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

Socket connect_to(const std::string& address) {
  const auto [host, port] = split_address(address);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &found);
  if (rc != 0) throw BusError("cannot resolve " + address + ": " + gai_strerror(rc));
  Socket sock;
  std::string last_error = "no addresses";
  for (addrinfo* ai = found; ai; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
      last_error = std::strerror(errno);
      continue;
    }
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
      sock = Socket(fd);
      break;
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(found);
  if (!sock.valid()) throw BusError("cannot connect to " + address + ": " + last_error);
  return sock;
}

void send_message(int fd, const AgentMessage& m) {
  const std::string frame = encode_frame(m);
  write_all(fd, frame.data(), frame.size());
}

std::optional<AgentMessage> receive_message(int fd) {
  char header[4];
  const std::size_t got = read_some(fd, header, 4);
  if (got == 0) return std::nullopt;
  if (got < 4) throw BusError("truncated frame: connection closed inside the length prefix");
  const auto* b = reinterpret_cast<const unsigned char*>(header);
  const std::uint32_t len = (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
                            (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
  if (len > max_frame_body) {
    throw BusError("frame body exceeds the 16 MiB limit: " + std::to_string(len));
  }
  std::string body(len, '\0');
  if (read_some(fd, body.data(), len) < len) {
    throw BusError("truncated frame: connection closed inside the body");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw BusError(std::string("frame body is not valid JSON: ") + e.what());
  }
  return message_from_json(j);
}

// ---------------------------------------------------------------------
// Server.

struct Server::Connection {
  Socket sock;
  std::mutex write_mu;
  std::uint64_t out_seq = 0;
  std::atomic<bool> dead{false};
};

struct Server::SessionState {
  mutable std::mutex mu;
  std::map<std::string, std::uint64_t> last_seq;
  std::vector<nlohmann::json> observations;
  std::vector<nlohmann::json> records;
  bool training = false;
  std::thread trainer;
  std::optional<dnn::Mlp> model;
  std::string model_id;
  int models_trained = 0;
  int model_experiment = 0;
  std::vector<nlohmann::json> predictions;
  std::vector<dnn::EpochLoss> last_trace;
};

Server::Server(ServerConfig cfg) : cfg_(std::move(cfg)) {}

Server::~Server() { stop(); }

void Server::start() {
  const auto [host, port] = split_address(cfg_.listen);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* found = nullptr;
  const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &found);
  if (rc != 0) throw BusError("cannot resolve " + cfg_.listen + ": " + gai_strerror(rc));
  int fd = -1;
  std::string last_error = "no addresses";
  for (addrinfo* ai = found; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
      last_error = std::strerror(errno);
      continue;
    }
    const int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 64) == 0) break;
    last_error = std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(found);
  if (fd < 0) throw BusError("cannot listen on " + cfg_.listen + ": " + last_error);
  listener_ = Socket(fd);

  sockaddr_in bound{};
  socklen_t bound_len = sizeof bound;
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &bound_len) == 0) {
    port_ = ntohs(bound.sin_port);
  }
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

std::string Server::address() const {
  const auto [host, port] = split_address(cfg_.listen);
  (void)port;
  return host + ":" + std::to_string(port_);
}

void Server::stop() {
  if (!listener_.valid() && !acceptor_.joinable()) return;
  stopping_ = true;
  listener_.shutdown();
  listener_.close();
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard<std::mutex> lock(conns_mu_);
    for (auto& conn : conns_) conn->sock.shutdown();
  }
  for (auto& t : conn_threads_) {
    if (t.joinable()) t.join();
  }
  conn_threads_.clear();
  {
    std::lock_guard<std::mutex> lock(sessions_mu_);
    for (auto& [id, st] : sessions_) {
      std::thread trainer;
      {
        std::lock_guard<std::mutex> slock(st->mu);
        trainer = std::move(st->trainer);
      }
      if (trainer.joinable()) trainer.join();
    }
  }
  std::lock_guard<std::mutex> lock(conns_mu_);
  conns_.clear();
}

void Server::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listener_.fd(), nullptr, nullptr);
    if (fd < 0) {
      if (stopping_) break;
      if (errno == EINTR) continue;
      break;
    }
    auto conn = std::make_shared<Connection>();
    conn->sock = Socket(fd);
    std::lock_guard<std::mutex> lock(conns_mu_);
    conns_.push_back(conn);
    conn_threads_.emplace_back([this, conn] { serve_connection(conn); });
  }
}

void Server::serve_connection(std::shared_ptr<Connection> conn) {
  for (;;) {
    std::optional<AgentMessage> m;
    try {
      m = receive_message(conn->sock.fd());
    } catch (const BusError& e) {
      reply_error(conn, "", "bad_frame", e.what(), 0);
      break;
    }
    if (!m) break;
    try {
      handle(conn, *m);
    } catch (const std::exception& e) {
      reply_error(conn, m->session, "internal", e.what(), m->seq);
    }
  }
  conn->sock.close();
  conn->dead = true;
}

Server::SessionState& Server::session(const std::string& id) const {
  std::lock_guard<std::mutex> lock(sessions_mu_);
  auto& slot = sessions_[id];
  if (!slot) slot = std::make_unique<SessionState>();
  return *slot;
}

void Server::reply(const std::shared_ptr<Connection>& conn, const std::string& session,
                   const std::string& type, nlohmann::json payload) {
  AgentMessage m;
  m.type = type;
  m.session = session;
  m.sender = "server";
  m.sent_at = now_epoch_ms();
  m.payload = std::move(payload);
  std::lock_guard<std::mutex> lock(conn->write_mu);
  m.seq = ++conn->out_seq;
  try {
    send_message(conn->sock.fd(), m);
  } catch (const BusError&) {
    conn->dead = true;
  }
}

void Server::reply_error(const std::shared_ptr<Connection>& conn, const std::string& session,
                         const std::string& code, const std::string& message, std::uint64_t re) {
  reply(conn, session, msg::error, {{"code", code}, {"message", message}, {"re", re}});
}

void Server::handle(const std::shared_ptr<Connection>& conn, const AgentMessage& m) {
  if (!is_known_type(m.type)) {
    reply_error(conn, m.session, "unknown_type", "unknown message type " + m.type, m.seq);
    return;
  }
  SessionState& st = session(m.session);

  if (m.type == msg::observation || m.type == msg::record_batch) {
    std::vector<nlohmann::json> rows;
    if (m.type == msg::record_batch) {
      if (!m.payload.contains("rows") || !m.payload["rows"].is_array()) {
        reply_error(conn, m.session, "bad_request", "RECORD_BATCH payload needs a rows array",
                    m.seq);
        return;
      }
      for (const nlohmann::json& row : m.payload["rows"]) {
        if (!row.is_object() || !row.contains("student") || !row.contains("row")) {
          reply_error(conn, m.session, "bad_request",
                      "each record needs student and row fields", m.seq);
          return;
        }
        try {
          record_from_json(row["row"]);
        } catch (const std::exception& e) {
          reply_error(conn, m.session, "bad_request", e.what(), m.seq);
          return;
        }
        rows.push_back(row);
      }
    }
    {
      std::lock_guard<std::mutex> lock(st.mu);
      std::uint64_t& last = st.last_seq[m.sender];
      if (m.seq > last) {
        last = m.seq;
        if (m.type == msg::observation) {
          st.observations.push_back(m.payload);
        } else {
          for (auto& row : rows) st.records.push_back(std::move(row));
        }
      }
    }
    reply(conn, m.session, m.type, {{"ack", m.seq}});
    return;
  }

  if (m.type == msg::train_request) {
    const int experiment = m.payload.value("experiment", 2);
    const int epochs = m.payload.value("epochs", cfg_.default_epochs);
    const std::uint64_t seed = m.payload.value("seed", cfg_.default_seed);
    if (experiment < 1 || experiment > 4 || epochs < 1) {
      reply_error(conn, m.session, "bad_request", "experiment must be 1..4 and epochs >= 1",
                  m.seq);
      return;
    }
    {
      std::lock_guard<std::mutex> lock(st.mu);
      if (st.training) {
        reply_error(conn, m.session, "busy", "a training run is already active", m.seq);
        return;
      }
      if (st.trainer.joinable()) st.trainer.join();
      st.training = true;
      st.trainer = std::thread([this, conn, session_id = m.session, experiment, epochs, seed,
                                request_seq = m.seq] {
        run_training(conn, session_id, experiment, epochs, seed, request_seq);
      });
    }
    return;
  }

  if (m.type == msg::predict_request) {
    std::optional<dnn::Mlp> model;
    std::string model_id;
    int model_experiment = 0;
    std::vector<nlohmann::json> rows;
    {
      std::lock_guard<std::mutex> lock(st.mu);
      if (!st.model) {
        reply_error(conn, m.session, "no_model", "no model trained for this session", m.seq);
        return;
      }
      model = st.model;
      model_id = st.model_id;
      model_experiment = st.model_experiment;
      rows = st.records;
    }
    const std::size_t want = static_cast<std::size_t>(model->spec.input_width);
    if (m.payload.contains("features")) {
      const nlohmann::json& f = m.payload["features"];
      if (!f.is_array() || f.size() != want) {
        reply_error(conn, m.session, "bad_request",
                    "features must be an array of " + std::to_string(want) + " numbers", m.seq);
        return;
      }
      std::vector<double> x;
      for (const auto& v : f) {
        if (!v.is_number()) {
          reply_error(conn, m.session, "bad_request", "features must be numbers", m.seq);
          return;
        }
        x.push_back(v.get<double>());
      }
      const double y = dnn::predict(*model, x);
      nlohmann::json entry = {{"student", m.payload.value("student", "")},
                              {"y", y},
                              {"model", model_id}};
      {
        std::lock_guard<std::mutex> lock(st.mu);
        st.predictions.push_back(entry);
      }
      entry["re"] = m.seq;
      reply(conn, m.session, msg::prediction, entry);
      return;
    }
    if (m.payload.value("from_records", false)) {
      if (rows.empty()) {
        reply_error(conn, m.session, "bad_request", "no records stored for this session", m.seq);
        return;
      }
      try {
        records::Dataset ds;
        for (const auto& row : rows) ds.records.push_back(record_from_json(row.at("row")));
        records::Dataset filled = records::impute_nulls(ds);
        records::Dataset scaled =
            records::standardize(filled, experiments::grouping_for(model_experiment));
        records::FeatureMatrix mat =
            records::to_matrix(scaled, experiments::feature_set_for(model_experiment));
        nlohmann::json preds = nlohmann::json::array();
        std::vector<nlohmann::json> entries;
        for (std::size_t i = 0; i < mat.rows.size(); ++i) {
          const double y = dnn::predict(*model, mat.rows[i]);
          nlohmann::json entry = {{"student", rows[i].at("student")},
                                  {"y", y},
                                  {"model", model_id}};
          preds.push_back(entry);
          entries.push_back(std::move(entry));
        }
        {
          std::lock_guard<std::mutex> lock(st.mu);
          for (auto& e : entries) st.predictions.push_back(std::move(e));
        }
        reply(conn, m.session, msg::prediction,
              {{"model", model_id},
               {"count", preds.size()},
               {"predictions", preds},
               {"re", m.seq}});
      } catch (const std::exception& e) {
        reply_error(conn, m.session, "predict_failed", e.what(), m.seq);
      }
      return;
    }
    reply_error(conn, m.session, "bad_request",
                "PREDICT_REQUEST needs features or from_records", m.seq);
    return;
  }

  if (m.type == msg::assessment) {
    std::vector<nlohmann::json> predictions;
    std::vector<nlohmann::json> observations;
    {
      std::lock_guard<std::mutex> lock(st.mu);
      predictions = st.predictions;
      observations = st.observations;
    }
    const behavior::BehaviorOntology ontology = behavior::BehaviorOntology::default_ontology();
    nlohmann::json assessments = nlohmann::json::array();
    for (const nlohmann::json& p : predictions) {
      const std::string student = p.value("student", "");
      std::vector<behavior::IrtResponse> responses;
      std::vector<behavior::BehaviorEvent> events;
      for (const nlohmann::json& ev : observations) {
        const std::string kind = ev.value("kind", "");
        if (ev.value("student", "") != student) continue;
        if (kind == "attempt") {
          behavior::IrtResponse r;
          r.item = ev.value("question", "");
          r.difficulty = ev.value("difficulty", 0.0);
          r.correct = ev.value("outcome", "") == std::string("correct");
          responses.push_back(std::move(r));
        } else if (kind == "observation") {
          behavior::BehaviorEvent be;
          be.student = student;
          be.timestamp = ev.value("t", 0.0);
          be.node = behavior::classify_activity(ev.value("activity", ""), ontology);
          be.source = behavior::EventSource::perception_agent;
          be.confidence = ev.value("confidence", 1.0);
          events.push_back(std::move(be));
        }
      }
      behavior::AbilityEstimate est;
      est.student = student;
      if (!responses.empty()) est = behavior::estimate_ability(responses, student);
      nlohmann::json a = behavior::assessment_report(events, est, ontology);
      a["session"] = m.session;
      a["predicted_score"] = p.at("y");
      a["model"] = p.at("model");
      char summary[256];
      std::snprintf(summary, sizeof summary,
                    "student %s: predicted score %.2f, ability %.2f (se %.2f) from %zu answers, "
                    "%zu behavior observations",
                    student.empty() ? "(unknown)" : student.c_str(), p.at("y").get<double>(),
                    est.theta, est.se, est.n_responses, events.size());
      a["summary"] = summary;
      assessments.push_back(std::move(a));
    }
    reply(conn, m.session, msg::assessment,
          {{"assessments", assessments}, {"count", assessments.size()}, {"re", m.seq}});
    return;
  }

  reply_error(conn, m.session, "unexpected_type",
              "clients do not send " + m.type + " to the service", m.seq);
}

void Server::run_training(std::shared_ptr<Connection> conn, const std::string& session_id,
                          int experiment, int epochs, std::uint64_t seed,
                          std::uint64_t request_seq) {
  SessionState& st = session(session_id);
  std::vector<nlohmann::json> rows;
  {
    std::lock_guard<std::mutex> lock(st.mu);
    rows = st.records;
  }
  try {
    if (rows.empty()) throw BusError("no records stored for this session");
    records::Dataset ds;
    for (const auto& row : rows) ds.records.push_back(record_from_json(row.at("row")));
    experiments::Prepared prep = experiments::prepare(ds, experiment, cfg_.fence);

    dnn::NetworkSpec spec = dnn::NetworkSpec::experiment_preset(experiment);
    spec.epochs = epochs;
    auto [model, trace] =
        dnn::train(spec, prep.matrix, seed, [&](int epoch, const dnn::EpochLoss& loss) {
          reply(conn, session_id, msg::train_status,
                {{"status", "running"},
                 {"epoch", epoch},
                 {"train_loss", loss.train_loss},
                 {"validation_loss", loss.validation_loss}});
        });

    std::string model_id;
    {
      std::lock_guard<std::mutex> lock(st.mu);
      st.model = std::move(model);
      st.models_trained += 1;
      st.model_id = "m" + std::to_string(st.models_trained);
      st.model_experiment = experiment;
      st.last_trace = trace.epochs;
      st.training = false;
      model_id = st.model_id;
    }
    nlohmann::json done = {{"status", "done"},
                           {"model", model_id},
                           {"experiment", experiment},
                           {"epochs", trace.epochs.size()},
                           {"re", request_seq}};
    if (!trace.epochs.empty()) {
      done["final_train_loss"] = trace.epochs.back().train_loss;
      done["final_validation_loss"] = trace.epochs.back().validation_loss;
    }
    reply(conn, session_id, msg::train_status, done);
  } catch (const std::exception& e) {
    {
      std::lock_guard<std::mutex> lock(st.mu);
      st.training = false;
    }
    reply_error(conn, session_id, "train_failed", e.what(), request_seq);
  }
}

nlohmann::json Server::session_snapshot(const std::string& id) const {
  SessionState& st = session(id);
  std::lock_guard<std::mutex> lock(st.mu);
  nlohmann::json j;
  j["observations"] = st.observations;
  j["records"] = st.records;
  j["last_seq"] = st.last_seq;
  j["model"] = st.model ? nlohmann::json(st.model_id) : nlohmann::json(nullptr);
  j["predictions"] = st.predictions;
  j["training"] = st.training;
  return j;
}

// ---------------------------------------------------------------------
// Clients.

Client::Client(std::string address, std::string session, std::string sender)
    : address_(std::move(address)), session_(std::move(session)), sender_(std::move(sender)) {}

Client::~Client() { close(); }

void Client::connect(int attempts) {
  for (int i = 1;; ++i) {
    try {
      sock_ = connect_to(address_);
      return;
    } catch (const BusError&) {
      if (i >= attempts) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
  }
}

void Client::close() { sock_.close(); }

AgentMessage Client::make(const std::string& type, nlohmann::json payload, std::uint64_t seq) {
  AgentMessage m;
  m.type = type;
  m.session = session_;
  m.sender = sender_;
  m.seq = seq;
  m.sent_at = now_epoch_ms();
  m.payload = std::move(payload);
  return m;
}

void Client::send(const AgentMessage& m) {
  if (!connected()) connect();
  send_message(sock_.fd(), m);
}

AgentMessage Client::receive() {
  if (!connected()) throw BusError("not connected");
  std::optional<AgentMessage> m = receive_message(sock_.fd());
  if (!m) throw BusError("connection closed by the service");
  return *m;
}

AgentMessage Client::request(const std::string& type, nlohmann::json payload) {
  send(make(type, std::move(payload), next_seq()));
  return receive();
}

AgentMessage Client::train(int experiment, int epochs, std::uint64_t seed,
                           const std::function<void(const nlohmann::json&)>& on_status) {
  send(make(msg::train_request,
            {{"experiment", experiment}, {"epochs", epochs}, {"seed", seed}}, next_seq()));
  for (;;) {
    AgentMessage r = receive();
    if (r.type == msg::error) return r;
    if (r.type != msg::train_status) {
      throw BusError("unexpected reply while training: " + r.type);
    }
    if (r.payload.value("status", "") == "done") return r;
    if (on_status) on_status(r.payload);
  }
}

void PerceptionClient::enqueue(const std::string& type, nlohmann::json payload) {
  outbox_.push_back({make(type, std::move(payload), next_seq())});
}

void PerceptionClient::flush(int reconnect_attempts) {
  int failures = 0;
  while (!outbox_.empty()) {
    const AgentMessage& m = outbox_.front().message;
    AgentMessage r;
    try {
      if (!connected()) connect();
      send(m);
      r = receive();
    } catch (const BusError&) {
      close();
      if (++failures > reconnect_attempts) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
      continue;
    }
    if (r.type == msg::error) {
      throw BusError("service rejected message: " + r.payload.dump());
    }
    if (r.type != m.type || !r.payload.contains("ack") ||
        r.payload["ack"].get<std::uint64_t>() != m.seq) {
      throw BusError("bad acknowledgement: " + r.payload.dump());
    }
    outbox_.erase(outbox_.begin());
    failures = 0;
  }
}

void PerceptionClient::observe(nlohmann::json payload) {
  enqueue(msg::observation, std::move(payload));
  flush();
}

void PerceptionClient::drop_connection() { close(); }

ReplayCounts PerceptionClient::replay_file(const std::string& path, std::size_t batch_rows) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BusError("cannot open events file " + path);
  ReplayCounts counts;
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw BusError(path + ":" + std::to_string(line_no) + " is not valid JSON: " + e.what());
    }
    const std::string kind = j.value("kind", "");
    if (kind == "observation" || kind == "attempt") {
      enqueue(msg::observation, j);
      counts.observations += 1;
    } else if (kind == "record") {
      rows.push_back({{"student", j.at("student")}, {"row", j.at("row")}});
      counts.record_rows += 1;
    } else {
      throw BusError(path + ":" + std::to_string(line_no) + " has unknown event kind " + kind);
    }
  }
  for (std::size_t i = 0; i < rows.size(); i += batch_rows) {
    const std::size_t end = std::min(rows.size(), i + batch_rows);
    nlohmann::json batch = nlohmann::json::array();
    for (std::size_t k = i; k < end; ++k) batch.push_back(rows[k]);
    enqueue(msg::record_batch, {{"rows", batch}});
    counts.batches += 1;
  }
  flush();
  return counts;
}

nlohmann::json CognitionClient::fetch_assessments() {
  AgentMessage r = request(msg::assessment, nlohmann::json::object());
  if (r.type == msg::error) {
    throw BusError("service rejected assessment request: " + r.payload.dump());
  }
  if (r.type != msg::assessment) throw BusError("unexpected reply type " + r.type);
  return r.payload.value("assessments", nlohmann::json::array());
}

std::size_t CognitionClient::write_assessments(const std::string& path) {
  const nlohmann::json assessments = fetch_assessments();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw BusError("cannot write " + path);
  for (const nlohmann::json& a : assessments) {
    out << a.dump() << '\n';
  }
  return assessments.size();
}

}  // namespace aifml::bus
