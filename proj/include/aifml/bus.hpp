#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "aifml/dnn.hpp"

namespace aifml::bus {

struct BusError : std::runtime_error {
  explicit BusError(const std::string& what) : std::runtime_error(what) {}
};

// Wire type names.
namespace msg {
inline constexpr const char* observation = "OBSERVATION";
inline constexpr const char* record_batch = "RECORD_BATCH";
inline constexpr const char* train_request = "TRAIN_REQUEST";
inline constexpr const char* train_status = "TRAIN_STATUS";
inline constexpr const char* predict_request = "PREDICT_REQUEST";
inline constexpr const char* prediction = "PREDICTION";
inline constexpr const char* assessment = "ASSESSMENT";
inline constexpr const char* error = "ERROR";
}  // namespace msg

bool is_known_type(const std::string& type);

struct AgentMessage {
  std::string type;
  std::string session;
  std::string sender;
  std::uint64_t seq = 0;
  std::int64_t sent_at = 0;  // epoch milliseconds
  nlohmann::json payload = nlohmann::json::object();

  bool operator==(const AgentMessage&) const = default;
};

inline constexpr std::size_t max_frame_body = 16u * 1024 * 1024;

nlohmann::json message_to_json(const AgentMessage& m);
AgentMessage message_from_json(const nlohmann::json& j);

// Frame layout: 4-byte big-endian body length, then the body as the
// canonical (sorted-key) JSON of the envelope.
std::string encode_frame(const AgentMessage& m);
AgentMessage decode_frame(std::string_view frame);

std::int64_t now_epoch_ms();

// --------------------------------------------------------------------
// Blocking socket plumbing shared by the server and the clients.

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  bool valid() const { return fd_ >= 0; }
  int fd() const { return fd_; }
  void close();
  void shutdown();

 private:
  int fd_ = -1;
};

Socket connect_to(const std::string& address);
void send_message(int fd, const AgentMessage& m);
// nullopt on clean end of stream; throws on truncation, oversize, or a
// body that does not parse as an envelope.
std::optional<AgentMessage> receive_message(int fd);

// --------------------------------------------------------------------
// Computational-agent service.

struct ServerConfig {
  std::string listen = "127.0.0.1:0";
  int default_epochs = 20;
  std::uint64_t default_seed = 7;
  double fence = 1.9;
};

class Server {
 public:
  explicit Server(ServerConfig cfg = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start();
  void stop();
  int port() const { return port_; }
  std::string address() const;

  // Point-in-time copy of one session's store, for tests and diagnostics.
  nlohmann::json session_snapshot(const std::string& session) const;

 private:
  struct SessionState;
  struct Connection;

  void accept_loop();
  void serve_connection(std::shared_ptr<Connection> conn);
  void handle(const std::shared_ptr<Connection>& conn, const AgentMessage& m);
  SessionState& session(const std::string& id) const;
  void reply(const std::shared_ptr<Connection>& conn, const std::string& session,
             const std::string& type, nlohmann::json payload);
  void reply_error(const std::shared_ptr<Connection>& conn, const std::string& session,
                   const std::string& code, const std::string& message, std::uint64_t re);
  void run_training(std::shared_ptr<Connection> conn, const std::string& session_id,
                    int experiment, int epochs, std::uint64_t seed, std::uint64_t request_seq);

  ServerConfig cfg_;
  Socket listener_;
  int port_ = 0;
  std::thread acceptor_;
  std::atomic<bool> stopping_{false};

  mutable std::mutex sessions_mu_;
  mutable std::map<std::string, std::unique_ptr<SessionState>> sessions_;

  std::mutex conns_mu_;
  std::vector<std::shared_ptr<Connection>> conns_;
  std::vector<std::thread> conn_threads_;
};

// --------------------------------------------------------------------
// Clients. Both are single-connection sequential senders.

class Client {
 public:
  Client(std::string address, std::string session, std::string sender);
  ~Client();

  void connect(int attempts = 1);
  void close();
  bool connected() const { return sock_.valid(); }
  const std::string& session() const { return session_; }

  std::uint64_t next_seq() { return ++seq_; }
  void send(const AgentMessage& m);
  AgentMessage receive();
  // Sends one message with a fresh seq and returns the first reply.
  AgentMessage request(const std::string& type, nlohmann::json payload);

  // Sends TRAIN_REQUEST and drains the status stream until the terminal
  // "done" status or an ERROR, invoking on_status per running epoch.
  AgentMessage train(int experiment, int epochs, std::uint64_t seed,
                     const std::function<void(const nlohmann::json&)>& on_status = {});

 protected:
  AgentMessage make(const std::string& type, nlohmann::json payload, std::uint64_t seq);

  std::string address_;
  std::string session_;
  std::string sender_;
  Socket sock_;
  std::uint64_t seq_ = 0;
};

struct ReplayCounts {
  std::size_t observations = 0;
  std::size_t record_rows = 0;
  std::size_t batches = 0;
};

class PerceptionClient : public Client {
 public:
  PerceptionClient(std::string address, std::string session)
      : Client(std::move(address), std::move(session), "perception") {}

  // Queues without sending; flush() delivers in order with per-message
  // acknowledgement and resends from the first unacknowledged message
  // after a reconnect.
  void enqueue(const std::string& type, nlohmann::json payload);
  void flush(int reconnect_attempts = 5);
  std::size_t pending() const { return outbox_.size(); }

  void observe(nlohmann::json payload);

  // Severs the socket without draining; queued messages survive.
  void drop_connection();

  // Reads a session-sim events file: attempt and observation events are
  // sent as OBSERVATION, record events are grouped into RECORD_BATCH
  // messages of at most batch_rows rows.
  ReplayCounts replay_file(const std::string& path, std::size_t batch_rows = 50);

 private:
  struct Pending {
    AgentMessage message;
  };
  std::vector<Pending> outbox_;
};

class CognitionClient : public Client {
 public:
  CognitionClient(std::string address, std::string session)
      : Client(std::move(address), std::move(session), "cognition") {}

  nlohmann::json fetch_assessments();
  // One JSON line per assessment; creates the file even when empty.
  std::size_t write_assessments(const std::string& path);
};

}  // namespace aifml::bus
