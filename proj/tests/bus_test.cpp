#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/socket.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aifml/bus.hpp"
#include "aifml/rng.hpp"
#include "aifml/sim.hpp"

using namespace aifml::bus;
namespace fs = std::filesystem;

namespace {

AgentMessage minimal_observation() {
  AgentMessage m;
  m.type = msg::observation;
  m.session = "3f1c9d2e-8a47-4b6e-9c21-5d7e0f4a1b8c";
  m.sender = "perception";
  m.seq = 1;
  m.sent_at = 1570611600123;
  m.payload = nlohmann::json::object();
  return m;
}

std::string random_token(aifml::Rng& rng, std::size_t max_len) {
  static const char alphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789-_";
  const std::size_t len = 1 + rng.below(max_len);
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += alphabet[rng.below(sizeof alphabet - 1)];
  return s;
}

nlohmann::json random_value(aifml::Rng& rng, int depth) {
  const std::uint64_t pick = rng.below(depth > 0 ? 8 : 6);
  switch (pick) {
    case 0: return nullptr;
    case 1: return rng.chance(0.5);
    case 2: return static_cast<std::int64_t>(rng.below(1u << 30)) - (1 << 29);
    case 3: return rng.uniform(-1e6, 1e6);
    case 4: return random_token(rng, 12);
    case 5: return std::string("café \"quoted\"\n\t") + random_token(rng, 4);
    case 6: {
      nlohmann::json arr = nlohmann::json::array();
      const std::uint64_t n = rng.below(4);
      for (std::uint64_t i = 0; i < n; ++i) arr.push_back(random_value(rng, depth - 1));
      return arr;
    }
    default: {
      nlohmann::json obj = nlohmann::json::object();
      const std::uint64_t n = rng.below(4);
      for (std::uint64_t i = 0; i < n; ++i) obj[random_token(rng, 8)] = random_value(rng, depth - 1);
      return obj;
    }
  }
}

AgentMessage random_message(aifml::Rng& rng) {
  static const char* types[] = {msg::observation,     msg::record_batch, msg::train_request,
                                msg::train_status,    msg::prediction,   msg::assessment,
                                msg::predict_request, msg::error};
  AgentMessage m;
  m.type = types[rng.below(8)];
  m.session = random_token(rng, 24);
  m.sender = random_token(rng, 12);
  m.seq = rng.below(1u << 20);
  m.sent_at = static_cast<std::int64_t>(rng.below(1ull << 42));
  nlohmann::json payload = nlohmann::json::object();
  const std::uint64_t n = rng.below(5);
  for (std::uint64_t i = 0; i < n; ++i) payload[random_token(rng, 8)] = random_value(rng, 2);
  m.payload = payload;
  return m;
}

struct ServerFixture {
  Server server;
  explicit ServerFixture(ServerConfig cfg = {}) : server(std::move(cfg)) { server.start(); }
  ~ServerFixture() { server.stop(); }
  std::string addr() const { return server.address(); }
};

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("aifml_bus_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write_events(int students, std::uint64_t seed, const std::string& name) {
  aifml::sim::CohortResult cohort = aifml::sim::generate_cohort(students, seed);
  const fs::path path = scratch_dir(name) / "events.jsonl";
  std::ofstream out(path, std::ios::binary);
  out << aifml::sim::to_jsonl(cohort.event_lines);
  return path.string();
}

}  // namespace

TEST_CASE("a minimal observation frame round-trips bit-exact") {
  const AgentMessage m = minimal_observation();
  const std::string frame = encode_frame(m);
  const AgentMessage back = decode_frame(frame);
  CHECK(back == m);
  CHECK(encode_frame(back) == frame);

  const std::size_t body = frame.size() - 4;
  CHECK(static_cast<unsigned char>(frame[0]) == (body >> 24 & 0xff));
  CHECK(static_cast<unsigned char>(frame[1]) == (body >> 16 & 0xff));
  CHECK(static_cast<unsigned char>(frame[2]) == (body >> 8 & 0xff));
  CHECK(static_cast<unsigned char>(frame[3]) == (body & 0xff));

  CHECK(message_from_json(message_to_json(m)) == m);
}

TEST_CASE("a thousand random messages round-trip bit-exact") {
  aifml::Rng rng(1234);
  for (int i = 0; i < 1000; ++i) {
    const AgentMessage m = random_message(rng);
    const std::string frame = encode_frame(m);
    const AgentMessage back = decode_frame(frame);
    CHECK(back == m);
    CHECK(encode_frame(back) == frame);
  }
}

TEST_CASE("malformed frames are rejected") {
  using sv = std::string_view;
  CHECK_THROWS_AS(decode_frame(sv("\x00\x00", 2)), BusError);
  CHECK_THROWS_AS(decode_frame(sv("\x00\x00\x00\x0a"
                                  "abcde",
                                  9)),
                  BusError);
  const std::string good = encode_frame(minimal_observation());
  CHECK_THROWS_AS(decode_frame(good + "x"), BusError);
  CHECK_THROWS_AS(decode_frame(sv("\x01\x10\x00\x01", 4)), BusError);

  const auto bad_body = [](const std::string& body) {
    std::string frame;
    const std::uint32_t len = static_cast<std::uint32_t>(body.size());
    frame.push_back(static_cast<char>(len >> 24 & 0xff));
    frame.push_back(static_cast<char>(len >> 16 & 0xff));
    frame.push_back(static_cast<char>(len >> 8 & 0xff));
    frame.push_back(static_cast<char>(len & 0xff));
    frame += body;
    return frame;
  };
  CHECK_THROWS_AS(decode_frame(bad_body("{nope")), BusError);
  CHECK_THROWS_AS(decode_frame(bad_body("\"\xff\xfe\"")), BusError);
  CHECK_THROWS_AS(decode_frame(bad_body("[1,2,3]")), BusError);

  nlohmann::json j = message_to_json(minimal_observation());
  j.erase("seq");
  CHECK_THROWS_AS(decode_frame(bad_body(j.dump())), BusError);
  j = message_to_json(minimal_observation());
  j["extra"] = 1;
  CHECK_THROWS_AS(decode_frame(bad_body(j.dump())), BusError);
  j = message_to_json(minimal_observation());
  j["seq"] = -1;
  CHECK_THROWS_AS(decode_frame(bad_body(j.dump())), BusError);
  j = message_to_json(minimal_observation());
  j["payload"] = "not an object";
  CHECK_THROWS_AS(decode_frame(bad_body(j.dump())), BusError);

  AgentMessage huge = minimal_observation();
  huge.payload["blob"] = std::string(max_frame_body, 'x');
  CHECK_THROWS_AS(encode_frame(huge), BusError);
}

TEST_CASE("the eight wire types are known and others are not") {
  for (const char* t : {"OBSERVATION", "RECORD_BATCH", "TRAIN_REQUEST", "TRAIN_STATUS",
                        "PREDICT_REQUEST", "PREDICTION", "ASSESSMENT", "ERROR"}) {
    CHECK(is_known_type(t));
  }
  CHECK_FALSE(is_known_type("PING"));
  CHECK_FALSE(is_known_type("observation"));
  CHECK_FALSE(is_known_type(""));
}

TEST_CASE("the service acknowledges and stores observations in order") {
  ServerFixture f;
  PerceptionClient p(f.addr(), "sess-obs");
  for (int i = 1; i <= 5; ++i) p.enqueue(msg::observation, {{"kind", "observation"}, {"i", i}});
  p.flush();
  CHECK(p.pending() == 0);

  nlohmann::json snap = f.server.session_snapshot("sess-obs");
  REQUIRE(snap.at("observations").size() == 5);
  for (int i = 1; i <= 5; ++i) CHECK(snap.at("observations")[i - 1].at("i") == i);
  CHECK(snap.at("last_seq").at("perception") == 5);
  CHECK(snap.at("records").empty());
  CHECK(snap.at("model").is_null());
}

TEST_CASE("duplicate and stale deliveries are stored once but still acknowledged") {
  ServerFixture f;
  Client c(f.addr(), "sess-dup", "perception");
  c.connect();

  AgentMessage m;
  m.type = msg::observation;
  m.session = "sess-dup";
  m.sender = "perception";
  m.seq = 1;
  m.sent_at = now_epoch_ms();
  m.payload = {{"kind", "observation"}, {"tag", "first"}};

  for (int round = 0; round < 3; ++round) {
    c.send(m);
    AgentMessage r = c.receive();
    CHECK(r.type == msg::observation);
    CHECK(r.payload.at("ack") == 1);
  }
  AgentMessage later = m;
  later.seq = 4;
  later.payload = {{"kind", "observation"}, {"tag", "later"}};
  c.send(later);
  c.receive();
  AgentMessage stale = m;
  stale.seq = 2;
  stale.payload = {{"kind", "observation"}, {"tag", "stale"}};
  c.send(stale);
  AgentMessage r = c.receive();
  CHECK(r.payload.at("ack") == 2);

  nlohmann::json snap = f.server.session_snapshot("sess-dup");
  REQUIRE(snap.at("observations").size() == 2);
  CHECK(snap.at("observations")[0].at("tag") == "first");
  CHECK(snap.at("observations")[1].at("tag") == "later");
  CHECK(snap.at("last_seq").at("perception") == 4);
}

TEST_CASE("kill and reconnect leaves the same store as a clean run") {
  ServerFixture f;

  PerceptionClient faulty(f.addr(), "sess-fault");
  for (int i = 1; i <= 4; ++i) faulty.enqueue(msg::observation, {{"kind", "observation"}, {"i", i}});
  faulty.flush();
  faulty.drop_connection();
  for (int i = 5; i <= 10; ++i) faulty.enqueue(msg::observation, {{"kind", "observation"}, {"i", i}});
  faulty.flush();

  // A retransmit of an already-acknowledged message after the reconnect.
  Client raw(f.addr(), "sess-fault", "perception");
  raw.connect();
  AgentMessage dup;
  dup.type = msg::observation;
  dup.session = "sess-fault";
  dup.sender = "perception";
  dup.seq = 4;
  dup.sent_at = now_epoch_ms();
  dup.payload = {{"kind", "observation"}, {"i", 4}};
  raw.send(dup);
  raw.receive();

  PerceptionClient clean(f.addr(), "sess-clean");
  for (int i = 1; i <= 10; ++i) clean.enqueue(msg::observation, {{"kind", "observation"}, {"i", i}});
  clean.flush();

  nlohmann::json fault_snap = f.server.session_snapshot("sess-fault");
  nlohmann::json clean_snap = f.server.session_snapshot("sess-clean");
  CHECK(fault_snap.at("observations") == clean_snap.at("observations"));
  CHECK(fault_snap.at("last_seq") == clean_snap.at("last_seq"));
  CHECK(fault_snap == clean_snap);
}

TEST_CASE("sessions are isolated under interleaving") {
  ServerFixture f;
  PerceptionClient a(f.addr(), "sess-a");
  PerceptionClient b(f.addr(), "sess-b");
  for (int i = 1; i <= 6; ++i) {
    if (i % 2 == 1) {
      a.observe({{"kind", "observation"}, {"who", "a"}, {"i", i}});
    } else {
      b.observe({{"kind", "observation"}, {"who", "b"}, {"i", i}});
    }
  }
  nlohmann::json sa = f.server.session_snapshot("sess-a");
  nlohmann::json sb = f.server.session_snapshot("sess-b");
  REQUIRE(sa.at("observations").size() == 3);
  REQUIRE(sb.at("observations").size() == 3);
  for (const auto& o : sa.at("observations")) CHECK(o.at("who") == "a");
  for (const auto& o : sb.at("observations")) CHECK(o.at("who") == "b");

  // Replaying only one session's stream on a fresh service gives the
  // same per-session store.
  ServerFixture solo;
  PerceptionClient a2(solo.addr(), "sess-a");
  for (int i = 1; i <= 6; i += 2) a2.observe({{"kind", "observation"}, {"who", "a"}, {"i", i}});
  CHECK(solo.server.session_snapshot("sess-a").at("observations") == sa.at("observations"));
}

TEST_CASE("replay, training, prediction, and assessment flow end to end") {
  const std::string events = write_events(60, 15, "flow");
  ServerFixture f;
  const std::string session = "sess-flow";

  PerceptionClient p(f.addr(), session);
  ReplayCounts counts = p.replay_file(events);
  CHECK(counts.record_rows == 60);
  CHECK(counts.batches == 2);
  CHECK(counts.observations > 60u);

  nlohmann::json snap = f.server.session_snapshot(session);
  CHECK(snap.at("records").size() == 60);
  CHECK(snap.at("observations").size() == counts.observations);

  CognitionClient cg(f.addr(), session);
  CHECK(cg.fetch_assessments().empty());
  const fs::path empty_path = scratch_dir("flow_out") / "empty.jsonl";
  CHECK(cg.write_assessments(empty_path.string()) == 0);
  CHECK(fs::exists(empty_path));
  CHECK(fs::file_size(empty_path) == 0);

  AgentMessage denied = cg.request(msg::predict_request,
                                   {{"features", {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7}}});
  CHECK(denied.type == msg::error);
  CHECK(denied.payload.at("code") == "no_model");

  std::vector<nlohmann::json> statuses;
  AgentMessage done = cg.train(2, 3, 7, [&](const nlohmann::json& s) { statuses.push_back(s); });
  REQUIRE(done.type == msg::train_status);
  CHECK(done.payload.at("status") == "done");
  CHECK(done.payload.at("model") == "m1");
  CHECK(done.payload.at("epochs") == 3);
  CHECK(std::isfinite(done.payload.at("final_train_loss").get<double>()));
  REQUIRE(statuses.size() == 3);
  for (std::size_t i = 0; i < statuses.size(); ++i) {
    CHECK(statuses[i].at("epoch") == i + 1);
  }
  for (const auto& s : statuses) {
    CHECK(s.at("status") == "running");
    CHECK(std::isfinite(s.at("train_loss").get<double>()));
    CHECK(std::isfinite(s.at("validation_loss").get<double>()));
  }
  CHECK(f.server.session_snapshot(session).at("model") == "m1");

  AgentMessage one = cg.request(msg::predict_request,
                                {{"features", {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5}},
                                 {"student", "probe"}});
  REQUIRE(one.type == msg::prediction);
  CHECK(std::isfinite(one.payload.at("y").get<double>()));
  CHECK(one.payload.at("model") == "m1");
  CHECK(one.payload.at("student") == "probe");

  AgentMessage narrow = cg.request(msg::predict_request, {{"features", {1.0, 2.0}}});
  CHECK(narrow.type == msg::error);
  CHECK(narrow.payload.at("code") == "bad_request");

  AgentMessage bulk = cg.request(msg::predict_request, {{"from_records", true}});
  REQUIRE(bulk.type == msg::prediction);
  CHECK(bulk.payload.at("count") == 60);
  REQUIRE(bulk.payload.at("predictions").size() == 60);
  for (const auto& pr : bulk.payload.at("predictions")) {
    CHECK(std::isfinite(pr.at("y").get<double>()));
    CHECK(pr.at("student").get<std::string>().rfind("s0", 0) == 0);
  }

  nlohmann::json assessments = cg.fetch_assessments();
  REQUIRE(assessments.size() == 61);
  for (const auto& a : assessments) {
    CHECK(a.at("session") == session);
    CHECK(a.contains("student"));
    CHECK(std::isfinite(a.at("predicted_score").get<double>()));
    CHECK(a.at("model") == "m1");
    CHECK(a.contains("theta"));
    CHECK(a.contains("se"));
    CHECK(a.at("summary").is_string());
  }

  const fs::path out_path = scratch_dir("flow_out2") / "assessments.jsonl";
  CHECK(cg.write_assessments(out_path.string()) == 61);
  std::ifstream in(out_path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.at("session") == session);
  }
  CHECK(lines == 61);
}

TEST_CASE("a second train request while busy is refused") {
  const std::string events = write_events(60, 16, "busy");
  ServerFixture f;
  const std::string session = "sess-busy";
  PerceptionClient p(f.addr(), session);
  p.replay_file(events);

  Client first(f.addr(), session, "driver-a");
  first.connect();
  AgentMessage req;
  req.type = msg::train_request;
  req.session = session;
  req.sender = "driver-a";
  req.seq = 1;
  req.sent_at = now_epoch_ms();
  req.payload = {{"experiment", 2}, {"epochs", 300}, {"seed", 7}};
  first.send(req);

  Client second(f.addr(), session, "driver-b");
  second.connect();
  AgentMessage refused = second.request(msg::train_request,
                                        {{"experiment", 2}, {"epochs", 2}, {"seed", 7}});
  CHECK(refused.type == msg::error);
  CHECK(refused.payload.at("code") == "busy");

  int terminal = 0;
  for (;;) {
    AgentMessage r = first.receive();
    REQUIRE(r.type == msg::train_status);
    if (r.payload.at("status") == "done") {
      terminal += 1;
      break;
    }
  }
  CHECK(terminal == 1);

  // The slot frees up once the run finishes.
  AgentMessage again = second.train(2, 2, 9);
  CHECK(again.type == msg::train_status);
  CHECK(again.payload.at("model") == "m2");
}

TEST_CASE("training an empty session fails with one terminal error") {
  ServerFixture f;
  CognitionClient cg(f.addr(), "sess-empty");
  AgentMessage r = cg.train(2, 3, 7);
  CHECK(r.type == msg::error);
  CHECK(r.payload.at("code") == "train_failed");
}

TEST_CASE("unknown and misdirected types get error replies") {
  ServerFixture f;
  Client c(f.addr(), "sess-err", "tester");
  c.connect();

  AgentMessage odd;
  odd.type = "PING";
  odd.session = "sess-err";
  odd.sender = "tester";
  odd.seq = 1;
  odd.sent_at = now_epoch_ms();
  c.send(odd);
  AgentMessage r = c.receive();
  CHECK(r.type == msg::error);
  CHECK(r.payload.at("code") == "unknown_type");

  r = c.request(msg::train_status, {{"status", "done"}});
  CHECK(r.payload.at("code") == "unexpected_type");

  r = c.request(msg::record_batch, {{"notrows", 1}});
  CHECK(r.payload.at("code") == "bad_request");

  r = c.request(msg::record_batch, {{"rows", {{{"student", "s1"}, {"row", 5}}}}});
  CHECK(r.payload.at("code") == "bad_request");

  r = c.request(msg::train_request, {{"experiment", 9}});
  CHECK(r.payload.at("code") == "bad_request");

  r = c.request(msg::train_request, {{"experiment", 2}, {"epochs", 0}});
  CHECK(r.payload.at("code") == "bad_request");
}

TEST_CASE("a garbage frame draws a bad_frame error before the connection closes") {
  ServerFixture f;
  Socket sock = connect_to(f.addr());
  const std::string garbage = std::string("\x00\x00\x00\x05", 4) + "{oops";
  REQUIRE(::send(sock.fd(), garbage.data(), garbage.size(), 0) ==
          static_cast<ssize_t>(garbage.size()));
  std::optional<AgentMessage> r = receive_message(sock.fd());
  REQUIRE(r.has_value());
  CHECK(r->type == msg::error);
  CHECK(r->payload.at("code") == "bad_frame");
  CHECK_FALSE(receive_message(sock.fd()).has_value());
}
