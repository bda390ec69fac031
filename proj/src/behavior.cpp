#include "aifml/behavior.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace aifml::behavior {

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

BehaviorOntology::BehaviorOntology(std::vector<OntologyNode> nodes)
    : nodes_(std::move(nodes)) {
  std::unordered_map<std::string, const OntologyNode*> by_name;
  for (const OntologyNode& n : nodes_) {
    if (n.name.empty()) throw BehaviorError("ontology node with an empty name");
    if (!by_name.emplace(n.name, &n).second) {
      throw BehaviorError("duplicate ontology node: " + n.name);
    }
    if (n.parent.empty()) {
      if (!root_.empty()) {
        throw BehaviorError("ontology has two roots: " + root_ + " and " + n.name);
      }
      root_ = n.name;
    }
  }
  if (root_.empty()) throw BehaviorError("ontology has no root node");
  for (const OntologyNode& n : nodes_) {
    if (!n.parent.empty() && !by_name.count(n.parent)) {
      throw BehaviorError("node " + n.name + " has an unknown parent " + n.parent);
    }
  }
  // A walk from any node must reach the root within the node count, else
  // there is a parent cycle.
  for (const OntologyNode& n : nodes_) {
    const OntologyNode* cur = &n;
    std::size_t steps = 0;
    while (!cur->parent.empty()) {
      cur = by_name.at(cur->parent);
      if (++steps > nodes_.size()) {
        throw BehaviorError("ontology contains a cycle through " + n.name);
      }
    }
  }
}

const OntologyNode* BehaviorOntology::find(const std::string& name) const {
  for (const OntologyNode& n : nodes_) {
    if (n.name == name) return &n;
  }
  return nullptr;
}

int BehaviorOntology::depth(const std::string& name) const {
  const OntologyNode* cur = find(name);
  if (!cur) throw BehaviorError("unknown ontology node: " + name);
  int steps = 0;
  while (!cur->parent.empty()) {
    cur = find(cur->parent);
    ++steps;
  }
  return steps;
}

bool BehaviorOntology::is_under(const std::string& name, const std::string& ancestor) const {
  const OntologyNode* cur = find(name);
  if (!cur) return false;
  while (true) {
    if (cur->name == ancestor) return true;
    if (cur->parent.empty()) return false;
    cur = find(cur->parent);
  }
}

BehaviorOntology BehaviorOntology::default_ontology() {
  const std::string root = "student learning behavior";
  std::vector<OntologyNode> nodes = {
      {root, "", std::nullopt},
      {"on-task", root, "positive"},
      {"off-task", root, "negative"},
      {"establish knowledge base", "on-task", std::nullopt},
      {"establish rule base", "on-task", std::nullopt},
      {"setup aiot robot environment", "on-task", std::nullopt},
      {"execute machine learning tool", "on-task", std::nullopt},
      {"interact with robot", "on-task", std::nullopt},
      {"playing game", "off-task", std::nullopt},
      {"watching video", "off-task", std::nullopt},
      {"listening to music", "off-task", std::nullopt},
      {"feeling sleepy", "off-task", std::nullopt},
      {"unclassified", root, std::nullopt},
  };
  return BehaviorOntology(std::move(nodes));
}

BehaviorOntology BehaviorOntology::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw BehaviorError(std::string("ontology is not valid JSON: ") + e.what());
  }
  try {
    std::vector<OntologyNode> nodes;
    for (const auto& nj : j.at("nodes")) {
      OntologyNode n;
      n.name = nj.at("name").get<std::string>();
      if (nj.contains("parent") && !nj.at("parent").is_null()) {
        n.parent = nj.at("parent").get<std::string>();
      }
      if (nj.contains("valence") && !nj.at("valence").is_null()) {
        n.valence = nj.at("valence").get<std::string>();
      }
      nodes.push_back(std::move(n));
    }
    return BehaviorOntology(std::move(nodes));
  } catch (const nlohmann::json::exception& e) {
    throw BehaviorError(std::string("ontology JSON is missing fields: ") + e.what());
  }
}

BehaviorOntology BehaviorOntology::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw BehaviorError("cannot open ontology file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string BehaviorOntology::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const OntologyNode& n : nodes_) {
    nlohmann::json nj;
    nj["name"] = n.name;
    nj["parent"] = n.parent.empty() ? nlohmann::json(nullptr) : nlohmann::json(n.parent);
    if (n.valence) nj["valence"] = *n.valence;
    arr.push_back(std::move(nj));
  }
  nlohmann::json j;
  j["nodes"] = std::move(arr);
  return j.dump(2);
}

std::string classify_activity(const std::string& raw, const BehaviorOntology& ont) {
  // Ordered keyword table; the first keyword contained in the payload wins.
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"video", "watching video"},
      {"game", "playing game"},
      {"music", "listening to music"},
      {"sleep", "feeling sleepy"},
      {"knowledge", "establish knowledge base"},
      {"rule", "establish rule base"},
      {"aiot", "setup aiot robot environment"},
      {"setup", "setup aiot robot environment"},
      {"environment", "setup aiot robot environment"},
      {"machine_learning", "execute machine learning tool"},
      {"ml_tool", "execute machine learning tool"},
      {"tool", "execute machine learning tool"},
      {"robot", "interact with robot"},
      {"interact", "interact with robot"},
  };
  const std::string payload = lower(raw);
  for (const auto& [keyword, node] : table) {
    if (payload.find(keyword) != std::string::npos && ont.find(node)) return node;
  }
  return "unclassified";
}

BehaviorEvent classify_event(const std::string& student, double timestamp,
                             const std::string& raw_activity, EventSource source,
                             double confidence, const BehaviorOntology& ont) {
  BehaviorEvent e;
  e.student = student;
  e.timestamp = timestamp;
  e.node = classify_activity(raw_activity, ont);
  e.source = source;
  e.confidence = confidence;
  return e;
}

double rasch_probability(double theta, double b) {
  return 1.0 / (1.0 + std::exp(-(theta - b)));
}

AbilityEstimate estimate_ability(const std::vector<IrtResponse>& responses,
                                 const std::string& student) {
  if (responses.empty()) throw BehaviorError("cannot estimate ability from no responses");

  AbilityEstimate est;
  est.student = student;
  est.n_responses = responses.size();

  std::size_t n_correct = 0;
  for (const IrtResponse& r : responses) n_correct += r.correct ? 1 : 0;

  const auto score = [&](double theta) {
    double s = 0;
    for (const IrtResponse& r : responses) {
      s += (r.correct ? 1.0 : 0.0) - rasch_probability(theta, r.difficulty);
    }
    return s;
  };

  if (n_correct == 0 || n_correct == responses.size()) {
    est.theta = n_correct == 0 ? -4.0 : 4.0;
    est.degenerate = true;
  } else {
    // The score function is strictly decreasing in theta, so bisect.
    double lo = -30.0, hi = 30.0;
    for (int i = 0; i < 200 && hi - lo > 1e-12; ++i) {
      const double mid = 0.5 * (lo + hi);
      if (score(mid) > 0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    est.theta = 0.5 * (lo + hi);
  }

  double info = 0;
  for (const IrtResponse& r : responses) {
    const double p = rasch_probability(est.theta, r.difficulty);
    info += p * (1.0 - p);
  }
  est.se = info > 0 ? 1.0 / std::sqrt(info) : 0.0;
  return est;
}

const IrtItem& select_next_content(const AbilityEstimate& est,
                                   const std::vector<IrtItem>& items, double epsilon,
                                   Rng& rng) {
  if (items.empty()) throw BehaviorError("cannot select content from an empty item list");
  if (rng.chance(epsilon)) {
    return items[rng.below(items.size())];
  }
  const IrtItem* best = &items[0];
  for (const IrtItem& item : items) {
    const double d = std::abs(item.difficulty - est.theta);
    const double best_d = std::abs(best->difficulty - est.theta);
    if (d < best_d || (d == best_d && item.id < best->id)) best = &item;
  }
  return *best;
}

const IrtItem& select_next_content(const AbilityEstimate& est,
                                   const std::vector<IrtItem>& items, double epsilon,
                                   std::uint64_t seed) {
  Rng rng(seed);
  return select_next_content(est, items, epsilon, rng);
}

nlohmann::json assessment_report(const std::vector<BehaviorEvent>& events,
                                 const AbilityEstimate& estimate,
                                 const BehaviorOntology& ont) {
  nlohmann::json j;
  j["student"] = estimate.student;
  j["theta"] = estimate.theta;
  j["se"] = estimate.se;
  j["n_responses"] = estimate.n_responses;
  j["degenerate"] = estimate.degenerate;
  j["events"] = events.size();
  if (!events.empty()) {
    std::size_t on = 0, off = 0;
    for (const BehaviorEvent& e : events) {
      if (ont.is_under(e.node, "on-task")) ++on;
      else if (ont.is_under(e.node, "off-task")) ++off;
    }
    const double total = static_cast<double>(events.size());
    j["on_task_share"] = static_cast<double>(on) / total;
    j["off_task_share"] = static_cast<double>(off) / total;
  }
  return j;
}

}  // namespace aifml::behavior
