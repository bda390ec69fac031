#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aifml/rng.hpp"

namespace aifml::behavior {

struct BehaviorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OntologyNode {
  std::string name;
  std::string parent;  // empty for the root
  std::optional<std::string> valence;

  bool operator==(const OntologyNode&) const = default;
};

class BehaviorOntology {
 public:
  static BehaviorOntology default_ontology();
  static BehaviorOntology from_json(const std::string& text);
  static BehaviorOntology load(const std::string& path);

  explicit BehaviorOntology(std::vector<OntologyNode> nodes);

  const std::vector<OntologyNode>& nodes() const { return nodes_; }
  const OntologyNode* find(const std::string& name) const;
  const std::string& root() const { return root_; }

  // Number of parent steps from the node up to the root.
  int depth(const std::string& name) const;
  bool is_under(const std::string& name, const std::string& ancestor) const;

  std::string to_json() const;

  bool operator==(const BehaviorOntology& other) const { return nodes_ == other.nodes_; }

 private:
  std::vector<OntologyNode> nodes_;
  std::string root_;
};

enum class EventSource { perception_agent, teacher };

struct BehaviorEvent {
  std::string student;
  double timestamp = 0;
  std::string node;
  EventSource source = EventSource::perception_agent;
  double confidence = 1.0;

  bool operator==(const BehaviorEvent&) const = default;
};

// Maps a raw activity payload onto an ontology node by keyword; anything
// unrecognized lands on "unclassified".
std::string classify_activity(const std::string& raw, const BehaviorOntology& ont);

BehaviorEvent classify_event(const std::string& student, double timestamp,
                             const std::string& raw_activity, EventSource source,
                             double confidence, const BehaviorOntology& ont);

struct IrtItem {
  std::string id;
  double difficulty = 0;
  int level = 1;

  bool operator==(const IrtItem&) const = default;
};

struct IrtResponse {
  std::string item;
  double difficulty = 0;
  bool correct = false;
};

struct AbilityEstimate {
  std::string student;
  double theta = 0;
  double se = 0;
  std::size_t n_responses = 0;
  bool degenerate = false;
};

double rasch_probability(double theta, double b);

AbilityEstimate estimate_ability(const std::vector<IrtResponse>& responses,
                                 const std::string& student = "");

const IrtItem& select_next_content(const AbilityEstimate& est,
                                   const std::vector<IrtItem>& items, double epsilon,
                                   Rng& rng);
const IrtItem& select_next_content(const AbilityEstimate& est,
                                   const std::vector<IrtItem>& items, double epsilon,
                                   std::uint64_t seed);

nlohmann::json assessment_report(const std::vector<BehaviorEvent>& events,
                                 const AbilityEstimate& estimate,
                                 const BehaviorOntology& ont);

}  // namespace aifml::behavior
