#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "aifml/behavior.hpp"

using namespace aifml::behavior;
using aifml::Rng;

namespace {

std::vector<IrtItem> ladder() {
  return {
      {"q1", -2.0, 1}, {"q2", -1.0, 2}, {"q3", 0.0, 3}, {"q4", 1.0, 4}, {"q5", 2.0, 5},
  };
}

}  // namespace

TEST_CASE("the default ontology is a single-rooted acyclic tree") {
  BehaviorOntology ont = BehaviorOntology::default_ontology();
  CHECK(ont.root() == "student learning behavior");
  CHECK(ont.nodes().size() == 13);
  for (const OntologyNode& n : ont.nodes()) {
    CHECK(ont.depth(n.name) <= 2);
  }
  CHECK(ont.is_under("watching video", "off-task"));
  CHECK(ont.is_under("establish rule base", "on-task"));
  CHECK_FALSE(ont.is_under("watching video", "on-task"));
  CHECK(ont.is_under("unclassified", "student learning behavior"));
  CHECK(ont.find("feeling sleepy") != nullptr);
  CHECK(ont.find("nonexistent") == nullptr);
}

TEST_CASE("the shipped ontology file equals the built-in encoding") {
  BehaviorOntology file = BehaviorOntology::load(std::string(AIFML_DATA_DIR) + "/ontology.json");
  CHECK(file == BehaviorOntology::default_ontology());
}

TEST_CASE("ontology serialization round-trips") {
  BehaviorOntology ont = BehaviorOntology::default_ontology();
  CHECK(BehaviorOntology::from_json(ont.to_json()) == ont);
}

TEST_CASE("malformed ontologies are rejected") {
  using Nodes = std::vector<OntologyNode>;
  CHECK_THROWS_AS(BehaviorOntology(Nodes{{"a", "", {}}, {"b", "", {}}}),
                  BehaviorError);  // two roots
  CHECK_THROWS_AS(BehaviorOntology(Nodes{{"a", "ghost", {}}}), BehaviorError);  // missing parent
  CHECK_THROWS_AS(BehaviorOntology(Nodes{{"a", "", {}}, {"b", "a", {}}, {"b", "a", {}}}),
                  BehaviorError);  // duplicate
  CHECK_THROWS_AS(BehaviorOntology(Nodes{{"a", "b", {}}, {"b", "a", {}}}),
                  BehaviorError);  // cycle
  CHECK_THROWS_AS(BehaviorOntology(Nodes{}), BehaviorError);
  CHECK_THROWS_AS(BehaviorOntology::from_json("still not json"), BehaviorError);
}

TEST_CASE("keyword classification maps payloads onto ontology nodes") {
  BehaviorOntology ont = BehaviorOntology::default_ontology();
  CHECK(classify_activity("video", ont) == "watching video");
  CHECK(classify_activity("rule_base_edit", ont) == "establish rule base");
  CHECK(classify_activity("knowledge_base_edit", ont) == "establish knowledge base");
  CHECK(classify_activity("playing a GAME", ont) == "playing game");
  CHECK(classify_activity("music_stream", ont) == "listening to music");
  CHECK(classify_activity("ml_tool", ont) == "execute machine learning tool");
  CHECK(classify_activity("aiot_setup", ont) == "setup aiot robot environment");
  CHECK(classify_activity("robot_interaction", ont) == "interact with robot");
  CHECK(classify_activity("sleepy", ont) == "feeling sleepy");
  CHECK(classify_activity("daydreaming", ont) == "unclassified");
  CHECK(classify_activity("", ont) == "unclassified");
}

TEST_CASE("every classification lands on an existing node") {
  BehaviorOntology ont = BehaviorOntology::default_ontology();
  const std::vector<std::string> stems = {"video",  "game", "music", "sleep", "knowledge",
                                          "rule",   "aiot", "tool",  "robot", "xyzzy",
                                          "lesson", ""};
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    std::string payload = stems[rng.below(stems.size())];
    if (rng.chance(0.5)) payload += "_" + std::to_string(rng.below(1000));
    if (rng.chance(0.3)) payload = "pre_" + payload;
    const std::string node = classify_activity(payload, ont);
    CHECK(ont.find(node) != nullptr);
  }
}

TEST_CASE("classify_event carries the observation through") {
  BehaviorOntology ont = BehaviorOntology::default_ontology();
  BehaviorEvent e = classify_event("s01", 12.5, "watching video clips", EventSource::teacher,
                                   0.9, ont);
  CHECK(e.student == "s01");
  CHECK(e.timestamp == 12.5);
  CHECK(e.node == "watching video");
  CHECK(e.source == EventSource::teacher);
  CHECK(e.confidence == 0.9);
}

TEST_CASE("rasch probability hits the documented values") {
  CHECK(rasch_probability(0.7, 0.7) == 0.5);
  CHECK(rasch_probability(-3.2, -3.2) == 0.5);
  CHECK(rasch_probability(1.0, 0.0) == doctest::Approx(0.7310585786).epsilon(1e-10));
  CHECK(rasch_probability(40.0, 0.0) > 1.0 - 1e-12);
  CHECK(rasch_probability(-40.0, 0.0) < 1e-12);
}

TEST_CASE("rasch probability is monotone in both arguments") {
  double prev = 0;
  for (double theta = -4; theta <= 4; theta += 0.5) {
    const double p = rasch_probability(theta, 0.3);
    CHECK(p > prev);
    prev = p;
  }
  prev = 1;
  for (double b = -4; b <= 4; b += 0.5) {
    const double p = rasch_probability(0.3, b);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("degenerate response patterns clamp to plus or minus four") {
  AbilityEstimate up = estimate_ability({{"q1", 0.0, true}}, "s1");
  CHECK(up.theta == 4.0);
  CHECK(up.degenerate);
  CHECK(up.n_responses == 1);
  CHECK(up.student == "s1");

  AbilityEstimate down = estimate_ability({{"q1", 0.0, false}, {"q2", 1.0, false}});
  CHECK(down.theta == -4.0);
  CHECK(down.degenerate);

  CHECK_THROWS_AS(estimate_ability({}), BehaviorError);
}

TEST_CASE("a symmetric response pattern estimates zero ability") {
  AbilityEstimate est = estimate_ability({{"a", -1.0, false}, {"b", 1.0, true}});
  CHECK_FALSE(est.degenerate);
  CHECK(std::abs(est.theta) < 1e-9);
  // Fisher information at theta 0: two items at distance 1 from theta.
  const double p = rasch_probability(0.0, 1.0);
  const double info = 2 * p * (1 - p);
  CHECK(est.se == doctest::Approx(1.0 / std::sqrt(info)).epsilon(1e-9));
}

TEST_CASE("the maximum likelihood estimate solves the score equation") {
  std::vector<IrtResponse> responses = {
      {"a", -1.5, true}, {"b", -0.5, true}, {"c", 0.2, false},
      {"d", 0.8, true},  {"e", 1.7, false},
  };
  AbilityEstimate est = estimate_ability(responses);
  double score = 0;
  for (const IrtResponse& r : responses) {
    score += (r.correct ? 1.0 : 0.0) - rasch_probability(est.theta, r.difficulty);
  }
  CHECK(std::abs(score) < 1e-9);
}

TEST_CASE("ability estimation is shift-equivariant") {
  std::vector<IrtResponse> responses = {
      {"a", -2.0, false}, {"b", -1.0, true}, {"c", 0.0, true},
      {"d", 1.0, false},  {"e", 2.0, true},  {"f", 0.5, false},
  };
  AbilityEstimate base = estimate_ability(responses);
  const double delta = 0.7;
  std::vector<IrtResponse> shifted = responses;
  for (IrtResponse& r : shifted) r.difficulty += delta;
  AbilityEstimate moved = estimate_ability(shifted);
  CHECK(moved.theta - base.theta == doctest::Approx(delta).epsilon(1e-6));
  CHECK(moved.se == doctest::Approx(base.se).epsilon(1e-9));
}

TEST_CASE("two hundred simulated responses recover the true ability") {
  const double true_theta = 0.8;
  Rng rng(2024);
  std::vector<IrtResponse> responses;
  for (int i = 0; i < 200; ++i) {
    IrtResponse r;
    r.item = "q" + std::to_string(i);
    r.difficulty = rng.uniform(-2, 2);
    r.correct = rng.chance(rasch_probability(true_theta, r.difficulty));
    responses.push_back(r);
  }
  AbilityEstimate est = estimate_ability(responses);
  CHECK_FALSE(est.degenerate);
  CHECK(std::abs(est.theta - true_theta) < 0.3);
  CHECK(est.se > 0);
  CHECK(est.se < 0.3);
}

TEST_CASE("pure exploitation picks the closest item with id tie-breaks") {
  AbilityEstimate est;
  est.theta = 0.4;
  Rng rng(5);
  const IrtItem& pick = select_next_content(est, ladder(), 0.0, rng);
  CHECK(pick.id == "q3");  // b=0 is closest to 0.4 among the ladder

  std::vector<IrtItem> tied = {{"zz", 1.0, 1}, {"aa", 0.0, 1}, {"mm", 1.0, 1}};
  est.theta = 0.5;  // all three items sit exactly 0.5 away
  const IrtItem& tie_pick = select_next_content(est, tied, 0.0, rng);
  CHECK(tie_pick.id == "aa");

  CHECK_THROWS_AS(select_next_content(est, {}, 0.0, rng), BehaviorError);
}

TEST_CASE("exploitation is invariant to item order") {
  AbilityEstimate est;
  est.theta = -0.9;
  std::vector<IrtItem> items = ladder();
  Rng rng(1);
  const std::string expected = select_next_content(est, items, 0.0, rng).id;
  Rng shuffler(99);
  for (int i = 0; i < 20; ++i) {
    shuffler.shuffle(items);
    Rng r2(i);
    CHECK(select_next_content(est, items, 0.0, r2).id == expected);
  }
}

TEST_CASE("full exploration with a fixed seed is reproducible") {
  AbilityEstimate est;
  const IrtItem& a = select_next_content(est, ladder(), 1.0, std::uint64_t{42});
  const IrtItem& b = select_next_content(est, ladder(), 1.0, std::uint64_t{42});
  CHECK(a.id == b.id);
}

TEST_CASE("the non-greedy fraction matches epsilon times (n-1)/n") {
  AbilityEstimate est;
  est.theta = 0.1;
  std::vector<IrtItem> items = ladder();
  Rng greedy_rng(3);
  const std::string greedy = select_next_content(est, items, 0.0, greedy_rng).id;

  Rng rng(314159);
  int non_greedy = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    if (select_next_content(est, items, 0.2, rng).id != greedy) ++non_greedy;
  }
  const double fraction = static_cast<double>(non_greedy) / draws;
  const double expected = 0.2 * 4.0 / 5.0;
  CHECK(std::abs(fraction - expected) < 0.02);
}

TEST_CASE("assessment reports aggregate task shares") {
  BehaviorOntology ont = BehaviorOntology::default_ontology();
  AbilityEstimate est = estimate_ability({{"a", -1.0, false}, {"b", 1.0, true}}, "s7");

  auto ev = [&](const std::string& node) {
    BehaviorEvent e;
    e.student = "s7";
    e.node = node;
    return e;
  };

  nlohmann::json mixed = assessment_report(
      {ev("establish rule base"), ev("interact with robot"), ev("watching video"),
       ev("execute machine learning tool")},
      est, ont);
  CHECK(mixed["on_task_share"].get<double>() == doctest::Approx(0.75));
  CHECK(mixed["off_task_share"].get<double>() == doctest::Approx(0.25));
  CHECK(mixed["student"] == "s7");
  CHECK(mixed["n_responses"] == 2);
  CHECK(mixed["theta"].get<double>() == doctest::Approx(0.0).epsilon(1e-9));

  nlohmann::json all_on = assessment_report({ev("playing game")}, est, ont);
  CHECK(all_on["off_task_share"].get<double>() == 1.0);
  CHECK(all_on["on_task_share"].get<double>() == 0.0);

  nlohmann::json empty = assessment_report({}, est, ont);
  CHECK_FALSE(empty.contains("on_task_share"));
  CHECK_FALSE(empty.contains("off_task_share"));
  CHECK(empty["events"] == 0);

  nlohmann::json with_unknown =
      assessment_report({ev("unclassified"), ev("playing game")}, est, ont);
  CHECK(with_unknown["off_task_share"].get<double>() == doctest::Approx(0.5));
  CHECK(with_unknown["on_task_share"].get<double>() == doctest::Approx(0.0));
}
