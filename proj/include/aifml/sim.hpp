#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "aifml/fml.hpp"
#include "aifml/records.hpp"
#include "aifml/rng.hpp"

namespace aifml::sim {

struct SimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Question {
  std::string id;
  std::string topic;
  std::string content;
  fml::FuzzyTerm fuzzy_value;  // membership over the similarity universe [0,1]
  double ai_threshold = 0.8;
  int level = 1;
  double difficulty = 0.0;  // logit scale, for ability-driven draws and IRT
};

struct Attempt {
  std::string question;
  std::string student;
  double similarity = 0;
  records::Outcome outcome = records::Outcome::incorrect;
  int attempt_index = 0;
};

struct ClassPlan {
  int total_minutes = 40;
  int part1_minutes = 20;
  int part2_minutes = 20;
};

records::Outcome classify_attempt(double similarity, double threshold, double partial_margin);

enum class PartialCredit { fuzzy_membership, flat_half };

struct SessionSummary {
  double x7 = 0;
  std::optional<double> x8;
  std::optional<double> x9;
};

SessionSummary summarize_session(const std::vector<Attempt>& attempts,
                                 const std::unordered_map<std::string, Question>& bank,
                                 PartialCredit credit = PartialCredit::fuzzy_membership);

std::vector<Question> default_question_bank();

struct SimOptions {
  double partial_margin = 0.2;
  PartialCredit partial_credit = PartialCredit::fuzzy_membership;
  int min_attempts = 6;
  int max_attempts = 20;
};

struct CohortResult {
  records::Dataset dataset;
  std::vector<std::string> event_lines;  // JSONL, one object per line
  std::vector<std::string> students;
  std::vector<double> abilities;  // latent, aligned with students
};

CohortResult generate_cohort(int n_students, std::uint64_t seed, const SimOptions& opts = {});

std::string to_jsonl(const std::vector<std::string>& lines);

// Session clock: all event timestamps fall inside one 40-minute class window.
double class_epoch_start();

}  // namespace aifml::sim
