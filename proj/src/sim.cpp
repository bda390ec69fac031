#include "aifml/sim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace aifml::sim {

namespace {

using records::Gender;
using records::LearningRecord;
using records::Outcome;
using records::School;

double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::llround(v * scale) / scale;
}

nlohmann::json record_to_json(const LearningRecord& r) {
  const auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j;
  j["date"] = r.date;
  j["school"] = static_cast<int>(r.school);
  j["grade"] = r.grade;
  j["gender"] = static_cast<int>(r.gender);
  j["x4"] = opt(r.x4);
  j["x5"] = opt(r.x5);
  j["x6"] = opt(r.x6);
  j["x7"] = opt(r.x7);
  j["x8"] = opt(r.x8);
  j["x9"] = opt(r.x9);
  j["y1"] = opt(r.y1);
  j["y2"] = opt(r.y2);
  return j;
}

}  // namespace

double class_epoch_start() {
  // 2019-10-09 09:00:00 UTC, the fixture class morning.
  return 1570611600.0;
}

records::Outcome classify_attempt(double similarity, double threshold, double partial_margin) {
  if (similarity >= threshold) return Outcome::correct;
  if (similarity >= threshold - partial_margin) return Outcome::partial;
  return Outcome::incorrect;
}

SessionSummary summarize_session(const std::vector<Attempt>& attempts,
                                 const std::unordered_map<std::string, Question>& bank,
                                 PartialCredit credit) {
  SessionSummary s;
  s.x7 = static_cast<double>(attempts.size());
  if (attempts.empty()) return s;

  std::size_t correct = 0;
  double score = 0;
  for (const Attempt& a : attempts) {
    switch (a.outcome) {
      case Outcome::correct:
        ++correct;
        score += 1.0;
        break;
      case Outcome::partial:
        if (credit == PartialCredit::flat_half) {
          score += 0.5;
        } else {
          const auto it = bank.find(a.question);
          if (it == bank.end()) {
            throw SimError("attempt references unknown question " + a.question);
          }
          score += fml::membership(it->second.fuzzy_value, a.similarity);
        }
        break;
      case Outcome::incorrect:
        break;
    }
  }
  s.x8 = static_cast<double>(correct) / static_cast<double>(attempts.size());
  s.x9 = score;
  return s;
}

std::vector<Question> default_question_bank() {
  const auto tri = [](double a, double b, double c) {
    fml::FuzzyTerm t;
    t.name = "recognized";
    t.shape = fml::Shape::triangular;
    t.params = {a, b, c};
    return t;
  };
  // Difficulty ladder: level k sits at -1.5 + 0.5*(k-1) logits.
  return {
      {"q01", "greetings", "Good morning", tri(0.4, 0.9, 1.0), 0.80, 1, -1.5},
      {"q02", "greetings", "Nice to meet you", tri(0.5, 1.0, 1.0), 0.80, 1, -1.5},
      {"q03", "classroom", "Please open your book", tri(0.45, 0.95, 1.0), 0.75, 2, -1.0},
      {"q04", "ordering", "Coffee, please", tri(0.5, 1.0, 1.0), 0.80, 2, -1.0},
      {"q05", "ordering", "May I have a cup of tea", tri(0.5, 0.95, 1.0), 0.80, 3, -0.5},
      {"q06", "travel", "Where is the train station", tri(0.55, 1.0, 1.0), 0.80, 4, 0.0},
      {"q07", "travel", "How much is the ticket", tri(0.5, 1.0, 1.0), 0.85, 5, 0.5},
      {"q08", "daily", "What did you do last weekend", tri(0.55, 1.0, 1.0), 0.85, 6, 1.0},
      {"q09", "daily", "Could you say that again more slowly", tri(0.6, 1.0, 1.0), 0.85, 7, 1.5},
      {"q10", "robot", "Let us practice with the robot", tri(0.5, 0.95, 1.0), 0.80, 3, -0.5},
  };
}

CohortResult generate_cohort(int n_students, std::uint64_t seed, const SimOptions& opts) {
  if (n_students < 1) throw SimError("cohort needs at least one student");

  Rng rng(seed);
  CohortResult out;
  out.dataset.provenance = {"sim:seed=" + std::to_string(seed) +
                            ",students=" + std::to_string(n_students)};

  // School allocation follows the 1110:2490:624 cohort proportions by largest
  // remainder, in school-code order JHS1, ES1, ES2.
  const double weights[3] = {624, 1110, 2490};  // indexed by school code
  const double total_w = weights[0] + weights[1] + weights[2];
  int counts[3];
  double fracs[3];
  int assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double quota = n_students * weights[s] / total_w;
    counts[s] = static_cast<int>(quota);
    fracs[s] = quota - counts[s];
    assigned += counts[s];
  }
  while (assigned < n_students) {
    int best = 0;
    for (int s = 1; s < 3; ++s) {
      if (fracs[s] > fracs[best]) best = s;
    }
    counts[best] += 1;
    fracs[best] = -1;
    ++assigned;
  }

  const std::vector<Question> bank = default_question_bank();
  std::unordered_map<std::string, Question> by_id;
  for (const Question& q : bank) by_id[q.id] = q;

  const std::vector<std::string> dates = {"2019/10/2", "2019/10/9", "2019/10/16",
                                          "2019/10/23"};
  const std::vector<std::string> on_task_pool = {"knowledge_base_edit", "rule_base_edit",
                                                 "aiot_setup", "ml_tool_run",
                                                 "robot_interaction"};
  const std::vector<std::string> off_task_pool = {"video", "game_app", "music", "sleepy"};

  const ClassPlan plan;
  const double part2_start = class_epoch_start() + plan.part1_minutes * 60.0;
  const double part2_len = plan.part2_minutes * 60.0;

  const int id_width = n_students > 999 ? 4 : 3;

  int blanked[3][3] = {};
  int emitted = 0;
  for (int school_code = 0; school_code < 3; ++school_code) {
    const School school = static_cast<School>(school_code);
    for (int k = 0; k < counts[school_code]; ++k) {
      ++emitted;
      std::ostringstream sid;
      sid << 's';
      const std::string digits = std::to_string(emitted);
      for (std::size_t i = digits.size(); i < static_cast<std::size_t>(id_width); ++i) {
        sid << '0';
      }
      sid << digits;
      const std::string student = sid.str();

      const double ability = clamp(rng.normal(), -2.5, 2.5);
      out.students.push_back(student);
      out.abilities.push_back(ability);

      LearningRecord r;
      r.date = dates[rng.below(dates.size())];
      r.school = school;
      r.grade = school == School::jhs1 ? 7 + static_cast<int>(rng.below(3))
                                       : 5 + static_cast<int>(rng.below(2));
      r.gender = rng.chance(0.5) ? Gender::male : Gender::female;
      r.x4 = round_to(clamp(5.0 + 1.7 * ability + rng.normal(0, 0.9), 0.0, 10.0), 2);
      r.x5 = round_to(clamp(5.2 + 1.6 * ability + rng.normal(0, 0.9), 0.0, 10.0), 2);
      r.x6 = round_to(clamp(5.5 + 1.5 * ability + rng.normal(0, 0.9), 0.0, 10.0), 2);

      // Blank an occasional x4..x6 cell to exercise imputation, but only in
      // school cohorts large enough that a column can never go entirely null.
      if (counts[school_code] >= 8) {
        const int cap = counts[school_code] / 4;
        for (int col = 0; col < 3; ++col) {
          if (blanked[school_code][col] < cap && rng.chance(0.02)) {
            (col == 0 ? r.x4 : col == 1 ? r.x5 : r.x6).reset();
            blanked[school_code][col] += 1;
          }
        }
      }

      // Part II speaking practice drives x7..x9.
      const int n_attempts =
          opts.min_attempts +
          static_cast<int>(rng.below(
              static_cast<std::uint64_t>(opts.max_attempts - opts.min_attempts + 1)));
      const double spacing = part2_len / (n_attempts + 1);
      std::vector<Attempt> attempts;
      std::vector<std::string> lines;
      for (int a = 0; a < n_attempts; ++a) {
        const Question& q = bank[rng.below(bank.size())];
        Attempt at;
        at.question = q.id;
        at.student = student;
        at.attempt_index = a;
        at.similarity = round_to(
            clamp(0.8 + 0.09 * (ability - q.difficulty) + rng.normal(0, 0.07), 0.0, 1.0), 3);
        at.outcome = classify_attempt(at.similarity, q.ai_threshold, opts.partial_margin);
        attempts.push_back(at);

        nlohmann::json ev;
        ev["kind"] = "attempt";
        ev["student"] = student;
        ev["t"] = part2_start + spacing * (a + 1);
        ev["question"] = q.id;
        ev["level"] = q.level;
        ev["difficulty"] = q.difficulty;
        ev["similarity"] = at.similarity;
        ev["outcome"] = records::outcome_name(at.outcome);
        lines.push_back(ev.dump());
      }

      // A few behavior observations, biased on-task for stronger students.
      const double engagement = 1.0 / (1.0 + std::exp(-ability));
      const int n_obs = 3 + static_cast<int>(rng.below(4));
      for (int o = 0; o < n_obs; ++o) {
        std::string activity;
        if (rng.chance(0.45 + 0.4 * engagement)) {
          activity = on_task_pool[rng.below(on_task_pool.size())];
        } else {
          activity = off_task_pool[rng.below(off_task_pool.size())];
        }
        nlohmann::json ev;
        ev["kind"] = "observation";
        ev["student"] = student;
        ev["t"] = part2_start + part2_len * (o + 1) / (n_obs + 1);
        ev["activity"] = activity;
        ev["confidence"] = round_to(0.7 + 0.3 * rng.uniform(), 3);
        lines.push_back(ev.dump());
      }

      const SessionSummary summary =
          summarize_session(attempts, by_id, opts.partial_credit);
      r.x7 = summary.x7;
      r.x8 = summary.x8 ? std::optional<double>(round_to(*summary.x8, 4)) : std::nullopt;
      r.x9 = summary.x9 ? std::optional<double>(round_to(*summary.x9, 3)) : std::nullopt;

      r.y1 = round_to(clamp(55.0 + 16.0 * ability + rng.normal(0, 6.0), 0.0, 100.0), 1);
      if (school == School::jhs1) {
        r.y2 = round_to(clamp(58.0 + 15.0 * ability + rng.normal(0, 7.0), 0.0, 100.0), 1);
      }

      nlohmann::json rec;
      rec["kind"] = "record";
      rec["student"] = student;
      rec["row"] = record_to_json(r);
      lines.push_back(rec.dump());

      out.dataset.records.push_back(std::move(r));
      for (std::string& l : lines) out.event_lines.push_back(std::move(l));
    }
  }

  return out;
}

std::string to_jsonl(const std::vector<std::string>& lines) {
  std::string out;
  for (const std::string& l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

}  // namespace aifml::sim
