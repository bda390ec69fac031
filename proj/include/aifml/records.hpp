#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace aifml::records {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// School codes follow the collected-data convention: JHS1=0, ES1=1, ES2=2.
enum class School : int { jhs1 = 0, es1 = 1, es2 = 2 };

enum class Gender : int { female = 0, male = 1 };

const char* school_name(School s);
School school_from_string(const std::string& s);

// One student-by-date row. x4..x6 are feedback scores, x7 the practice
// count, x8 the AI-correct ratio, x9 the correct+partial score. y1/y2 are
// the monthly written and listening test scores; the label y is derived.
struct LearningRecord {
  std::string date;
  School school = School::es1;
  int grade = 1;
  Gender gender = Gender::female;
  std::optional<double> x4, x5, x6, x7, x8, x9;
  std::optional<double> y1, y2;

  bool operator==(const LearningRecord&) const = default;
};

struct Dataset {
  std::vector<LearningRecord> records;
  std::vector<std::string> provenance;

  std::size_t size() const { return records.size(); }
  bool operator==(const Dataset& o) const { return records == o.records; }
};

struct FeatureMatrix {
  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  std::vector<std::string> feature_names;
};

// Monthly final exam score. JHS1 blends the written and listening scores
// (0.7/0.3); the elementary schools only sit the written test.
double compute_label(School school, double y1, std::optional<double> y2);

// Per-school-cohort mean imputation over x4..x9 and y1 (y2 only within
// JHS1, where the listening test exists). Throws DataError when a needed
// column is entirely null within a cohort.
Dataset impute_nulls(const Dataset& ds);

struct OutlierSummary {
  Dataset dataset;
  std::size_t removed = 0;
  // Set when the dataset holds fewer than 4 records and quartiles are
  // undefined; the input is passed through unchanged.
  bool skipped_too_small = false;
};

// Tukey-style fences Q1 - k*IQR / Q3 + k*IQR on x4..x9 and the label y,
// quartiles by linear interpolation on the sorted column. A record is
// dropped when any of those columns violates its fence.
OutlierSummary remove_outliers(const Dataset& ds, double fence = 1.9);

enum class Grouping { none, by_date_grade_school };

// Min-max scaling of x4..x9 to [0,1], globally or within each
// (date, grade, school) group. Constant columns map to 0.
Dataset standardize(const Dataset& ds, Grouping grouping);

enum class FeatureSet { seven, nine };

// Column order is x1[,x2,x3],x4..x9; categorical columns are passed as
// their numeric codes. Labels come from compute_label.
FeatureMatrix to_matrix(const Dataset& ds, FeatureSet features);

// Deterministic seeded shuffle; |test| = round(fraction * size).
std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, std::uint64_t seed);

// CSV with header date,school,grade,gender,x4,...,x9,y1,y2 and literal
// NULL for missing values.
Dataset read_csv(std::istream& in, const std::string& source_name = "<stream>");
Dataset read_csv_file(const std::string& path);
std::string to_csv(const Dataset& ds);
void write_csv_file(const Dataset& ds, const std::string& path);

// ---------------------------------------------------------------------
// Challenge-result reports.

enum class Outcome { correct, partial, incorrect };

const char* outcome_name(Outcome o);
Outcome outcome_from_string(const std::string& s);

// One speaking/listening challenge row: who attempted which sentence at
// which level, the AI-recognized score, and the recognition outcome.
struct ChallengeRecord {
  std::string member;
  std::string sentence;
  int level = 1;
  double score = 0.0;
  Outcome outcome = Outcome::incorrect;
};

enum class ReportKind { per_sentence_avg, per_member_avg_and_ratio, per_level_ratio };

ReportKind report_kind_from_string(const std::string& s);

std::vector<ChallengeRecord> read_challenges(std::istream& in);
std::vector<ChallengeRecord> read_challenges_file(const std::string& path);

// Grouped means/ratios as CSV text, rows sorted by key. Groups with no
// challenges are absent rather than zero-filled.
std::string report_aggregates(const std::vector<ChallengeRecord>& rows, ReportKind kind);

}  // namespace aifml::records
