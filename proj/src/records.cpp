#include "aifml/records.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>

#include "aifml/rng.hpp"

namespace aifml::records {

namespace {

using OptField = std::optional<double> LearningRecord::*;

struct Column {
  const char* name;
  OptField field;
};

constexpr std::array<Column, 6> kFeatureColumns = {{
    {"x4", &LearningRecord::x4},
    {"x5", &LearningRecord::x5},
    {"x6", &LearningRecord::x6},
    {"x7", &LearningRecord::x7},
    {"x8", &LearningRecord::x8},
    {"x9", &LearningRecord::x9},
}};

std::string format_number(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& raw, const std::string& where) {
  const char* begin = raw.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw DataError("bad number '" + raw + "' in " + where);
  }
  return v;
}

// RFC-4180-ish splitter: double quotes guard embedded commas, "" escapes
// a quote inside a quoted field.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

std::optional<double> parse_nullable(const std::string& raw, const std::string& where) {
  if (raw.empty() || raw == "NULL") return std::nullopt;
  return parse_double(raw, where);
}

std::string cell(const std::optional<double>& v) {
  return v ? format_number(*v) : "NULL";
}

void validate_record(const LearningRecord& r, const std::string& where) {
  const bool jhs = r.school == School::jhs1;
  if (jhs ? (r.grade < 7 || r.grade > 9) : (r.grade < 1 || r.grade > 6)) {
    throw DataError("grade " + std::to_string(r.grade) + " is out of range for " +
                    school_name(r.school) + " in " + where);
  }
  if (r.x7 && *r.x7 < 0) throw DataError("x7 must be non-negative in " + where);
  if (r.x8 && (*r.x8 < 0 || *r.x8 > 1)) throw DataError("x8 must lie in [0,1] in " + where);
  if (r.x9 && *r.x9 < 0) throw DataError("x9 must be non-negative in " + where);
  if (r.y1 && (*r.y1 < 0 || *r.y1 > 100)) throw DataError("y1 must lie in [0,100] in " + where);
  if (r.y2 && (*r.y2 < 0 || *r.y2 > 100)) throw DataError("y2 must lie in [0,100] in " + where);
  if (!jhs && r.y2) {
    throw DataError("y2 (listening test) is only collected at JHS1, present in " + where);
  }
}

// Linear interpolation on the sorted sample (the spreadsheet convention).
double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double require(const std::optional<double>& v, const char* col, std::size_t row) {
  if (!v) {
    throw DataError(std::string("column ") + col + " is null at record " + std::to_string(row) +
                    "; run imputation first");
  }
  return *v;
}

double label_of(const LearningRecord& r, std::size_t row) {
  return compute_label(r.school, require(r.y1, "y1", row),
                       r.school == School::jhs1
                           ? std::optional<double>(require(r.y2, "y2", row))
                           : std::nullopt);
}

}  // namespace

const char* school_name(School s) {
  switch (s) {
    case School::jhs1: return "JHS1";
    case School::es1: return "ES1";
    case School::es2: return "ES2";
  }
  return "?";
}

School school_from_string(const std::string& s) {
  if (s == "0" || s == "JHS1" || s == "jhs1") return School::jhs1;
  if (s == "1" || s == "ES1" || s == "es1") return School::es1;
  if (s == "2" || s == "ES2" || s == "es2") return School::es2;
  throw DataError("unknown school code '" + s + "' (expected 0/1/2 or JHS1/ES1/ES2)");
}

double compute_label(School school, double y1, std::optional<double> y2) {
  if (school == School::jhs1) {
    if (!y2) throw DataError("JHS1 record is missing its listening score y2");
    return y1 * 0.7 + *y2 * 0.3;
  }
  return y1;
}

Dataset impute_nulls(const Dataset& ds) {
  Dataset out = ds;

  struct Needed {
    const char* name;
    OptField field;
    bool jhs_only;
  };
  const std::array<Needed, 8> columns = {{
      {"x4", &LearningRecord::x4, false},
      {"x5", &LearningRecord::x5, false},
      {"x6", &LearningRecord::x6, false},
      {"x7", &LearningRecord::x7, false},
      {"x8", &LearningRecord::x8, false},
      {"x9", &LearningRecord::x9, false},
      {"y1", &LearningRecord::y1, false},
      {"y2", &LearningRecord::y2, true},
  }};

  for (School school : {School::jhs1, School::es1, School::es2}) {
    std::vector<LearningRecord*> cohort;
    for (auto& r : out.records) {
      if (r.school == school) cohort.push_back(&r);
    }
    if (cohort.empty()) continue;
    for (const auto& col : columns) {
      if (col.jhs_only && school != School::jhs1) continue;
      double sum = 0.0;
      std::size_t n = 0;
      bool any_null = false;
      for (const auto* r : cohort) {
        if (const auto& v = r->*(col.field)) {
          sum += *v;
          ++n;
        } else {
          any_null = true;
        }
      }
      if (!any_null) continue;
      if (n == 0) {
        throw DataError(std::string("column ") + col.name + " is entirely null within the " +
                        school_name(school) + " cohort; cannot impute");
      }
      const double mean = sum / static_cast<double>(n);
      for (auto* r : cohort) {
        if (!(r->*(col.field))) r->*(col.field) = mean;
      }
    }
  }
  out.provenance.push_back("impute:per-school-mean");
  return out;
}

OutlierSummary remove_outliers(const Dataset& ds, double fence) {
  OutlierSummary result;
  if (ds.records.size() < 4) {
    result.dataset = ds;
    result.skipped_too_small = true;
    result.dataset.provenance.push_back("outliers:skipped(<4 records)");
    return result;
  }

  // Fence pairs for x4..x9 and the derived label y.
  std::vector<std::pair<double, double>> fences;
  for (const auto& col : kFeatureColumns) {
    std::vector<double> values;
    values.reserve(ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      values.push_back(require(ds.records[i].*(col.field), col.name, i));
    }
    std::sort(values.begin(), values.end());
    const double q1 = quantile_sorted(values, 0.25);
    const double q3 = quantile_sorted(values, 0.75);
    const double iqr = q3 - q1;
    fences.emplace_back(q1 - fence * iqr, q3 + fence * iqr);
  }
  {
    std::vector<double> labels;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      labels.push_back(label_of(ds.records[i], i));
    }
    std::sort(labels.begin(), labels.end());
    const double q1 = quantile_sorted(labels, 0.25);
    const double q3 = quantile_sorted(labels, 0.75);
    const double iqr = q3 - q1;
    fences.emplace_back(q1 - fence * iqr, q3 + fence * iqr);
  }

  result.dataset.provenance = ds.provenance;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    bool keep = true;
    for (std::size_t c = 0; c < kFeatureColumns.size() && keep; ++c) {
      const double v = *(r.*(kFeatureColumns[c].field));
      if (v < fences[c].first || v > fences[c].second) keep = false;
    }
    if (keep) {
      const double y = label_of(r, i);
      if (y < fences.back().first || y > fences.back().second) keep = false;
    }
    if (keep) {
      result.dataset.records.push_back(r);
    } else {
      ++result.removed;
    }
  }
  result.dataset.provenance.push_back("outliers:fence=" + format_number(fence) + ",removed=" +
                                      std::to_string(result.removed));
  return result;
}

Dataset standardize(const Dataset& ds, Grouping grouping) {
  Dataset out = ds;

  auto group_key = [&](const LearningRecord& r) -> std::string {
    if (grouping == Grouping::none) return "";
    return r.date + "|" + std::to_string(static_cast<int>(r.school)) + "|" +
           std::to_string(r.grade);
  };

  std::map<std::string, std::vector<LearningRecord*>> groups;
  for (auto& r : out.records) groups[group_key(r)].push_back(&r);

  for (auto& [key, members] : groups) {
    for (const auto& col : kFeatureColumns) {
      double lo = 0.0, hi = 0.0;
      bool first = true;
      for (std::size_t i = 0; i < members.size(); ++i) {
        const double v = require(members[i]->*(col.field), col.name, i);
        lo = first ? v : std::min(lo, v);
        hi = first ? v : std::max(hi, v);
        first = false;
      }
      for (auto* r : members) {
        const double v = *(r->*(col.field));
        r->*(col.field) = (hi > lo) ? (v - lo) / (hi - lo) : 0.0;
      }
    }
  }
  out.provenance.push_back(grouping == Grouping::none ? "standardize:global"
                                                      : "standardize:by(date,grade,school)");
  return out;
}

FeatureMatrix to_matrix(const Dataset& ds, FeatureSet features) {
  FeatureMatrix m;
  if (features == FeatureSet::seven) {
    m.feature_names = {"x1", "x4", "x5", "x6", "x7", "x8", "x9"};
  } else {
    m.feature_names = {"x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9"};
  }
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    std::vector<double> row;
    row.reserve(m.feature_names.size());
    row.push_back(static_cast<double>(static_cast<int>(r.school)));
    if (features == FeatureSet::nine) {
      row.push_back(static_cast<double>(r.grade));
      row.push_back(static_cast<double>(static_cast<int>(r.gender)));
    }
    for (const auto& col : kFeatureColumns) {
      row.push_back(require(r.*(col.field), col.name, i));
    }
    m.rows.push_back(std::move(row));
    m.labels.push_back(label_of(r, i));
  }
  return m;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw DataError("test fraction must lie in (0,1)");
  }
  const std::size_t n = ds.records.size();
  const auto n_test =
      static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));

  std::vector<std::size_t> index(n);
  for (std::size_t i = 0; i < n; ++i) index[i] = i;
  Rng rng(seed);
  rng.shuffle(index);

  std::vector<bool> in_test(n, false);
  for (std::size_t i = 0; i < n_test; ++i) in_test[index[i]] = true;

  Dataset train, test;
  train.provenance = ds.provenance;
  test.provenance = ds.provenance;
  train.provenance.push_back("split:train,seed=" + std::to_string(seed));
  test.provenance.push_back("split:test,seed=" + std::to_string(seed));
  for (std::size_t i = 0; i < n; ++i) {
    (in_test[i] ? test : train).records.push_back(ds.records[i]);
  }
  return {std::move(train), std::move(test)};
}

Dataset read_csv(std::istream& in, const std::string& source_name) {
  Dataset ds;
  ds.provenance.push_back("source:" + source_name);
  std::string line;
  if (!std::getline(in, line)) throw DataError(source_name + " is empty");
  const auto header = split_csv_line(line);
  const std::vector<std::string> expected = {"date", "school", "grade", "gender", "x4", "x5",
                                             "x6", "x7", "x8", "x9", "y1", "y2"};
  if (header != expected) {
    throw DataError(source_name + " has an unexpected header; expected date,school,grade,gender,"
                                  "x4,x5,x6,x7,x8,x9,y1,y2");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    const std::string where = source_name + ":" + std::to_string(line_no);
    if (fields.size() != expected.size()) {
      throw DataError(where + ": expected " + std::to_string(expected.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    LearningRecord r;
    r.date = fields[0];
    r.school = school_from_string(fields[1]);
    r.grade = static_cast<int>(parse_double(fields[2], where));
    const std::string& g = fields[3];
    if (g == "0" || g == "F" || g == "f") r.gender = Gender::female;
    else if (g == "1" || g == "M" || g == "m") r.gender = Gender::male;
    else throw DataError(where + ": unknown gender '" + g + "'");
    r.x4 = parse_nullable(fields[4], where);
    r.x5 = parse_nullable(fields[5], where);
    r.x6 = parse_nullable(fields[6], where);
    r.x7 = parse_nullable(fields[7], where);
    r.x8 = parse_nullable(fields[8], where);
    r.x9 = parse_nullable(fields[9], where);
    r.y1 = parse_nullable(fields[10], where);
    r.y2 = parse_nullable(fields[11], where);
    validate_record(r, where);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

Dataset read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_csv(in, path);
}

std::string to_csv(const Dataset& ds) {
  std::ostringstream out;
  out << "date,school,grade,gender,x4,x5,x6,x7,x8,x9,y1,y2\n";
  for (const auto& r : ds.records) {
    out << r.date << ',' << static_cast<int>(r.school) << ',' << r.grade << ','
        << static_cast<int>(r.gender) << ',' << cell(r.x4) << ',' << cell(r.x5) << ','
        << cell(r.x6) << ',' << cell(r.x7) << ',' << cell(r.x8) << ',' << cell(r.x9) << ','
        << cell(r.y1) << ',' << cell(r.y2) << '\n';
  }
  return out.str();
}

void write_csv_file(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << to_csv(ds);
}

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::correct: return "correct";
    case Outcome::partial: return "partial";
    case Outcome::incorrect: return "incorrect";
  }
  return "?";
}

Outcome outcome_from_string(const std::string& s) {
  if (s == "correct") return Outcome::correct;
  if (s == "partial") return Outcome::partial;
  if (s == "incorrect") return Outcome::incorrect;
  throw DataError("unknown outcome '" + s + "'");
}

ReportKind report_kind_from_string(const std::string& s) {
  if (s == "per_sentence" || s == "per_sentence_avg") return ReportKind::per_sentence_avg;
  if (s == "per_member" || s == "per_member_avg_and_ratio") {
    return ReportKind::per_member_avg_and_ratio;
  }
  if (s == "per_level" || s == "per_level_ratio") return ReportKind::per_level_ratio;
  throw DataError("unknown report kind '" + s + "'");
}

std::vector<ChallengeRecord> read_challenges(std::istream& in) {
  std::vector<ChallengeRecord> rows;
  std::string line;
  if (!std::getline(in, line)) throw DataError("challenge input is empty");
  if (split_csv_line(line) !=
      std::vector<std::string>{"member", "sentence", "level", "score", "outcome"}) {
    throw DataError("challenge CSV must have header member,sentence,level,score,outcome");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    const std::string where = "challenges:" + std::to_string(line_no);
    if (fields.size() != 5) throw DataError(where + ": expected 5 fields");
    ChallengeRecord r;
    r.member = fields[0];
    r.sentence = fields[1];
    r.level = static_cast<int>(parse_double(fields[2], where));
    r.score = parse_double(fields[3], where);
    r.outcome = outcome_from_string(fields[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ChallengeRecord> read_challenges_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_challenges(in);
}

std::string report_aggregates(const std::vector<ChallengeRecord>& rows, ReportKind kind) {
  std::ostringstream out;
  switch (kind) {
    case ReportKind::per_sentence_avg: {
      std::map<std::string, std::pair<double, std::size_t>> acc;  // sum, n
      for (const auto& r : rows) {
        auto& a = acc[r.sentence];
        a.first += r.score;
        a.second += 1;
      }
      out << "sentence,avg_score,n\n";
      for (const auto& [sentence, a] : acc) {
        out << csv_quote(sentence) << ',' << format_number(a.first / a.second) << ',' << a.second
            << '\n';
      }
      break;
    }
    case ReportKind::per_member_avg_and_ratio: {
      struct Acc {
        double sum = 0;
        std::size_t correct = 0;
        std::size_t n = 0;
      };
      std::map<std::string, Acc> acc;
      for (const auto& r : rows) {
        auto& a = acc[r.member];
        a.sum += r.score;
        a.correct += r.outcome == Outcome::correct ? 1 : 0;
        a.n += 1;
      }
      out << "member,avg_score,correct_ratio,n\n";
      for (const auto& [member, a] : acc) {
        out << csv_quote(member) << ',' << format_number(a.sum / a.n) << ','
            << format_number(static_cast<double>(a.correct) / a.n) << ',' << a.n << '\n';
      }
      break;
    }
    case ReportKind::per_level_ratio: {
      struct Acc {
        std::size_t correct = 0;
        std::size_t n = 0;
      };
      std::map<std::pair<std::string, int>, Acc> acc;
      for (const auto& r : rows) {
        auto& a = acc[{r.member, r.level}];
        a.correct += r.outcome == Outcome::correct ? 1 : 0;
        a.n += 1;
      }
      out << "member,level,correct_ratio,n\n";
      for (const auto& [key, a] : acc) {
        out << csv_quote(key.first) << ',' << key.second << ','
            << format_number(static_cast<double>(a.correct) / a.n) << ',' << a.n << '\n';
      }
      break;
    }
  }
  return out.str();
}

}  // namespace aifml::records
