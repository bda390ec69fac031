#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace aifml::fml {

// Raised for both malformed XML and semantic violations. line/col point at
// the offending construct in the source text.
struct FmlError : std::runtime_error {
  FmlError(int line, int col, const std::string& what)
      : std::runtime_error("fml:" + std::to_string(line) + ":" + std::to_string(col) + ": " + what),
        line(line),
        col(col) {}
  int line;
  int col;
};

enum class Shape { triangular, trapezoidal };

struct FuzzyTerm {
  std::string name;
  Shape shape = Shape::triangular;
  std::vector<double> params;  // 3 (triangular) or 4 (trapezoidal), non-decreasing

  bool operator==(const FuzzyTerm&) const = default;
};

enum class VariableRole { input, output };

struct FuzzyVariable {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
  VariableRole role = VariableRole::input;
  std::vector<FuzzyTerm> terms;

  const FuzzyTerm* term(std::string_view name) const;
  bool operator==(const FuzzyVariable&) const = default;
};

struct Clause {
  std::string variable;
  std::string term;
  bool operator==(const Clause&) const = default;
};

// Antecedent clauses are joined by AND (min).
struct FuzzyRule {
  std::vector<Clause> antecedents;
  Clause consequent;
  double weight = 1.0;
  bool operator==(const FuzzyRule&) const = default;
};

struct FmlDocument {
  std::string name;
  std::string version;
  std::vector<FuzzyVariable> variables;
  std::vector<FuzzyRule> rules;

  const FuzzyVariable* variable(std::string_view name) const;
  const FuzzyVariable& output_variable() const;
  bool operator==(const FmlDocument&) const = default;
};

// Piecewise-linear membership; zero outside the support. Equal adjacent
// breakpoints form a vertical shoulder.
double membership(const FuzzyTerm& term, double x);

// Parses and validates a fuzzySystem document. Throws FmlError.
FmlDocument parse_fml(std::string_view text);

// Canonical XML form; parse_fml(serialize(d)) == d for valid documents.
std::string serialize(const FmlDocument& doc);

FmlDocument load_fml_file(const std::string& path);

struct InferenceResult {
  double value = 0.0;
  // Set when no rule produced a positive activation; value is then the
  // midpoint of the output universe.
  bool no_rule_fired = false;
};

// Mamdani: min for AND, weight scales the activation, clipping for
// implication, max aggregation, centroid over a 1001-point grid.
InferenceResult infer(const FmlDocument& doc, const std::map<std::string, double>& inputs);

inline constexpr int kCentroidGridPoints = 1001;

}  // namespace aifml::fml
