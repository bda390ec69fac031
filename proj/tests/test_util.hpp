#pragma once

// Shared helpers for the unit and acceptance suites: random FML document
// generation and slow reference computations kept independent of the
// library's own code paths.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "aifml/fml.hpp"
#include "aifml/rng.hpp"

namespace testutil {

// Membership via explicit polyline interpolation (independent of
// fml::membership).
inline double polyline_membership(const aifml::fml::FuzzyTerm& term, double x) {
  std::vector<std::pair<double, double>> pts;
  const auto& p = term.params;
  if (term.shape == aifml::fml::Shape::triangular) {
    pts = {{p[0], 0.0}, {p[1], 1.0}, {p[2], 0.0}};
  } else {
    pts = {{p[0], 0.0}, {p[1], 1.0}, {p[2], 1.0}, {p[3], 0.0}};
  }
  if (x < pts.front().first || x > pts.back().first) return 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const auto [x0, y0] = pts[i - 1];
    const auto [x1, y1] = pts[i];
    if (x > x1) continue;
    if (x1 == x0) return std::max(y0, y1);
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
  }
  return 0.0;
}

// Dense-grid Mamdani reference: activations recomputed from scratch, max
// aggregation and trapezoidal centroid over n_points samples.
inline double centroid_oracle(const aifml::fml::FmlDocument& doc,
                              const std::map<std::string, double>& inputs,
                              int n_points = 10001) {
  const auto& out_var = doc.output_variable();
  std::vector<std::pair<double, const aifml::fml::FuzzyTerm*>> clipped;
  for (const auto& rule : doc.rules) {
    double strength = 1.0;
    for (const auto& clause : rule.antecedents) {
      const auto* var = doc.variable(clause.variable);
      strength = std::min(strength, polyline_membership(*var->term(clause.term), inputs.at(clause.variable)));
    }
    clipped.emplace_back(rule.weight * strength, doc.variable(rule.consequent.variable)->term(rule.consequent.term));
  }
  const double step = (out_var.hi - out_var.lo) / (n_points - 1);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < n_points; ++i) {
    const double x = out_var.lo + i * step;
    double mu = 0.0;
    for (const auto& [act, term] : clipped) {
      mu = std::max(mu, std::min(act, polyline_membership(*term, x)));
    }
    const double w = (i == 0 || i == n_points - 1) ? 0.5 : 1.0;
    num += w * mu * x;
    den += w * mu;
  }
  if (den == 0.0) return 0.5 * (out_var.lo + out_var.hi);
  return num / den;
}

inline aifml::fml::FuzzyTerm random_term(const std::string& name, double lo, double hi,
                                         aifml::Rng& rng) {
  aifml::fml::FuzzyTerm term;
  term.name = name;
  const bool trap = rng.chance(0.4);
  term.shape = trap ? aifml::fml::Shape::trapezoidal : aifml::fml::Shape::triangular;
  const std::size_t n = trap ? 4 : 3;
  std::vector<double> p;
  for (std::size_t i = 0; i < n; ++i) p.push_back(rng.uniform(lo, hi));
  std::sort(p.begin(), p.end());
  if (p.front() == p.back()) p.back() = p.front() + (hi - lo) * 0.25;  // keep the support nonzero
  if (p.back() > hi) p.back() = hi;
  // Occasionally pin a shoulder to the universe edge.
  if (rng.chance(0.3)) p.front() = lo;
  term.params = p;
  return term;
}

inline aifml::fml::FmlDocument random_document(aifml::Rng& rng) {
  using namespace aifml::fml;
  FmlDocument doc;
  doc.name = "doc" + std::to_string(rng.below(1000));
  doc.version = "1.0";
  const int n_inputs = 1 + static_cast<int>(rng.below(3));
  for (int i = 0; i < n_inputs; ++i) {
    FuzzyVariable var;
    var.name = "in" + std::to_string(i);
    var.lo = 0.0;
    var.hi = rng.uniform(1.0, 10.0);
    var.role = VariableRole::input;
    const int n_terms = 1 + static_cast<int>(rng.below(4));
    for (int t = 0; t < n_terms; ++t) {
      var.terms.push_back(random_term("t" + std::to_string(t), var.lo, var.hi, rng));
    }
    doc.variables.push_back(std::move(var));
  }
  FuzzyVariable out;
  out.name = "out";
  out.lo = 0.0;
  out.hi = rng.uniform(1.0, 10.0);
  out.role = VariableRole::output;
  const int n_out_terms = 1 + static_cast<int>(rng.below(4));
  for (int t = 0; t < n_out_terms; ++t) {
    out.terms.push_back(random_term("o" + std::to_string(t), out.lo, out.hi, rng));
  }
  doc.variables.push_back(std::move(out));
  const auto& out_terms = doc.variables.back().terms;

  const int n_rules = 1 + static_cast<int>(rng.below(4));
  for (int r = 0; r < n_rules; ++r) {
    FuzzyRule rule;
    for (int i = 0; i < n_inputs; ++i) {
      if (i > 0 && rng.chance(0.4)) continue;
      const auto& var = doc.variables[i];
      rule.antecedents.push_back(
          {var.name, var.terms[rng.below(var.terms.size())].name});
    }
    rule.consequent = {"out", out_terms[rng.below(out_terms.size())].name};
    rule.weight = rng.uniform(0.25, 1.0);
    doc.rules.push_back(std::move(rule));
  }
  return doc;
}

// Crisp inputs covering every input variable of the document.
inline std::map<std::string, double> random_inputs(const aifml::fml::FmlDocument& doc,
                                                   aifml::Rng& rng) {
  std::map<std::string, double> inputs;
  for (const auto& var : doc.variables) {
    if (var.role == aifml::fml::VariableRole::input) {
      inputs[var.name] = rng.uniform(var.lo, var.hi);
    }
  }
  return inputs;
}

}  // namespace testutil
