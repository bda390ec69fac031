#include "aifml/fml.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "aifml/xml.hpp"

namespace aifml::fml {

namespace {

double parse_number(const xml::Node& node, const std::string& key) {
  const std::string* raw = node.attr(key);
  if (!raw) throw FmlError(node.line, node.col, "<" + node.name + "> is missing '" + key + "'");
  const char* begin = raw->c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw FmlError(node.line, node.col, "bad number '" + *raw + "' in '" + key + "'");
  }
  return v;
}

std::string require_attr(const xml::Node& node, const std::string& key) {
  const std::string* raw = node.attr(key);
  if (!raw || raw->empty()) {
    throw FmlError(node.line, node.col, "<" + node.name + "> is missing '" + key + "'");
  }
  return *raw;
}

std::string format_number(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

FuzzyTerm parse_term(const xml::Node& node, const FuzzyVariable& var) {
  FuzzyTerm term;
  term.name = require_attr(node, "name");
  const xml::Node* shape = nullptr;
  for (const auto& child : node.children) {
    if (shape) throw FmlError(child.line, child.col, "more than one shape in term '" + term.name + "'");
    shape = &child;
  }
  if (!shape) throw FmlError(node.line, node.col, "term '" + term.name + "' has no shape element");

  std::size_t n_params = 0;
  if (shape->name == "triangularShape") {
    term.shape = Shape::triangular;
    n_params = 3;
  } else if (shape->name == "trapezoidShape") {
    term.shape = Shape::trapezoidal;
    n_params = 4;
  } else {
    throw FmlError(shape->line, shape->col, "unknown membership shape <" + shape->name + ">");
  }
  for (std::size_t i = 1; i <= n_params; ++i) {
    term.params.push_back(parse_number(*shape, "param" + std::to_string(i)));
  }
  for (std::size_t i = 1; i < term.params.size(); ++i) {
    if (term.params[i] < term.params[i - 1]) {
      throw FmlError(shape->line, shape->col,
                     "breakpoints of term '" + term.name + "' in variable '" + var.name +
                         "' are not ascending");
    }
  }
  if (term.params.front() >= term.params.back()) {
    throw FmlError(shape->line, shape->col,
                   "term '" + term.name + "' in variable '" + var.name + "' has an empty support");
  }
  if (term.params.front() < var.lo || term.params.back() > var.hi) {
    throw FmlError(shape->line, shape->col,
                   "breakpoints of term '" + term.name + "' in variable '" + var.name +
                       "' fall outside the universe [" + format_number(var.lo) + ", " +
                       format_number(var.hi) + "]");
  }
  return term;
}

FuzzyVariable parse_variable(const xml::Node& node) {
  FuzzyVariable var;
  var.name = require_attr(node, "name");
  var.lo = parse_number(node, "domainleft");
  var.hi = parse_number(node, "domainright");
  if (!(var.lo < var.hi)) {
    throw FmlError(node.line, node.col, "variable '" + var.name + "' has an empty universe");
  }
  std::string role = require_attr(node, "type");
  if (role == "input") {
    var.role = VariableRole::input;
  } else if (role == "output") {
    var.role = VariableRole::output;
  } else {
    throw FmlError(node.line, node.col, "variable type must be input or output, got '" + role + "'");
  }
  std::set<std::string> seen;
  for (const auto& child : node.children) {
    if (child.name != "fuzzyTerm") {
      throw FmlError(child.line, child.col, "unexpected <" + child.name + "> in fuzzyVariable");
    }
    FuzzyTerm term = parse_term(child, var);
    if (!seen.insert(term.name).second) {
      throw FmlError(child.line, child.col,
                     "duplicate term '" + term.name + "' in variable '" + var.name + "'");
    }
    var.terms.push_back(std::move(term));
  }
  if (var.terms.empty()) {
    throw FmlError(node.line, node.col, "variable '" + var.name + "' declares no terms");
  }
  return var;
}

Clause parse_clause(const xml::Node& node, const FmlDocument& doc, VariableRole expected) {
  const xml::Node* var_node = node.first_child("variable");
  const xml::Node* term_node = node.first_child("term");
  if (!var_node || var_node->text.empty()) {
    throw FmlError(node.line, node.col, "clause is missing <variable>");
  }
  if (!term_node || term_node->text.empty()) {
    throw FmlError(node.line, node.col, "clause is missing <term>");
  }
  Clause clause{var_node->text, term_node->text};
  const FuzzyVariable* var = doc.variable(clause.variable);
  if (!var) {
    throw FmlError(var_node->line, var_node->col, "unknown variable '" + clause.variable + "'");
  }
  if (var->role != expected) {
    throw FmlError(var_node->line, var_node->col,
                   "variable '" + clause.variable + "' has the wrong role for this clause");
  }
  if (!var->term(clause.term)) {
    throw FmlError(term_node->line, term_node->col,
                   "variable '" + clause.variable + "' has no term '" + clause.term + "'");
  }
  return clause;
}

FuzzyRule parse_rule(const xml::Node& node, const FmlDocument& doc) {
  FuzzyRule rule;
  if (const std::string* w = node.attr("weight")) {
    rule.weight = parse_number(node, "weight");
    if (rule.weight < 0.0 || rule.weight > 1.0) {
      throw FmlError(node.line, node.col, "rule weight must be in [0,1], got " + *w);
    }
  }
  const xml::Node* ante = node.first_child("antecedent");
  const xml::Node* cons = node.first_child("consequent");
  if (!ante) throw FmlError(node.line, node.col, "rule is missing <antecedent>");
  if (!cons) throw FmlError(node.line, node.col, "rule is missing <consequent>");
  for (const auto& clause : ante->children) {
    if (clause.name != "clause") {
      throw FmlError(clause.line, clause.col, "unexpected <" + clause.name + "> in antecedent");
    }
    rule.antecedents.push_back(parse_clause(clause, doc, VariableRole::input));
  }
  if (rule.antecedents.empty()) {
    throw FmlError(ante->line, ante->col, "rule has an empty antecedent");
  }
  auto clauses = cons->children_named("clause");
  if (clauses.size() != 1) {
    throw FmlError(cons->line, cons->col, "consequent must hold exactly one clause");
  }
  rule.consequent = parse_clause(*clauses[0], doc, VariableRole::output);
  return rule;
}

}  // namespace

const FuzzyTerm* FuzzyVariable::term(std::string_view name) const {
  for (const auto& t : terms) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const FuzzyVariable* FmlDocument::variable(std::string_view name) const {
  for (const auto& v : variables) {
    if (v.name == name) return &v;
  }
  return nullptr;
}

const FuzzyVariable& FmlDocument::output_variable() const {
  for (const auto& v : variables) {
    if (v.role == VariableRole::output) return v;
  }
  throw std::logic_error("document has no output variable");
}

double membership(const FuzzyTerm& term, double x) {
  const auto& p = term.params;
  if (term.shape == Shape::triangular) {
    if (x < p[0] || x > p[2]) return 0.0;
    if (x < p[1]) return p[1] == p[0] ? 1.0 : (x - p[0]) / (p[1] - p[0]);
    if (x > p[1]) return p[2] == p[1] ? 1.0 : (p[2] - x) / (p[2] - p[1]);
    return 1.0;
  }
  if (x < p[0] || x > p[3]) return 0.0;
  if (x < p[1]) return p[1] == p[0] ? 1.0 : (x - p[0]) / (p[1] - p[0]);
  if (x > p[2]) return p[3] == p[2] ? 1.0 : (p[3] - x) / (p[3] - p[2]);
  return 1.0;
}

FmlDocument parse_fml(std::string_view text) {
  xml::Node root;
  try {
    root = xml::parse(text);
  } catch (const xml::ParseError& e) {
    throw FmlError(e.line, e.col, e.what());
  }
  if (root.name != "fuzzySystem") {
    throw FmlError(root.line, root.col, "root element must be <fuzzySystem>, got <" + root.name + ">");
  }
  FmlDocument doc;
  doc.name = require_attr(root, "name");
  if (const std::string* v = root.attr("version")) doc.version = *v;

  const xml::Node* kb = root.first_child("knowledgeBase");
  if (!kb) throw FmlError(root.line, root.col, "document is missing <knowledgeBase>");
  std::set<std::string> names;
  int n_outputs = 0;
  for (const auto& child : kb->children) {
    if (child.name != "fuzzyVariable") {
      throw FmlError(child.line, child.col, "unexpected <" + child.name + "> in knowledgeBase");
    }
    FuzzyVariable var = parse_variable(child);
    if (!names.insert(var.name).second) {
      throw FmlError(child.line, child.col, "duplicate variable '" + var.name + "'");
    }
    if (var.role == VariableRole::output) ++n_outputs;
    doc.variables.push_back(std::move(var));
  }
  if (n_outputs != 1) {
    throw FmlError(kb->line, kb->col,
                   "knowledge base must declare exactly one output variable, found " +
                       std::to_string(n_outputs));
  }

  const xml::Node* rb = root.first_child("ruleBase");
  if (!rb) throw FmlError(root.line, root.col, "document is missing <ruleBase>");
  for (const auto& child : rb->children) {
    if (child.name != "rule") {
      throw FmlError(child.line, child.col, "unexpected <" + child.name + "> in ruleBase");
    }
    doc.rules.push_back(parse_rule(child, doc));
  }
  return doc;
}

std::string serialize(const FmlDocument& doc) {
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<fuzzySystem name=\"" << xml::escape(doc.name) << "\"";
  if (!doc.version.empty()) out << " version=\"" << xml::escape(doc.version) << "\"";
  out << ">\n  <knowledgeBase>\n";
  for (const auto& var : doc.variables) {
    out << "    <fuzzyVariable name=\"" << xml::escape(var.name) << "\" type=\""
        << (var.role == VariableRole::input ? "input" : "output") << "\" domainleft=\""
        << format_number(var.lo) << "\" domainright=\"" << format_number(var.hi) << "\">\n";
    for (const auto& term : var.terms) {
      out << "      <fuzzyTerm name=\"" << xml::escape(term.name) << "\">\n        <"
          << (term.shape == Shape::triangular ? "triangularShape" : "trapezoidShape");
      for (std::size_t i = 0; i < term.params.size(); ++i) {
        out << " param" << i + 1 << "=\"" << format_number(term.params[i]) << "\"";
      }
      out << "/>\n      </fuzzyTerm>\n";
    }
    out << "    </fuzzyVariable>\n";
  }
  out << "  </knowledgeBase>\n  <ruleBase name=\"" << xml::escape(doc.name) << "\">\n";
  for (const auto& rule : doc.rules) {
    out << "    <rule weight=\"" << format_number(rule.weight) << "\">\n      <antecedent>\n";
    for (const auto& clause : rule.antecedents) {
      out << "        <clause><variable>" << xml::escape(clause.variable) << "</variable><term>"
          << xml::escape(clause.term) << "</term></clause>\n";
    }
    out << "      </antecedent>\n      <consequent>\n        <clause><variable>"
        << xml::escape(rule.consequent.variable) << "</variable><term>"
        << xml::escape(rule.consequent.term) << "</term></clause>\n      </consequent>\n"
        << "    </rule>\n";
  }
  out << "  </ruleBase>\n</fuzzySystem>\n";
  return out.str();
}

FmlDocument load_fml_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_fml(buf.str());
}

InferenceResult infer(const FmlDocument& doc, const std::map<std::string, double>& inputs) {
  const FuzzyVariable& out_var = doc.output_variable();

  std::set<std::string> referenced;
  for (const auto& rule : doc.rules) {
    for (const auto& clause : rule.antecedents) referenced.insert(clause.variable);
  }
  for (const auto& name : referenced) {
    auto it = inputs.find(name);
    if (it == inputs.end()) {
      throw std::invalid_argument("missing input for variable '" + name + "'");
    }
    const FuzzyVariable* var = doc.variable(name);
    if (it->second < var->lo || it->second > var->hi) {
      throw std::invalid_argument("input for '" + name + "' is outside its universe");
    }
  }
  for (const auto& [name, value] : inputs) {
    const FuzzyVariable* var = doc.variable(name);
    if (!var || var->role != VariableRole::input) {
      throw std::invalid_argument("'" + name + "' is not an input variable of this document");
    }
  }

  struct Fired {
    double activation;
    const FuzzyTerm* term;
  };
  std::vector<Fired> fired;
  for (const auto& rule : doc.rules) {
    double strength = 1.0;
    for (const auto& clause : rule.antecedents) {
      const FuzzyVariable* var = doc.variable(clause.variable);
      strength = std::min(strength, membership(*var->term(clause.term), inputs.at(clause.variable)));
    }
    const double activation = rule.weight * strength;
    if (activation > 0.0) {
      fired.push_back({activation, doc.variable(rule.consequent.variable)->term(rule.consequent.term)});
    }
  }

  const double mid = 0.5 * (out_var.lo + out_var.hi);
  if (fired.empty()) return {mid, true};

  // Centroid of the max-aggregated clipped sets, trapezoidal rule.
  const double step = (out_var.hi - out_var.lo) / (kCentroidGridPoints - 1);
  double num = 0.0;
  double den = 0.0;
  for (int i = 0; i < kCentroidGridPoints; ++i) {
    const double x = out_var.lo + step * i;
    double mu = 0.0;
    for (const auto& f : fired) {
      mu = std::max(mu, std::min(f.activation, membership(*f.term, x)));
    }
    const double w = (i == 0 || i == kCentroidGridPoints - 1) ? 0.5 : 1.0;
    num += w * mu * x;
    den += w * mu;
  }
  if (den == 0.0) return {mid, true};
  return {num / den, false};
}

}  // namespace aifml::fml
