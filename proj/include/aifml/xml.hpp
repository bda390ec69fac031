#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace aifml::xml {

struct ParseError : std::runtime_error {
  ParseError(int line, int col, const std::string& what)
      : std::runtime_error("xml:" + std::to_string(line) + ":" + std::to_string(col) + ": " + what),
        line(line),
        col(col) {}
  int line;
  int col;
};

// Element tree. Attribute order is preserved; text is the concatenated,
// trimmed character data of the element.
struct Node {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attrs;
  std::vector<Node> children;
  std::string text;
  int line = 0;
  int col = 0;

  const std::string* attr(std::string_view key) const {
    for (const auto& [k, v] : attrs) {
      if (k == key) return &v;
    }
    return nullptr;
  }

  std::vector<const Node*> children_named(std::string_view name) const {
    std::vector<const Node*> out;
    for (const auto& c : children) {
      if (c.name == name) out.push_back(&c);
    }
    return out;
  }

  const Node* first_child(std::string_view name) const {
    for (const auto& c : children) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }
};

// Parses one document (prolog, comments, and a single root element).
// Supports the five named entities plus numeric character references.
// Throws ParseError with 1-based line/column on the first violation.
Node parse(std::string_view text);

// Escapes text for use in attribute values or character data.
std::string escape(std::string_view raw);

}  // namespace aifml::xml
