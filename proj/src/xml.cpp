#include "aifml/xml.hpp"

#include <cctype>

namespace aifml::xml {

namespace {

bool is_name_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == ':';
}

bool is_name_char(char c) {
  return is_name_start(c) || std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '.';
}

class Cursor {
 public:
  explicit Cursor(std::string_view text) : text_(text) {}

  bool eof() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }
  bool starts_with(std::string_view s) const { return text_.substr(pos_, s.size()) == s; }

  char take() {
    char c = text_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  void take(std::size_t n) {
    for (std::size_t i = 0; i < n && !eof(); ++i) take();
  }

  void skip_ws() {
    while (!eof() && std::isspace(static_cast<unsigned char>(peek()))) take();
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(line_, col_, what); }

  int line() const { return line_; }
  int col() const { return col_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

class Parser {
 public:
  explicit Parser(std::string_view text) : c_(text) {}

  Node run() {
    skip_misc();
    if (c_.eof()) c_.fail("expected a root element");
    if (c_.peek() != '<') c_.fail("expected '<'");
    Node root = element();
    skip_misc();
    if (!c_.eof()) c_.fail("content after the root element");
    return root;
  }

 private:
  // Prolog, comments, processing instructions, DOCTYPE, whitespace.
  void skip_misc() {
    for (;;) {
      c_.skip_ws();
      if (c_.starts_with("<?")) {
        skip_until("?>");
      } else if (c_.starts_with("<!--")) {
        skip_until("-->");
      } else if (c_.starts_with("<!")) {
        skip_until(">");
      } else {
        return;
      }
    }
  }

  void skip_until(std::string_view end) {
    while (!c_.eof() && !c_.starts_with(end)) c_.take();
    if (c_.eof()) c_.fail("unterminated '" + std::string(end) + "'");
    c_.take(end.size());
  }

  std::string name() {
    if (c_.eof() || !is_name_start(c_.peek())) c_.fail("expected a name");
    std::string out;
    while (!c_.eof() && is_name_char(c_.peek())) out.push_back(c_.take());
    return out;
  }

  std::string entity() {
    // Called after '&' has been consumed.
    std::string ref;
    while (!c_.eof() && c_.peek() != ';') ref.push_back(c_.take());
    if (c_.eof()) c_.fail("unterminated entity reference");
    c_.take();
    if (ref == "amp") return "&";
    if (ref == "lt") return "<";
    if (ref == "gt") return ">";
    if (ref == "quot") return "\"";
    if (ref == "apos") return "'";
    if (!ref.empty() && ref[0] == '#') {
      long code = 0;
      try {
        code = (ref.size() > 1 && (ref[1] == 'x' || ref[1] == 'X'))
                   ? std::stol(ref.substr(2), nullptr, 16)
                   : std::stol(ref.substr(1), nullptr, 10);
      } catch (const std::exception&) {
        c_.fail("bad character reference '&" + ref + ";'");
      }
      if (code <= 0 || code > 0x10FFFF) c_.fail("character reference out of range");
      return utf8(static_cast<unsigned>(code));
    }
    c_.fail("unknown entity '&" + ref + ";'");
  }

  static std::string utf8(unsigned cp) {
    std::string out;
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return out;
  }

  std::string attr_value() {
    if (c_.eof() || (c_.peek() != '"' && c_.peek() != '\'')) c_.fail("expected a quoted value");
    const char quote = c_.take();
    std::string out;
    for (;;) {
      if (c_.eof()) c_.fail("unterminated attribute value");
      char ch = c_.peek();
      if (ch == quote) {
        c_.take();
        return out;
      }
      if (ch == '<') c_.fail("'<' inside an attribute value");
      c_.take();
      if (ch == '&') {
        out += entity();
      } else {
        out.push_back(ch);
      }
    }
  }

  Node element() {
    Node node;
    node.line = c_.line();
    node.col = c_.col();
    c_.take();  // '<'
    node.name = name();
    for (;;) {
      c_.skip_ws();
      if (c_.eof()) c_.fail("unterminated start tag for <" + node.name + ">");
      if (c_.starts_with("/>")) {
        c_.take(2);
        return node;
      }
      if (c_.peek() == '>') {
        c_.take();
        content(node);
        return node;
      }
      std::string key = name();
      for (const auto& [k, v] : node.attrs) {
        if (k == key) c_.fail("duplicate attribute '" + key + "'");
      }
      c_.skip_ws();
      if (c_.eof() || c_.peek() != '=') c_.fail("expected '=' after attribute '" + key + "'");
      c_.take();
      c_.skip_ws();
      node.attrs.emplace_back(std::move(key), attr_value());
    }
  }

  void content(Node& node) {
    std::string text;
    for (;;) {
      if (c_.eof()) c_.fail("missing </" + node.name + ">");
      if (c_.starts_with("<!--")) {
        skip_until("-->");
        continue;
      }
      if (c_.starts_with("</")) {
        c_.take(2);
        std::string closing = name();
        if (closing != node.name) {
          c_.fail("mismatched close tag </" + closing + "> for <" + node.name + ">");
        }
        c_.skip_ws();
        if (c_.eof() || c_.peek() != '>') c_.fail("expected '>' in close tag");
        c_.take();
        node.text = trim(text);
        return;
      }
      if (c_.peek() == '<') {
        node.children.push_back(element());
        continue;
      }
      char ch = c_.take();
      if (ch == '&') {
        text += entity();
      } else {
        text.push_back(ch);
      }
    }
  }

  Cursor c_;
};

}  // namespace

Node parse(std::string_view text) {
  // Tolerate a UTF-8 BOM.
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  return Parser(text).run();
}

std::string escape(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace aifml::xml
