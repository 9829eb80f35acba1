#pragma once

// Rule-based answer verifier: SQuAD-style normalization plus exact match.

#include <string>
#include <string_view>
#include <variant>

#include <json.hpp>

#include "mrsearch/environment.hpp"

namespace mrsearch {

/// An extracted answer: missing, an entity id, or free text.
class Answer {
 public:
  Answer() = default;
  static Answer missing() { return {}; }
  static Answer entity(EntityId e) { return Answer(e); }
  static Answer text(std::string s) { return Answer(std::move(s)); }

  bool present() const { return !std::holds_alternative<std::monostate>(value_); }
  bool is_entity() const { return std::holds_alternative<EntityId>(value_); }
  bool is_text() const { return std::holds_alternative<std::string>(value_); }
  EntityId entity_id() const { return std::get<EntityId>(value_); }
  const std::string& text_value() const { return std::get<std::string>(value_); }

  std::string to_string() const {
    if (is_entity()) return std::to_string(entity_id());
    if (is_text()) return text_value();
    return {};
  }

  friend bool operator==(const Answer&, const Answer&) = default;

 private:
  explicit Answer(EntityId e) : value_(e) {}
  explicit Answer(std::string s) : value_(std::move(s)) {}

  std::variant<std::monostate, EntityId, std::string> value_;
};

inline nlohmann::json to_json(const Answer& a) {
  if (a.is_entity()) return a.entity_id();
  if (a.is_text()) return a.text_value();
  return nullptr;
}

inline Answer answer_from_json(const nlohmann::json& j) {
  if (j.is_null()) return Answer::missing();
  if (j.is_number_integer()) return Answer::entity(j.get<int>());
  if (j.is_string()) return Answer::text(j.get<std::string>());
  throw std::invalid_argument("answer must be null, an integer entity id, or a string");
}

namespace detail {

constexpr bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

constexpr bool is_ascii_punct(char c) {
  return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') || (c >= '[' && c <= '`') || (c >= '{' && c <= '~');
}

constexpr bool is_article(std::string_view w) { return w == "a" || w == "an" || w == "the"; }

}  // namespace detail

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the as whole
/// words, collapse whitespace. Non-ASCII bytes pass through unchanged.
inline std::string normalize(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    if (detail::is_ascii_punct(c)) continue;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    cleaned.push_back(c);
  }

  std::string out;
  std::size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && detail::is_ascii_space(cleaned[i])) ++i;
    std::size_t j = i;
    while (j < cleaned.size() && !detail::is_ascii_space(cleaned[j])) ++j;
    if (j > i) {
      std::string_view word(cleaned.data() + i, j - i);
      if (!detail::is_article(word)) {
        if (!out.empty()) out.push_back(' ');
        out.append(word);
      }
    }
    i = j;
  }
  return out;
}

/// 1 iff both answers are present and agree. Entity ids compare directly;
/// anything involving text compares normalized surface forms.
inline double exact_match(const Answer& predicted, const Answer& gold) {
  if (!predicted.present() || !gold.present()) return 0.0;
  if (predicted.is_entity() && gold.is_entity()) {
    return predicted.entity_id() == gold.entity_id() ? 1.0 : 0.0;
  }
  return normalize(predicted.to_string()) == normalize(gold.to_string()) ? 1.0 : 0.0;
}

}  // namespace mrsearch
