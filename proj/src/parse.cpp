#include <array>

#include "ttx/policy.hpp"

namespace ttx {

std::string_view parse_error_name(ParseErrorKind k) {
  switch (k) {
    case ParseErrorKind::MissingAnswer: return "MissingAnswer";
    case ParseErrorKind::EmptyAction: return "EmptyAction";
    case ParseErrorKind::MissingThought: return "MissingThought";
    case ParseErrorKind::MalformedAction: return "MalformedAction";
    case ParseErrorKind::MissingDeepthink: return "MissingDeepthink";
    case ParseErrorKind::EmptyDeepthink: return "EmptyDeepthink";
  }
  return "Unknown";
}

namespace {

constexpr std::array<std::string_view, 8> kTagMarkers{
    "<think>", "</think>", "<answer>", "</answer>", "<deepthink>", "</deepthink>", "<reflection>", "</reflection>"};

// Body of the first open..close block at or after `from`.
std::optional<std::string_view> first_block(std::string_view raw, std::string_view open, std::string_view close,
                                            std::size_t from = 0) {
  const auto b = raw.find(open, from);
  if (b == std::string_view::npos) return std::nullopt;
  const auto body = b + open.size();
  const auto e = raw.find(close, body);
  if (e == std::string_view::npos) return std::nullopt;
  return raw.substr(body, e - body);
}

bool has_tag_marker(std::string_view s) {
  for (auto m : kTagMarkers)
    if (s.find(m) != std::string_view::npos) return true;
  return false;
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : trim(s)) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      space = true;
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  return out;
}

}  // namespace

ActorOutput parse_actor_output(std::string_view raw) {
  const auto answer = first_block(raw, "<answer>", "</answer>");
  if (!answer) throw ParseError(ParseErrorKind::MissingAnswer);
  ActorOutput out;
  out.action = collapse_whitespace(*answer);
  if (out.action.empty()) throw ParseError(ParseErrorKind::EmptyAction);
  if (has_tag_marker(out.action)) throw ParseError(ParseErrorKind::MalformedAction);
  const auto think = first_block(raw, "<think>", "</think>");
  if (!think || trim(*think).empty()) throw ParseError(ParseErrorKind::MissingThought);
  out.thought = std::string(trim(*think));
  return out;
}

std::string format_actor_output(const ActorOutput& out) {
  return "<think>" + out.thought + "</think>\n<answer>" + out.action + "</answer>";
}

std::string parse_thinker_output(std::string_view raw) {
  // Thinking-mode models prepend a hidden reasoning block; drop it first.
  std::size_t from = 0;
  const auto lead = trim(raw);
  if (lead.substr(0, 7) == "<think>") {
    const auto close = raw.find("</think>");
    if (close != std::string_view::npos) from = close + 8;
  }
  const auto body = first_block(raw, "<deepthink>", "</deepthink>", from);
  if (!body) throw ParseError(ParseErrorKind::MissingDeepthink);
  const auto text = trim(*body);
  if (text.empty()) throw ParseError(ParseErrorKind::EmptyDeepthink);
  return std::string(text);
}

std::string format_thinker_output(std::string_view thought) {
  return "<deepthink>" + std::string(thought) + "</deepthink>";
}

std::string parse_reflection(std::string_view raw) {
  if (auto body = first_block(raw, "<reflection>", "</reflection>")) return std::string(trim(*body));
  return std::string(trim(raw));
}

std::vector<std::string> plan_lines(std::string_view thought) {
  std::vector<std::string> out;
  bool in_plan = false;
  std::size_t pos = 0;
  while (pos <= thought.size()) {
    auto nl = thought.find('\n', pos);
    if (nl == std::string_view::npos) nl = thought.size();
    const auto line = trim(thought.substr(pos, nl - pos));
    pos = nl + 1;
    if (line == "Plan:") {
      in_plan = true;
      out.clear();
      continue;
    }
    if (!in_plan) continue;
    if (line.substr(0, 2) == "- " && !trim(line.substr(2)).empty())
      out.emplace_back(trim(line.substr(2)));
    else if (!line.empty())
      in_plan = false;
  }
  return out;
}

}  // namespace ttx
