#include <algorithm>
#include <sstream>

#include "ttx/policy.hpp"

namespace ttx {

std::string_view role_name(Role r) { return r == Role::Actor ? "actor" : "thinker"; }

namespace {

constexpr std::string_view kActorPreamble =
    "You are an Action Agent responsible for achieving a text-based task.\n\n"
    "Now you need to finish a text-based task in an environment with multi-turn interaction.\n";

constexpr std::string_view kThinkerPreamble =
    "You are a Thinker Agent responsible for uncovering the implicit rules of the environment. "
    "You must analyze the history trajectory carefully and reason about any confusing feedback "
    "from the environment.\n\n"
    "Here is the information about the task environment.\n";

constexpr std::string_view kReflectionPreamble =
    "You are a Reflection Agent reviewing a failed attempt at a text-based task.\n";

constexpr std::string_view kActorAttention =
    "Attention:\n\n"
    "1. You MUST provide your thought (one or two lines) before taking action.\n\n"
    "2. You MUST issue only ONE action in each interaction stage.\n\n"
    "Use the following format:\n"
    "<think> put your thought here </think>\n"
    "<answer> put your action here </answer>\n"
    "Please provide your response to the task following the format strictly.\n";

constexpr std::string_view kThinkerAttention =
    "Attention:\n\n"
    "1. If you think all the feedback in the history trajectory is reasonable, summarize the "
    "subgoals you have completed and provide your next plan.\n\n"
    "2. If you find the environment's feedback in the latest steps confusing, think carefully "
    "about possible reasons. Do not assume the environment is erroneous; instead, consider what "
    "hidden rules could explain the observations.\n\n"
    "3. For any uncertainties, try to formulate hypotheses and design plans to verify them.\n\n"
    "Use the following format for your response:\n"
    "<deepthink> put your thought here </deepthink>\n";

constexpr std::string_view kReflectionAttention =
    "Attention:\n\n"
    "Explain in one or two sentences why the attempt failed and what to do differently next "
    "time.\n\n"
    "Use the following format for your response:\n"
    "<reflection> put your reflection here </reflection>\n";

constexpr std::string_view kHistoryHeader = "History Trajectory:";
constexpr std::string_view kThoughtOpen = "<deep thought after step ";
constexpr std::string_view kThoughtClose = "</deep thought>";
constexpr std::string_view kOmittedSuffix = " earlier steps omitted)";

void check_view(const TaskSpec& task, const HistoryView& h) {
  if (!h.task_id.empty() && h.task_id != task.id)
    throw ContractError("history belongs to task '" + h.task_id + "', not '" + task.id + "'");
  for (std::size_t i = 0; i < h.thoughts.size(); ++i) {
    if (h.thoughts[i].anchor_step > h.steps.size())
      throw ContractError("deep thought anchored past the end of the history");
    if (i > 0 && h.thoughts[i].anchor_step <= h.thoughts[i - 1].anchor_step)
      throw ContractError("deep thought anchors must be strictly increasing");
  }
}

void render_thought(std::ostringstream& os, const DeepThought& d) {
  os << kThoughtOpen << d.anchor_step << ">\n" << trim(d.text) << "\n" << kThoughtClose << "\n";
}

// History section starting at step `first` (1-based); earlier steps are
// summarised as omitted but their deep thoughts are kept.
std::string render_history(const HistoryView& h, std::size_t first, bool with_thoughts) {
  std::ostringstream os;
  os << kHistoryHeader;
  const bool any_thought = with_thoughts && !h.thoughts.empty();
  if (h.steps.empty() && !any_thought) {
    os << " (no steps yet)\n";
    return os.str();
  }
  os << "\n";
  std::size_t next_thought = 0;
  const auto flush_thoughts = [&](std::size_t upto) {
    while (with_thoughts && next_thought < h.thoughts.size() && h.thoughts[next_thought].anchor_step <= upto)
      render_thought(os, h.thoughts[next_thought++]);
  };
  if (first > 1) {
    os << "(" << (first - 1) << kOmittedSuffix << "\n";
    flush_thoughts(first - 1);
  } else {
    flush_thoughts(0);
  }
  for (std::size_t i = first; i <= h.steps.size(); ++i) {
    const auto& s = h.steps[i - 1];
    os << "Step " << i << ":\nAction: " << s.action << "\nObservation: " << s.observation << "\n";
    flush_thoughts(i);
  }
  return os.str();
}

std::string examples_block(const TaskSpec& task) {
  if (task.examples.empty()) return "(none)";
  std::string out;
  for (std::size_t i = 0; i < task.examples.size(); ++i) {
    if (i) out += "\n\n";
    out += task.examples[i];
  }
  return out;
}

template <typename Assemble>
std::string render_with_budget(const HistoryView& h, std::size_t max_chars, bool with_thoughts,
                               Assemble assemble) {
  std::string prompt = assemble(render_history(h, 1, with_thoughts));
  for (std::size_t first = 2; max_chars > 0 && prompt.size() > max_chars && first <= h.steps.size() + 1; ++first)
    prompt = assemble(render_history(h, first, with_thoughts));
  return prompt;
}

}  // namespace

std::string render_actor_prompt(const TaskSpec& task, const HistoryView& history, const PromptOptions& options) {
  check_view(task, history);
  return render_with_budget(history, options.max_chars, true, [&](const std::string& hist) {
    std::ostringstream os;
    os << kActorPreamble << "\n";
    if (!options.reflections.empty()) {
      os << "Reflections from previous attempts:\n";
      for (std::size_t i = 0; i < options.reflections.size(); ++i)
        os << (i + 1) << ". " << trim(options.reflections[i]) << "\n";
      os << "\n";
    }
    os << "Task Examples: " << examples_block(task) << "\n\n"
       << "Task Actions: " << task.action_space_doc << "\n\n"
       << "The Task: " << task.instruction << "\n\n"
       << "Initial Observation: " << history.initial_observation << "\n\n"
       << hist << "\n"
       << kActorAttention;
    return os.str();
  });
}

std::string render_thinker_prompt(const TaskSpec& task, const HistoryView& history, const PromptOptions& options) {
  check_view(task, history);
  return render_with_budget(history, options.max_chars, options.include_thoughts, [&](const std::string& hist) {
    std::ostringstream os;
    os << kThinkerPreamble << "\n"
       << "Task Actions: " << task.action_space_doc << "\n\n"
       << "The Task: " << task.instruction << "\n\n"
       << "Initial Observation: " << history.initial_observation << "\n\n"
       << hist << "\n"
       << kThinkerAttention;
    return os.str();
  });
}

std::string render_reflection_prompt(const TaskSpec& task, const HistoryView& history, double final_score) {
  check_view(task, history);
  std::ostringstream os;
  os << kReflectionPreamble << "\n"
     << "The Task: " << task.instruction << "\n\n"
     << "Initial Observation: " << history.initial_observation << "\n\n"
     << render_history(history, 1, true) << "\n"
     << "Final Process Score: " << format_fixed2(final_score) << "\n\n"
     << kReflectionAttention;
  return os.str();
}

// --- reading prompts back --------------------------------------------------

namespace {

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto nl = s.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.push_back(s.substr(pos));
      break;
    }
    lines.push_back(s.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

std::optional<std::size_t> parse_count(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::size_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  return v;
}

}  // namespace

PromptDigest read_prompt(std::string_view prompt) {
  PromptDigest d;
  if (starts_with(prompt, kActorPreamble.substr(0, 30)))
    d.kind = PromptKind::Actor;
  else if (starts_with(prompt, kThinkerPreamble.substr(0, 30)))
    d.kind = PromptKind::Thinker;
  else if (starts_with(prompt, kReflectionPreamble.substr(0, 30)))
    d.kind = PromptKind::Reflection;

  const auto lines = split_lines(prompt);
  bool in_history = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = lines[i];
    if (starts_with(line, "The Task: ") && d.instruction.empty()) {
      d.instruction = std::string(line.substr(10));
      continue;
    }
    if (starts_with(line, kHistoryHeader)) {
      in_history = true;
      continue;
    }
    if (!in_history) continue;
    if (starts_with(line, "Attention:") || starts_with(line, "Final Process Score:")) break;
    if (starts_with(line, "Step ") && line.back() == ':' && i + 2 < lines.size() &&
        starts_with(lines[i + 1], "Action: ") && starts_with(lines[i + 2], "Observation: ")) {
      auto n = parse_count(line.substr(5, line.size() - 6));
      if (!n) continue;
      d.steps.push_back({*n, {std::string(lines[i + 1].substr(8)), std::string(lines[i + 2].substr(13))}});
      i += 2;
      continue;
    }
    if (starts_with(line, kThoughtOpen) && line.back() == '>') {
      auto n = parse_count(line.substr(kThoughtOpen.size(), line.size() - kThoughtOpen.size() - 1));
      std::string text;
      std::size_t j = i + 1;
      for (; j < lines.size() && lines[j] != kThoughtClose; ++j) {
        if (!text.empty()) text += "\n";
        text += lines[j];
      }
      if (n) d.thoughts.push_back({text, *n});
      i = j;
    }
  }
  return d;
}

}  // namespace ttx
