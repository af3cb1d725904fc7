#include "ttx/scripted.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "ttx/remote.hpp"

namespace ttx {

using nlohmann::json;

std::string ThoughtTemplate::render() const {
  std::string out = "Summary: " + summary + "\nHypothesis: ";
  out += rule.empty() ? hypothesis : rule + ": " + hypothesis;
  if (plan.empty()) return out + "\nNext: continue with the current approach.";
  out += "\nPlan:";
  for (const auto& p : plan) out += "\n- " + p;
  return out;
}

const ScriptedTaskTable* ScriptedFixtures::by_instruction(std::string_view instruction) const {
  for (const auto& t : tasks)
    if (t.instruction == instruction) return &t;
  return nullptr;
}

const ScriptedTaskTable* ScriptedFixtures::by_task(std::string_view task_id) const {
  for (const auto& t : tasks)
    if (t.task_id == task_id) return &t;
  return nullptr;
}

namespace {

ThoughtTemplate parse_template(const json& j) {
  ThoughtTemplate t;
  if (j.contains("on_rejected") && !j["on_rejected"].is_null()) t.on_rejected = j["on_rejected"].get<std::string>();
  t.rule = j.value("rule", std::string());
  t.summary = j.value("summary", std::string());
  t.hypothesis = j.value("hypothesis", std::string());
  t.plan = j.value("plan", std::vector<std::string>{});
  return t;
}

}  // namespace

ScriptedFixtures parse_scripted_fixtures(const json& doc) {
  ScriptedFixtures f;
  try {
    for (const auto& [task_id, tj] : doc.at("tasks").items()) {
      ScriptedTaskTable t;
      t.task_id = task_id;
      t.instruction = tj.at("instruction").get<std::string>();
      t.greedy_plan = tj.value("greedy_plan", std::vector<std::string>{});
      t.expert_plan = tj.value("expert_plan", std::vector<std::string>{});
      t.vocabulary = tj.value("vocabulary", std::vector<std::string>{});
      if (tj.contains("oracle"))
        for (const auto& e : tj["oracle"]) t.oracle.push_back(parse_template(e));
      if (tj.contains("distractors"))
        for (const auto& e : tj["distractors"]) t.distractors.push_back(parse_template(e));
      if (f.by_instruction(t.instruction))
        throw ConfigError("scripted fixtures: duplicate instruction '" + t.instruction + "'");
      f.tasks.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scripted fixtures: ") + e.what());
  }
  return f;
}

ScriptedFixtures load_scripted_fixtures(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scripted fixtures " + path.string());
  try {
    return parse_scripted_fixtures(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("scripted fixtures " + path.string() + ": " + e.what());
  }
}

namespace {

std::string lowered(std::string_view s) {
  std::string out(trim(s));
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool rejected(const HistoryStep& s) { return s.observation == kNothingHappened; }

// True if `action` succeeded at some step numbered strictly after `after`.
bool executed_after(const PromptDigest& d, const std::string& action, std::size_t after) {
  const auto a = lowered(action);
  return std::any_of(d.steps.begin(), d.steps.end(), [&](const auto& s) {
    return s.first > after && !rejected(s.second) && lowered(s.second.action) == a;
  });
}

std::optional<std::string> next_unexecuted(const PromptDigest& d, const std::vector<std::string>& plan,
                                           std::size_t after) {
  for (const auto& p : plan)
    if (!executed_after(d, p, after)) return p;
  return std::nullopt;
}

std::string last_action_or_look(const PromptDigest& d) {
  return d.steps.empty() ? std::string("look around") : d.steps.back().second.action;
}

std::string actor_reply(const std::string& reason, const std::string& action) {
  return format_actor_output({reason, action});
}

// Next line of the latest thought that carries a plan, if any line is left.
std::optional<std::string> follow_thought(const PromptDigest& d) {
  for (auto it = d.thoughts.rbegin(); it != d.thoughts.rend(); ++it) {
    const auto plan = plan_lines(it->text);
    if (!plan.empty()) return next_unexecuted(d, plan, it->anchor_step);
  }
  return std::nullopt;
}

std::string reflect(const PromptDigest& d) {
  std::string last_rejected;
  for (auto it = d.steps.rbegin(); it != d.steps.rend(); ++it) {
    if (rejected(it->second)) {
      last_rejected = it->second.action;
      break;
    }
  }
  std::string text = "The attempt did not finish the task.";
  if (!last_rejected.empty()) text += " The action '" + last_rejected + "' kept failing; try a different approach.";
  return "<reflection>" + text + "</reflection>";
}

std::uint64_t draw(std::string_view prompt, std::uint64_t seed) { return mix64(fnv1a(prompt) ^ mix64(seed)); }

class ScriptedBackend : public Backend {
 public:
  ScriptedBackend(std::string name, std::shared_ptr<const ScriptedFixtures> fixtures)
      : name_(std::move(name)), fixtures_(std::move(fixtures)) {}

  std::string describe() const override { return "scripted:" + name_; }

  std::string complete(std::string_view prompt, const DecodeParams& decode, std::uint64_t seed) override {
    const PromptDigest d = read_prompt(prompt);
    const ScriptedTaskTable* table = fixtures_ ? fixtures_->by_instruction(d.instruction) : nullptr;
    if (d.kind == PromptKind::Reflection) return reflect(d);
    if (name_ == "loop-actor") return actor_reply("Repeat the last action.", last_action_or_look(d));
    if (name_ == "babble-actor") return "I think I should look around the room.";
    if (name_ == "obedient-actor") {
      if (auto a = follow_thought(d)) return actor_reply("Follow the plan from the latest deep thought.", *a);
      return actor_reply("Repeat the last action.", last_action_or_look(d));
    }
    if (name_ == "greedy-actor") {
      if (auto a = follow_thought(d)) return actor_reply("Follow the plan from the latest deep thought.", *a);
      if (table)
        if (auto a = next_unexecuted(d, table->greedy_plan, 0))
          return actor_reply("Go straight for the next subgoal.", *a);
      return actor_reply("Keep going.", last_action_or_look(d));
    }
    if (name_ == "oracle-actor") {
      if (table)
        if (auto a = next_unexecuted(d, table->expert_plan, 0)) return actor_reply("Next step of the plan.", *a);
      return actor_reply("Nothing left to do.", "look around");
    }
    if (name_ == "random-actor") {
      if (!table || table->vocabulary.empty()) return actor_reply("Explore.", "look around");
      const auto r = draw(prompt, seed);
      return actor_reply("Try something.", table->vocabulary[r % table->vocabulary.size()]);
    }
    if (name_ == "null-thinker") return format_thinker_output("continue");
    if (name_ == "mute-thinker") return "I have nothing to add.";
    if (name_ == "oracle-thinker") return format_thinker_output(oracle_thought(d, table));
    if (name_ == "sampling-thinker") {
      if (decode.temperature <= 0.0) return format_thinker_output(oracle_thought(d, table));
      std::vector<std::string> candidates{oracle_thought(d, table)};
      if (table)
        for (const auto& t : table->distractors) candidates.push_back(t.render());
      candidates.emplace_back("continue");
      return format_thinker_output(candidates[draw(prompt, seed) % candidates.size()]);
    }
    throw ConfigError("unknown scripted policy '" + name_ + "'");
  }

 private:
  static std::string oracle_thought(const PromptDigest& d, const ScriptedTaskTable* table) {
    if (!table) return "continue";
    // Only failures since the previous thought call for a new diagnosis.
    const std::size_t since = d.thoughts.empty() ? 0 : d.thoughts.back().anchor_step;
    std::optional<std::string> last_rejected;
    for (auto it = d.steps.rbegin(); it != d.steps.rend() && it->first > since; ++it) {
      if (rejected(it->second)) {
        last_rejected = lowered(it->second.action);
        break;
      }
    }
    const ThoughtTemplate* fallback = nullptr;
    for (const auto& e : table->oracle) {
      if (!e.on_rejected) {
        if (!fallback) fallback = &e;
        continue;
      }
      if (last_rejected && lowered(*e.on_rejected) == *last_rejected) return e.render();
    }
    return fallback ? fallback->render() : std::string("continue");
  }

  std::string name_;
  std::shared_ptr<const ScriptedFixtures> fixtures_;
};

}  // namespace

const std::vector<std::string>& scripted_policy_names() {
  static const std::vector<std::string> names{
      "loop-actor",     "greedy-actor", "obedient-actor",   "oracle-actor", "random-actor",
      "babble-actor",   "oracle-thinker", "null-thinker", "sampling-thinker", "mute-thinker"};
  return names;
}

std::shared_ptr<Backend> make_scripted_backend(const std::string& name,
                                               std::shared_ptr<const ScriptedFixtures> fixtures) {
  const auto& names = scripted_policy_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw ConfigError("unknown scripted policy '" + name + "'");
  return std::make_shared<ScriptedBackend>(name, std::move(fixtures));
}

PolicyHandle make_policy(const PolicySpec& spec, std::shared_ptr<const ScriptedFixtures> fixtures) {
  PolicyHandle h{spec, nullptr};
  if (const auto* s = std::get_if<ScriptedRef>(&spec.backend))
    h.backend = make_scripted_backend(s->name, std::move(fixtures));
  else
    h.backend = make_remote_backend(std::get<RemoteEndpoint>(spec.backend));
  return h;
}

std::string complete(const PolicyHandle& policy, std::string_view prompt, std::uint64_t seed) {
  if (!policy.backend) throw ConfigError("policy handle has no backend");
  return policy.backend->complete(prompt, policy.spec.decode, seed);
}

}  // namespace ttx
