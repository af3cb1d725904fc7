#pragma once

// Offline fixture policies. Every behaviour is a pure function of the
// rendered prompt (and seed), driven by per-task tables in a fixtures file.
//
//   loop-actor      repeats its last action ("look around" first)
//   greedy-actor    follows the latest thought's plan, else walks its greedy
//                   plan and retries rejected actions forever
//   obedient-actor  follows the latest thought's plan, else behaves as loop-actor
//   oracle-actor    walks the expert plan (the strong policy)
//   random-actor    picks from the task vocabulary using (prompt, seed)
//   babble-actor    never emits tags (exercises parse-failure handling)
//   oracle-thinker  names the rule behind the latest rejection + corrective plan
//   null-thinker    always "continue"
//   sampling-thinker  seeded draw over oracle, distractor and null thoughts
//   mute-thinker    never emits a deepthink block

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ttx/policy.hpp"

namespace ttx {

struct ThoughtTemplate {
  std::optional<std::string> on_rejected;  // nullopt: default entry
  std::string rule;
  std::string summary;
  std::string hypothesis;
  std::vector<std::string> plan;

  std::string render() const;
};

struct ScriptedTaskTable {
  std::string task_id;
  std::string instruction;
  std::vector<std::string> greedy_plan;
  std::vector<std::string> expert_plan;
  std::vector<std::string> vocabulary;
  std::vector<ThoughtTemplate> oracle;
  std::vector<ThoughtTemplate> distractors;
};

struct ScriptedFixtures {
  std::vector<ScriptedTaskTable> tasks;

  const ScriptedTaskTable* by_instruction(std::string_view instruction) const;
  const ScriptedTaskTable* by_task(std::string_view task_id) const;
};

ScriptedFixtures parse_scripted_fixtures(const nlohmann::json& doc);
ScriptedFixtures load_scripted_fixtures(const std::filesystem::path& path);

const std::vector<std::string>& scripted_policy_names();

/// Throws ConfigError for an unregistered name.
std::shared_ptr<Backend> make_scripted_backend(const std::string& name,
                                               std::shared_ptr<const ScriptedFixtures> fixtures);

/// Resolves a descriptor to a usable handle (scripted or remote).
PolicyHandle make_policy(const PolicySpec& spec, std::shared_ptr<const ScriptedFixtures> fixtures);

}  // namespace ttx
