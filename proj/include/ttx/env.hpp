#pragma once

// Deterministic partially observable text world.
//
// A world is a set of rooms connected by exits, plus entities (objects and
// receptacles) that live in a room, inside a receptacle, or in the agent's
// hand. Which actions succeed is decided by an ordered list of declarative
// rules; a rejected action leaves the state untouched and yields the
// observation "Nothing happened.".

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace ttx {

inline constexpr std::string_view kNothingHappened = "Nothing happened.";
inline constexpr std::string_view kHandLocation = "hand";

enum class EntityKind { Object, Receptacle };

struct Entity {
  std::string id;
  EntityKind kind = EntityKind::Object;
  std::string location;       // room id, receptacle id, or "hand"
  std::optional<bool> open;   // openable receptacles only
  std::set<std::string> attributes;

  bool operator==(const Entity&) const = default;
};

struct Room {
  std::string id;
  std::vector<std::string> exits;

  bool operator==(const Room&) const = default;
};

struct AgentState {
  std::string room;
  std::optional<std::string> facing;
  std::optional<std::string> hand;

  bool operator==(const AgentState&) const = default;
};

struct WorldState {
  std::map<std::string, Room> rooms;
  std::map<std::string, Entity> entities;
  AgentState agent;
  std::set<std::size_t> latched;  // indices of latching subgoals already achieved
  std::uint64_t rng_seed = 0;

  bool operator==(const WorldState&) const = default;

  const Entity* find(std::string_view id) const;
  bool has_room(std::string_view id) const { return rooms.count(std::string(id)) > 0; }
};

// --- actions ---------------------------------------------------------------

enum class Verb { Look, GoTo, Open, Close, Take, Put };

std::string_view verb_name(Verb v);
std::optional<Verb> verb_from_name(std::string_view name);

/// A parsed action. `object` is the thing moved (take/put), `target` the
/// thing interacted with (go/open/close destination, take source, put
/// destination).
struct Action {
  Verb verb = Verb::Look;
  std::string object;
  std::string target;
  std::string preposition;  // put only: "in", "on" or "in/on"

  bool operator==(const Action&) const = default;
};

/// Parses the action grammar; returns nullopt for anything outside it.
std::optional<Action> parse_action(std::string_view text);

// --- predicates ------------------------------------------------------------

struct Predicate {
  enum class Kind { Open, Closed, Holding, Located, AgentIn, All, Any, Not };
  Kind kind = Kind::All;
  std::string entity;
  std::string location;
  std::vector<Predicate> children;
};

bool evaluate(const Predicate& p, const WorldState& state);

struct Subgoal {
  std::string description;
  Predicate predicate;
  bool latch = false;  // once achieved, stays achieved
};

// --- rules -----------------------------------------------------------------

struct Condition {
  enum class Kind {
    Unparsed,
    NotFacingTarget,
    HandOccupied,
    HandEmpty,
    TargetClosed,
    TargetOpen,
    TargetHasAttr,
    TargetLacksAttr,
    ObjectHasAttr,
    HandHasAttr,
    HandLacksAttr,
    AgentIn,
    AgentNotIn,
  };
  Kind kind = Kind::Unparsed;
  std::string arg;
};

struct Guard {
  std::vector<Verb> verbs;  // empty: any parsed or unparsed action
  std::vector<Condition> conditions;
};

enum class RuleEffect { Allow, Reject };

struct Rule {
  std::string id;
  Guard guard;
  RuleEffect effect = RuleEffect::Reject;
};

struct RuleSet {
  std::vector<Rule> rules;
};

struct RuleVerdict {
  bool allowed = true;
  std::string rule_id;  // set when rejected, or when an explicit Allow rule matched

  static RuleVerdict allow(std::string id = {}) { return {true, std::move(id)}; }
  static RuleVerdict reject(std::string id) { return {false, std::move(id)}; }
  bool operator==(const RuleVerdict&) const = default;
};

// --- tasks -----------------------------------------------------------------

struct TaskSpec {
  std::string id;
  std::string env_name;
  std::string instruction;
  WorldState initial_world;
  RuleSet rules;
  std::vector<Subgoal> subgoals;
  std::string action_space_doc;
  std::vector<std::string> examples;
  int max_steps_default = 50;
  bool allow_initial_progress = false;
};

struct Observation {
  std::string text;
  std::size_t step_index = 0;

  bool operator==(const Observation&) const = default;
};

struct ProcessScore {
  double value = 0.0;
  std::set<std::size_t> satisfied_subgoals;
};

struct StepResult {
  WorldState state;
  Observation observation;
  bool done = false;
  RuleVerdict verdict;
};

/// One replayed environment step.
struct StepRecord {
  std::string action;
  std::string observation;
  double score_after = 0.0;
  bool done = false;
};

struct ReplayResult {
  WorldState state;
  Observation initial;
  std::vector<StepRecord> steps;
};

/// Throws ValidationError naming the offending field.
void validate_task(const TaskSpec& task);

std::pair<WorldState, Observation> reset(const TaskSpec& task, std::int64_t seed);

/// `step_index` is the 1-based index of the step being taken; it is copied
/// into the returned observation.
StepResult step(const TaskSpec& task, const WorldState& state, std::string_view action,
                std::size_t step_index = 1);

RuleVerdict check_rule(const TaskSpec& task, const WorldState& state, std::string_view action);

ProcessScore process_score(const WorldState& state, const TaskSpec& task);

/// 100 * satisfied / total, rounded half-up to two decimals.
double score_fraction(std::size_t satisfied, std::size_t total);

WorldState replay(const TaskSpec& task, std::int64_t seed, const std::vector<std::string>& actions);
ReplayResult replay_full(const TaskSpec& task, std::int64_t seed,
                         const std::vector<std::string>& actions);

/// Text of a "look around" in the current state.
std::string describe_room(const WorldState& state);

// --- serialization ---------------------------------------------------------

nlohmann::ordered_json to_json(const WorldState& state);

/// Parses an environment definition document (see README for the schema).
std::vector<TaskSpec> parse_environment(const nlohmann::json& doc, const std::string& source = "env");
std::vector<TaskSpec> load_environment_file(const std::filesystem::path& path);

}  // namespace ttx
