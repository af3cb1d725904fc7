#include "ttx/env.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "ttx/common.hpp"

namespace ttx {

using nlohmann::json;

const Entity* WorldState::find(std::string_view id) const {
  auto it = entities.find(std::string(id));
  return it == entities.end() ? nullptr : &it->second;
}

std::string_view verb_name(Verb v) {
  switch (v) {
    case Verb::Look: return "look";
    case Verb::GoTo: return "go";
    case Verb::Open: return "open";
    case Verb::Close: return "close";
    case Verb::Take: return "take";
    case Verb::Put: return "put";
  }
  return "?";
}

std::optional<Verb> verb_from_name(std::string_view name) {
  for (Verb v : {Verb::Look, Verb::GoTo, Verb::Open, Verb::Close, Verb::Take, Verb::Put})
    if (verb_name(v) == name) return v;
  return std::nullopt;
}

namespace {

std::string normalize(std::string_view text) {
  std::string out;
  bool space = false;
  for (unsigned char c : trim(text)) {
    if (std::isspace(c)) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

// Splits "X <sep> Y" at the first separator; both sides must be non-empty.
std::optional<std::pair<std::string, std::string>> split_once(std::string_view s, std::string_view sep) {
  const auto pos = s.find(sep);
  if (pos == std::string_view::npos) return std::nullopt;
  auto lhs = trim(s.substr(0, pos));
  auto rhs = trim(s.substr(pos + sep.size()));
  if (lhs.empty() || rhs.empty()) return std::nullopt;
  return std::pair{std::string(lhs), std::string(rhs)};
}

}  // namespace

std::optional<Action> parse_action(std::string_view text) {
  const std::string s = normalize(text);
  if (s == "look around" || s == "look") return Action{Verb::Look, {}, {}, {}};
  if (starts_with(s, "go to ")) {
    auto target = std::string(trim(std::string_view(s).substr(6)));
    if (target.empty()) return std::nullopt;
    return Action{Verb::GoTo, {}, target, {}};
  }
  for (auto [prefix, verb] : {std::pair{"open ", Verb::Open}, std::pair{"close ", Verb::Close}}) {
    if (starts_with(s, prefix)) {
      auto target = std::string(trim(std::string_view(s).substr(std::string_view(prefix).size())));
      if (target.empty()) return std::nullopt;
      return Action{verb, {}, target, {}};
    }
  }
  if (starts_with(s, "take ")) {
    auto parts = split_once(std::string_view(s).substr(5), " from ");
    if (!parts) return std::nullopt;
    return Action{Verb::Take, parts->first, parts->second, {}};
  }
  if (starts_with(s, "put ")) {
    const std::string_view rest = std::string_view(s).substr(4);
    for (std::string_view prep : {"in/on", "in", "on"}) {
      const std::string sep = " " + std::string(prep) + " ";
      if (auto parts = split_once(rest, sep))
        return Action{Verb::Put, parts->first, parts->second, std::string(prep)};
    }
  }
  return std::nullopt;
}

// --- predicates ------------------------------------------------------------

bool evaluate(const Predicate& p, const WorldState& state) {
  using K = Predicate::Kind;
  switch (p.kind) {
    case K::Open: {
      const Entity* e = state.find(p.entity);
      return e && e->open.value_or(false);
    }
    case K::Closed: {
      const Entity* e = state.find(p.entity);
      return e && e->open.has_value() && !*e->open;
    }
    case K::Holding: return state.agent.hand == p.entity;
    case K::Located: {
      const Entity* e = state.find(p.entity);
      return e && e->location == p.location;
    }
    case K::AgentIn: return state.agent.room == p.location;
    case K::All:
      return std::all_of(p.children.begin(), p.children.end(),
                         [&](const Predicate& c) { return evaluate(c, state); });
    case K::Any:
      return std::any_of(p.children.begin(), p.children.end(),
                         [&](const Predicate& c) { return evaluate(c, state); });
    case K::Not: return !p.children.empty() && !evaluate(p.children.front(), state);
  }
  return false;
}

// --- text rendering --------------------------------------------------------

namespace {

// Sorted for seed 0; otherwise a seed- and key-dependent permutation.
std::vector<std::string> enumeration_order(std::vector<std::string> ids, std::uint64_t seed,
                                           std::string_view key) {
  std::sort(ids.begin(), ids.end());
  if (seed == 0 || ids.size() < 2) return ids;
  std::uint64_t s = mix64(seed ^ fnv1a(key));
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    s = mix64(s);
    std::swap(ids[i], ids[s % (i + 1)]);
  }
  return ids;
}

std::string join_items(const std::vector<std::string>& ids) {
  if (ids.empty()) return "nothing";
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += (ids.size() == 2) ? " and " : (i + 1 == ids.size() ? ", and " : ", ");
    out += "a " + ids[i];
  }
  return out;
}

std::vector<std::string> contents_of(const WorldState& state, std::string_view location) {
  std::vector<std::string> ids;
  for (const auto& [id, e] : state.entities)
    if (e.location == location) ids.push_back(id);
  return ids;
}

std::string receptacle_status(const WorldState& state, const Entity& r) {
  const auto items =
      enumeration_order(contents_of(state, r.id), state.rng_seed, "in:" + r.id);
  if (r.open.has_value()) {
    if (!*r.open) return "The " + r.id + " is closed.";
    return "The " + r.id + " is open. In it, you see " + join_items(items) + ".";
  }
  return "On the " + r.id + ", you see " + join_items(items) + ".";
}

std::string room_listing(const WorldState& state) {
  const auto& room = state.rooms.at(state.agent.room);
  const auto exits = enumeration_order(room.exits, state.rng_seed, "exits:" + room.id);
  std::string out = "Exits: ";
  if (exits.empty()) out += "none";
  for (std::size_t i = 0; i < exits.size(); ++i) out += (i ? ", " : "") + exits[i];
  out += ". ";
  const auto items = enumeration_order(contents_of(state, room.id), state.rng_seed, "room:" + room.id);
  if (items.empty())
    out += "You see nothing of interest.";
  else
    out += "You see " + join_items(items) + ".";
  if (state.agent.hand) out += " You are carrying the " + *state.agent.hand + ".";
  return out;
}

// Room that ultimately contains `id` (following receptacle nesting).
std::optional<std::string> room_of(const WorldState& state, const std::string& id) {
  std::string cur = id;
  for (std::size_t guard = 0; guard <= state.entities.size(); ++guard) {
    if (state.has_room(cur)) return cur;
    if (cur == kHandLocation) return state.agent.room;
    const Entity* e = state.find(cur);
    if (!e) return std::nullopt;
    cur = e->location;
  }
  return std::nullopt;
}

bool adjacent(const WorldState& state, const std::string& from, const std::string& to) {
  if (from == to) return true;
  const auto& exits = state.rooms.at(from).exits;
  return std::find(exits.begin(), exits.end(), to) != exits.end();
}

}  // namespace

std::string describe_room(const WorldState& state) {
  return "You are in the " + state.agent.room + ". " + room_listing(state);
}

// --- rules -----------------------------------------------------------------

namespace {

bool condition_holds(const Condition& c, const std::optional<Action>& action, const WorldState& state) {
  using K = Condition::Kind;
  if (c.kind == K::Unparsed) return !action.has_value();
  if (!action) return false;
  const Entity* target = action->target.empty() ? nullptr : state.find(action->target);
  const Entity* object = action->object.empty() ? nullptr : state.find(action->object);
  const Entity* held = state.agent.hand ? state.find(*state.agent.hand) : nullptr;
  switch (c.kind) {
    case K::Unparsed: return false;
    case K::NotFacingTarget: return !action->target.empty() && state.agent.facing != action->target;
    case K::HandOccupied: return state.agent.hand.has_value();
    case K::HandEmpty: return !state.agent.hand.has_value();
    case K::TargetClosed: return target && target->open.has_value() && !*target->open;
    case K::TargetOpen: return target && target->open.value_or(false);
    case K::TargetHasAttr: return target && target->attributes.count(c.arg);
    case K::TargetLacksAttr: return !(target && target->attributes.count(c.arg));
    case K::ObjectHasAttr: return object && object->attributes.count(c.arg);
    case K::HandHasAttr: return held && held->attributes.count(c.arg);
    case K::HandLacksAttr: return !(held && held->attributes.count(c.arg));
    case K::AgentIn: return state.agent.room == c.arg;
    case K::AgentNotIn: return state.agent.room != c.arg;
  }
  return false;
}

bool guard_matches(const Guard& g, const std::optional<Action>& action, const WorldState& state) {
  if (!g.verbs.empty()) {
    if (!action) return false;
    if (std::find(g.verbs.begin(), g.verbs.end(), action->verb) == g.verbs.end()) return false;
  }
  return std::all_of(g.conditions.begin(), g.conditions.end(),
                     [&](const Condition& c) { return condition_holds(c, action, state); });
}

// Physical feasibility, applied after the declared rules.
RuleVerdict intrinsic_check(const std::optional<Action>& action, const WorldState& state) {
  if (!action) return RuleVerdict::reject("intrinsic:unparsed");
  const auto& a = *action;
  const auto same_room = [&](const std::string& id) { return room_of(state, id) == state.agent.room; };
  switch (a.verb) {
    case Verb::Look: return RuleVerdict::allow();
    case Verb::GoTo: {
      if (state.has_room(a.target)) {
        if (a.target == state.agent.room || !adjacent(state, state.agent.room, a.target))
          return RuleVerdict::reject("intrinsic:no-exit");
        return RuleVerdict::allow();
      }
      const Entity* t = state.find(a.target);
      if (!t) return RuleVerdict::reject("intrinsic:unknown-entity");
      if (t->kind != EntityKind::Receptacle) return RuleVerdict::reject("intrinsic:not-a-place");
      auto room = room_of(state, a.target);
      if (!room || !adjacent(state, state.agent.room, *room))
        return RuleVerdict::reject("intrinsic:unreachable");
      return RuleVerdict::allow();
    }
    case Verb::Open:
    case Verb::Close: {
      const Entity* t = state.find(a.target);
      if (!t) return RuleVerdict::reject("intrinsic:unknown-entity");
      if (!t->open.has_value()) return RuleVerdict::reject("intrinsic:not-openable");
      if (!same_room(a.target)) return RuleVerdict::reject("intrinsic:unreachable");
      if (a.verb == Verb::Open && *t->open) return RuleVerdict::reject("intrinsic:already-open");
      if (a.verb == Verb::Close && !*t->open) return RuleVerdict::reject("intrinsic:already-closed");
      return RuleVerdict::allow();
    }
    case Verb::Take: {
      const Entity* o = state.find(a.object);
      const Entity* t = state.find(a.target);
      if (!o || !t) return RuleVerdict::reject("intrinsic:unknown-entity");
      if (o->kind != EntityKind::Object || t->kind != EntityKind::Receptacle)
        return RuleVerdict::reject("intrinsic:wrong-kind");
      if (o->location != a.target) return RuleVerdict::reject("intrinsic:not-in-source");
      if (!same_room(a.target)) return RuleVerdict::reject("intrinsic:unreachable");
      if (t->open.has_value() && !*t->open) return RuleVerdict::reject("intrinsic:closed");
      if (state.agent.hand) return RuleVerdict::reject("intrinsic:hand-full");
      return RuleVerdict::allow();
    }
    case Verb::Put: {
      const Entity* t = state.find(a.target);
      if (!t) return RuleVerdict::reject("intrinsic:unknown-entity");
      if (state.agent.hand != a.object) return RuleVerdict::reject("intrinsic:not-holding");
      if (t->kind != EntityKind::Receptacle) return RuleVerdict::reject("intrinsic:wrong-kind");
      if (!same_room(a.target)) return RuleVerdict::reject("intrinsic:unreachable");
      if (t->open.has_value() && !*t->open) return RuleVerdict::reject("intrinsic:closed");
      return RuleVerdict::allow();
    }
  }
  return RuleVerdict::reject("intrinsic:unparsed");
}

RuleVerdict check_parsed(const TaskSpec& task, const WorldState& state, const std::optional<Action>& action) {
  std::string allowed_by;
  for (const auto& rule : task.rules.rules) {
    if (!guard_matches(rule.guard, action, state)) continue;
    if (rule.effect == RuleEffect::Reject) return RuleVerdict::reject(rule.id);
    allowed_by = rule.id;
    break;
  }
  auto verdict = intrinsic_check(action, state);
  if (verdict.allowed) verdict.rule_id = allowed_by;
  return verdict;
}

// Applies an action already known to be feasible.
std::string apply(WorldState& s, const Action& a) {
  switch (a.verb) {
    case Verb::Look: return describe_room(s);
    case Verb::GoTo:
      if (s.has_room(a.target)) {
        s.agent.room = a.target;
        s.agent.facing.reset();
        return "You arrive at the " + a.target + ". " + room_listing(s);
      }
      s.agent.room = *room_of(s, a.target);
      s.agent.facing = a.target;
      return "You arrive at " + a.target + ". " + receptacle_status(s, *s.find(a.target));
    case Verb::Open: {
      auto& e = s.entities.at(a.target);
      e.open = true;
      return "You open the " + a.target + ". " + receptacle_status(s, e);
    }
    case Verb::Close:
      s.entities.at(a.target).open = false;
      return "You close the " + a.target + ".";
    case Verb::Take:
      s.entities.at(a.object).location = std::string(kHandLocation);
      s.agent.hand = a.object;
      return "You pick up the " + a.object + " from the " + a.target + ".";
    case Verb::Put: {
      auto& t = s.entities.at(a.target);
      s.entities.at(a.object).location = a.target;
      s.agent.hand.reset();
      std::string prep = a.preposition;
      if (prep == "in/on") prep = t.open.has_value() ? "in" : "on";
      return "You put the " + a.object + " " + prep + " the " + a.target + ".";
    }
  }
  return std::string(kNothingHappened);
}

void update_latches(const TaskSpec& task, WorldState& s) {
  for (std::size_t i = 0; i < task.subgoals.size(); ++i)
    if (task.subgoals[i].latch && evaluate(task.subgoals[i].predicate, s)) s.latched.insert(i);
}

}  // namespace

RuleVerdict check_rule(const TaskSpec& task, const WorldState& state, std::string_view action) {
  return check_parsed(task, state, parse_action(action));
}

double score_fraction(std::size_t satisfied, std::size_t total) {
  if (total == 0) return 0.0;
  // Integer half-up rounding of 10000 * satisfied / total, in hundredths.
  const std::uint64_t num = 10000ULL * satisfied;
  const std::uint64_t hundredths = (2 * num + total) / (2 * total);
  return static_cast<double>(hundredths) / 100.0;
}

ProcessScore process_score(const WorldState& state, const TaskSpec& task) {
  ProcessScore out;
  for (std::size_t i = 0; i < task.subgoals.size(); ++i) {
    if (state.latched.count(i) || evaluate(task.subgoals[i].predicate, state))
      out.satisfied_subgoals.insert(i);
  }
  out.value = score_fraction(out.satisfied_subgoals.size(), task.subgoals.size());
  return out;
}

std::pair<WorldState, Observation> reset(const TaskSpec& task, std::int64_t seed) {
  validate_task(task);
  WorldState s = task.initial_world;
  s.rng_seed = static_cast<std::uint64_t>(seed);
  s.latched.clear();
  update_latches(task, s);
  Observation obs{describe_room(s), 0};
  return {std::move(s), std::move(obs)};
}

StepResult step(const TaskSpec& task, const WorldState& state, std::string_view action,
                std::size_t step_index) {
  const auto parsed = parse_action(action);
  StepResult r{state, {}, false, check_parsed(task, state, parsed)};
  if (!r.verdict.allowed) {
    r.observation = {std::string(kNothingHappened), step_index};
  } else {
    r.observation = {apply(r.state, *parsed), step_index};
    update_latches(task, r.state);
  }
  r.done = process_score(r.state, task).satisfied_subgoals.size() == task.subgoals.size();
  return r;
}

ReplayResult replay_full(const TaskSpec& task, std::int64_t seed, const std::vector<std::string>& actions) {
  auto [state, initial] = reset(task, seed);
  ReplayResult out{std::move(state), std::move(initial), {}};
  out.steps.reserve(actions.size());
  for (std::size_t i = 0; i < actions.size(); ++i) {
    auto r = step(task, out.state, actions[i], i + 1);
    out.state = std::move(r.state);
    out.steps.push_back({actions[i], std::move(r.observation.text), process_score(out.state, task).value, r.done});
  }
  return out;
}

WorldState replay(const TaskSpec& task, std::int64_t seed, const std::vector<std::string>& actions) {
  return replay_full(task, seed, actions).state;
}

// --- validation ------------------------------------------------------------

namespace {

void validate_predicate(const Predicate& p, const WorldState& w, const std::string& field) {
  using K = Predicate::Kind;
  switch (p.kind) {
    case K::Open:
    case K::Closed:
      if (!w.find(p.entity)) throw ValidationError(field, "unknown entity '" + p.entity + "'");
      if (!w.find(p.entity)->open.has_value())
        throw ValidationError(field, "entity '" + p.entity + "' is not openable");
      break;
    case K::Holding:
      if (!w.find(p.entity)) throw ValidationError(field, "unknown entity '" + p.entity + "'");
      break;
    case K::Located:
      if (!w.find(p.entity)) throw ValidationError(field, "unknown entity '" + p.entity + "'");
      if (!w.has_room(p.location) && !w.find(p.location) && p.location != kHandLocation)
        throw ValidationError(field, "unknown location '" + p.location + "'");
      break;
    case K::AgentIn:
      if (!w.has_room(p.location)) throw ValidationError(field, "unknown room '" + p.location + "'");
      break;
    case K::All:
    case K::Any:
    case K::Not:
      if (p.children.empty()) throw ValidationError(field, "empty predicate list");
      for (std::size_t i = 0; i < p.children.size(); ++i)
        validate_predicate(p.children[i], w, field + "[" + std::to_string(i) + "]");
      break;
  }
}

}  // namespace

void validate_task(const TaskSpec& task) {
  const WorldState& w = task.initial_world;
  if (task.id.empty()) throw ValidationError("id", "must be non-empty");
  if (task.instruction.empty()) throw ValidationError("instruction", "must be non-empty");
  if (task.max_steps_default <= 0) throw ValidationError("max_steps", "must be positive");
  if (w.rooms.empty()) throw ValidationError("rooms", "must be non-empty");
  for (const auto& [id, room] : w.rooms)
    for (const auto& exit : room.exits)
      if (!w.has_room(exit)) throw ValidationError("rooms." + id + ".exits", "unknown room '" + exit + "'");
  std::size_t in_hand = 0;
  for (const auto& [id, e] : w.entities) {
    const std::string f = "entities." + id;
    if (w.has_room(id) || id == kHandLocation) throw ValidationError(f, "id collides with a room or 'hand'");
    if (e.location == kHandLocation) {
      ++in_hand;
      if (w.agent.hand != id) throw ValidationError(f + ".location", "in hand but agent.hand differs");
    } else if (!w.has_room(e.location)) {
      const Entity* parent = w.find(e.location);
      if (!parent || parent->kind != EntityKind::Receptacle)
        throw ValidationError(f + ".location", "unknown room or receptacle '" + e.location + "'");
    }
    if (e.open.has_value() && e.kind != EntityKind::Receptacle)
      throw ValidationError(f + ".open", "only receptacles can be opened");
    if (e.kind == EntityKind::Receptacle && e.location == kHandLocation)
      throw ValidationError(f + ".location", "receptacles cannot be held");
  }
  if (in_hand > 1) throw ValidationError("agent.hand", "more than one entity in hand");
  if (!w.has_room(w.agent.room)) throw ValidationError("agent.room", "unknown room '" + w.agent.room + "'");
  if (w.agent.hand && (!w.find(*w.agent.hand) || w.find(*w.agent.hand)->location != kHandLocation))
    throw ValidationError("agent.hand", "held entity must exist with location 'hand'");
  if (w.agent.facing && !w.find(*w.agent.facing))
    throw ValidationError("agent.facing", "unknown entity '" + *w.agent.facing + "'");
  if (task.subgoals.empty()) throw ValidationError("subgoals", "must be non-empty");
  for (std::size_t i = 0; i < task.subgoals.size(); ++i)
    validate_predicate(task.subgoals[i].predicate, w, "subgoals[" + std::to_string(i) + "].predicate");
  if (!task.allow_initial_progress) {
    for (std::size_t i = 0; i < task.subgoals.size(); ++i)
      if (evaluate(task.subgoals[i].predicate, w))
        throw ValidationError("subgoals[" + std::to_string(i) + "]",
                              "already satisfied in the initial world (set allow_initial_progress)");
  }
  std::set<std::string> rule_ids;
  for (std::size_t i = 0; i < task.rules.rules.size(); ++i) {
    const auto& id = task.rules.rules[i].id;
    if (id.empty() || !rule_ids.insert(id).second)
      throw ValidationError("rules[" + std::to_string(i) + "].id", "rule ids must be unique and non-empty");
  }
}

// --- serialization ---------------------------------------------------------

nlohmann::ordered_json to_json(const WorldState& s) {
  nlohmann::ordered_json j;
  j["rooms"] = nlohmann::ordered_json::array();
  for (const auto& [id, r] : s.rooms) j["rooms"].push_back({{"id", id}, {"exits", r.exits}});
  j["entities"] = nlohmann::ordered_json::array();
  for (const auto& [id, e] : s.entities) {
    nlohmann::ordered_json ej{{"id", id},
                              {"kind", e.kind == EntityKind::Object ? "object" : "receptacle"},
                              {"location", e.location}};
    if (e.open) ej["open"] = *e.open;
    ej["attributes"] = e.attributes;
    j["entities"].push_back(std::move(ej));
  }
  j["agent"] = {{"room", s.agent.room},
                {"facing", s.agent.facing ? nlohmann::ordered_json(*s.agent.facing) : nullptr},
                {"hand", s.agent.hand ? nlohmann::ordered_json(*s.agent.hand) : nullptr}};
  j["latched"] = s.latched;
  j["rng_seed"] = s.rng_seed;
  return j;
}

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& field) {
  if (!obj.is_object()) throw ValidationError(field, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ValidationError(field + "." + key, "unknown key");
  }
}

std::string get_string(const json& obj, const char* key, const std::string& field) {
  if (!obj.contains(key)) throw ValidationError(field + "." + key, "missing");
  if (!obj.at(key).is_string()) throw ValidationError(field + "." + key, "expected a string");
  std::string v = obj.at(key).get<std::string>();
  return v;
}

std::string get_id(const json& obj, const char* key, const std::string& field) {
  auto v = get_string(obj, key, field);
  if (v != normalize(v)) throw ValidationError(field + "." + key, "ids must be lower-case with single spaces");
  if (v.empty()) throw ValidationError(field + "." + key, "must be non-empty");
  return v;
}

Predicate parse_predicate(const json& j, const std::string& field) {
  if (!j.is_object() || j.size() != 1) throw ValidationError(field, "predicate must be an object with one key");
  const auto& [key, val] = *j.items().begin();
  Predicate p;
  auto str = [&](const json& v) {
    if (!v.is_string()) throw ValidationError(field + "." + key, "expected a string");
    return v.get<std::string>();
  };
  if (key == "open" || key == "closed" || key == "holding") {
    p.kind = key == "open" ? Predicate::Kind::Open
             : key == "closed" ? Predicate::Kind::Closed
                               : Predicate::Kind::Holding;
    p.entity = str(val);
  } else if (key == "located") {
    if (!val.is_array() || val.size() != 2) throw ValidationError(field + ".located", "expected [entity, location]");
    p.kind = Predicate::Kind::Located;
    p.entity = str(val[0]);
    p.location = str(val[1]);
  } else if (key == "agent_in") {
    p.kind = Predicate::Kind::AgentIn;
    p.location = str(val);
  } else if (key == "all" || key == "any") {
    if (!val.is_array()) throw ValidationError(field + "." + key, "expected a list");
    p.kind = key == "all" ? Predicate::Kind::All : Predicate::Kind::Any;
    for (std::size_t i = 0; i < val.size(); ++i)
      p.children.push_back(parse_predicate(val[i], field + "." + key + "[" + std::to_string(i) + "]"));
  } else if (key == "not") {
    p.kind = Predicate::Kind::Not;
    p.children.push_back(parse_predicate(val, field + ".not"));
  } else {
    throw ValidationError(field + "." + key, "unknown predicate");
  }
  return p;
}

Condition parse_condition(const json& j, const std::string& field) {
  using K = Condition::Kind;
  static const std::map<std::string, K, std::less<>> plain{
      {"unparsed", K::Unparsed},         {"not-facing-target", K::NotFacingTarget},
      {"hand-occupied", K::HandOccupied}, {"hand-empty", K::HandEmpty},
      {"target-closed", K::TargetClosed}, {"target-open", K::TargetOpen}};
  static const std::map<std::string, K, std::less<>> with_arg{
      {"target-has-attr", K::TargetHasAttr}, {"target-lacks-attr", K::TargetLacksAttr},
      {"object-has-attr", K::ObjectHasAttr}, {"hand-has-attr", K::HandHasAttr},
      {"hand-lacks-attr", K::HandLacksAttr}, {"agent-in", K::AgentIn},
      {"agent-not-in", K::AgentNotIn}};
  if (j.is_string()) {
    auto it = plain.find(j.get<std::string>());
    if (it == plain.end()) throw ValidationError(field, "unknown condition '" + j.get<std::string>() + "'");
    return {it->second, {}};
  }
  if (j.is_object() && j.size() == 1 && j.begin().value().is_string()) {
    auto it = with_arg.find(j.begin().key());
    if (it == with_arg.end()) throw ValidationError(field, "unknown condition '" + j.begin().key() + "'");
    return {it->second, j.begin().value().get<std::string>()};
  }
  throw ValidationError(field, "condition must be a name or {name: argument}");
}

std::vector<TaskSpec> parse_environment_doc(const json& doc, const std::string& source) {
  reject_unknown_keys(doc, {"name", "action_space_doc", "rooms", "entities", "agent", "rules", "tasks"}, source);
  const std::string name = get_string(doc, "name", source);
  WorldState world;

  if (!doc.contains("rooms") || !doc["rooms"].is_array()) throw ValidationError(source + ".rooms", "missing list");
  for (std::size_t i = 0; i < doc["rooms"].size(); ++i) {
    const auto& rj = doc["rooms"][i];
    const std::string f = source + ".rooms[" + std::to_string(i) + "]";
    reject_unknown_keys(rj, {"id", "exits"}, f);
    Room r{get_id(rj, "id", f), {}};
    if (rj.contains("exits")) r.exits = rj["exits"].get<std::vector<std::string>>();
    if (!world.rooms.emplace(r.id, r).second) throw ValidationError(f + ".id", "duplicate room");
  }
  if (doc.contains("entities")) {
    for (std::size_t i = 0; i < doc["entities"].size(); ++i) {
      const auto& ej = doc["entities"][i];
      const std::string f = source + ".entities[" + std::to_string(i) + "]";
      reject_unknown_keys(ej, {"id", "kind", "location", "open", "attributes"}, f);
      Entity e;
      e.id = get_id(ej, "id", f);
      const auto kind = get_string(ej, "kind", f);
      if (kind == "object")
        e.kind = EntityKind::Object;
      else if (kind == "receptacle")
        e.kind = EntityKind::Receptacle;
      else
        throw ValidationError(f + ".kind", "expected 'object' or 'receptacle'");
      e.location = get_id(ej, "location", f);
      if (ej.contains("open") && !ej["open"].is_null()) e.open = ej["open"].get<bool>();
      if (ej.contains("attributes")) {
        for (const auto& a : ej["attributes"]) e.attributes.insert(a.get<std::string>());
      }
      if (!world.entities.emplace(e.id, e).second) throw ValidationError(f + ".id", "duplicate entity");
    }
  }
  if (!doc.contains("agent")) throw ValidationError(source + ".agent", "missing");
  {
    const auto& aj = doc["agent"];
    const std::string f = source + ".agent";
    reject_unknown_keys(aj, {"room", "facing", "hand"}, f);
    world.agent.room = get_id(aj, "room", f);
    if (aj.contains("facing") && !aj["facing"].is_null()) world.agent.facing = aj["facing"].get<std::string>();
    if (aj.contains("hand") && !aj["hand"].is_null()) world.agent.hand = aj["hand"].get<std::string>();
  }

  RuleSet rules;
  if (doc.contains("rules")) {
    for (std::size_t i = 0; i < doc["rules"].size(); ++i) {
      const auto& rj = doc["rules"][i];
      const std::string f = source + ".rules[" + std::to_string(i) + "]";
      reject_unknown_keys(rj, {"id", "verbs", "when", "effect", "description"}, f);
      Rule rule;
      rule.id = get_string(rj, "id", f);
      if (rj.contains("verbs")) {
        for (const auto& v : rj["verbs"]) {
          auto verb = verb_from_name(v.get<std::string>());
          if (!verb) throw ValidationError(f + ".verbs", "unknown verb '" + v.get<std::string>() + "'");
          rule.guard.verbs.push_back(*verb);
        }
      }
      if (rj.contains("when")) {
        for (std::size_t c = 0; c < rj["when"].size(); ++c)
          rule.guard.conditions.push_back(parse_condition(rj["when"][c], f + ".when[" + std::to_string(c) + "]"));
      }
      const auto effect = rj.value("effect", std::string("reject"));
      if (effect == "reject")
        rule.effect = RuleEffect::Reject;
      else if (effect == "allow")
        rule.effect = RuleEffect::Allow;
      else
        throw ValidationError(f + ".effect", "expected 'allow' or 'reject'");
      rules.rules.push_back(std::move(rule));
    }
  }

  if (!doc.contains("tasks") || !doc["tasks"].is_array() || doc["tasks"].empty())
    throw ValidationError(source + ".tasks", "must be a non-empty list");
  std::vector<TaskSpec> tasks;
  for (std::size_t i = 0; i < doc["tasks"].size(); ++i) {
    const auto& tj = doc["tasks"][i];
    const std::string f = source + ".tasks[" + std::to_string(i) + "]";
    reject_unknown_keys(tj, {"id", "instruction", "subgoals", "examples", "max_steps", "allow_initial_progress"}, f);
    TaskSpec t;
    t.id = get_string(tj, "id", f);
    t.env_name = name;
    t.instruction = get_string(tj, "instruction", f);
    t.initial_world = world;
    t.rules = rules;
    t.action_space_doc = doc.value("action_space_doc", std::string());
    if (tj.contains("examples")) t.examples = tj["examples"].get<std::vector<std::string>>();
    t.max_steps_default = tj.value("max_steps", 50);
    t.allow_initial_progress = tj.value("allow_initial_progress", false);
    if (!tj.contains("subgoals") || !tj["subgoals"].is_array())
      throw ValidationError(f + ".subgoals", "missing list");
    for (std::size_t g = 0; g < tj["subgoals"].size(); ++g) {
      const auto& gj = tj["subgoals"][g];
      const std::string gf = f + ".subgoals[" + std::to_string(g) + "]";
      reject_unknown_keys(gj, {"description", "predicate", "latch"}, gf);
      if (!gj.contains("predicate")) throw ValidationError(gf + ".predicate", "missing");
      t.subgoals.push_back({gj.value("description", std::string()), parse_predicate(gj["predicate"], gf + ".predicate"),
                            gj.value("latch", false)});
    }
    try {
      validate_task(t);
    } catch (const ValidationError& e) {
      throw ValidationError(f + "." + e.field(), std::string(e.what()).substr(e.field().size() + 2));
    }
    tasks.push_back(std::move(t));
  }
  return tasks;
}

}  // namespace

std::vector<TaskSpec> parse_environment(const json& doc, const std::string& source) {
  try {
    return parse_environment_doc(doc, source);
  } catch (const json::exception& e) {
    throw ValidationError(source, std::string("malformed value: ") + e.what());
  }
}

std::vector<TaskSpec> load_environment_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open environment file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.filename().string(), std::string("invalid JSON: ") + e.what());
  }
  return parse_environment(doc, path.filename().string());
}

}  // namespace ttx
