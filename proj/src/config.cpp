#include "ttx/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "ttx/run_store.hpp"

namespace ttx {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Object reader that remembers which keys were consumed.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.contains(k) && !j_.at(k).is_null();
  }

  const json& raw(const std::string& k) {
    seen_.insert(k);
    return j_.at(k);
  }

  template <typename T>
  void get(const std::string& k, T& out) {
    if (!has(k)) return;
    try {
      out = j_.at(k).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(key(k) + ": wrong type (" + std::string(j_.at(k).type_name()) + ")");
    }
  }

  void done() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown key '" + key(k) + "'");
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Int>
void positive(const std::string& key, Int v) {
  if (v < 1) throw ConfigError(key + ": must be positive");
}

Mode parse_mode(const std::string& key, const std::string& s) {
  if (auto m = mode_from_name(s)) return *m;
  throw ConfigError(key + ": unknown mode '" + s + "' (react|ttexplore|reflexion|bestofn)");
}

RunConfig parse_run(const json& j) {
  RunConfig r;
  Obj o(j, "run");
  std::string mode, inner, trigger;
  o.get("mode", mode);
  o.get("bon_inner", inner);
  o.get("trigger_policy", trigger);
  if (!mode.empty()) r.mode = parse_mode("run.mode", mode);
  if (!inner.empty()) r.bon_inner = parse_mode("run.bon_inner", inner);
  if (trigger == "on-failure")
    r.trigger_policy = TriggerPolicy::OnFailure;
  else if (!trigger.empty() && trigger != "fixed")
    throw ConfigError("run.trigger_policy: expected fixed or on-failure");
  o.get("n_trigger", r.n_trigger);
  o.get("max_steps", r.max_steps);
  o.get("retries_N", r.retries_N);
  o.get("samples_N", r.samples_N);
  o.get("bon_temperature", r.bon_temperature);
  o.get("max_prompt_chars", r.max_prompt_chars);
  o.get("thinker_sees_thoughts", r.thinker_sees_thoughts);
  o.get("record_wall_time", r.record_wall_time);
  o.done();
  return r;
}

PipelineConfig parse_pipeline(const json& j) {
  PipelineConfig p;
  Obj o(j, "pipeline");
  std::string reward, completion, pad;
  o.get("x", p.x);
  o.get("y", p.y);
  o.get("m", p.m);
  o.get("reward_mode", reward);
  o.get("penalty_rate", p.penalty_rate);
  o.get("nodes_per_trajectory", p.nodes_per_trajectory);
  o.get("rollout_max_steps", p.rollout_max_steps);
  o.get("completion", completion);
  o.get("pad_short_weak", pad);
  o.get("sample_retry_budget", p.sample_retry_budget);
  o.get("sample_temperature", p.sample_temperature);
  o.done();
  if (reward == "step-penalty")
    p.reward_mode = RewardMode::StepPenalty;
  else if (!reward.empty() && reward != "binary")
    throw ConfigError("pipeline.reward_mode: expected binary or step-penalty");
  if (completion == "reach-target")
    p.completion = CompletionRule::ReachTarget;
  else if (!completion.empty() && completion != "any-improvement")
    throw ConfigError("pipeline.completion: expected any-improvement or reach-target");
  if (pad == "error")
    p.pad_short_weak = ShortWeakPolicy::Error;
  else if (!pad.empty() && pad != "repeat-last")
    throw ConfigError("pipeline.pad_short_weak: expected repeat-last or error");
  validate_pipeline_config(p);
  return p;
}

std::string relative_to_dir(const fs::path& p, const fs::path& base) {
  return fs::absolute(p).lexically_normal().lexically_relative(fs::absolute(base).lexically_normal()).generic_string();
}

}  // namespace

PolicySpec parse_policy_spec(const json& j, Role role, const std::string& key) {
  PolicySpec s;
  s.role = role;
  Obj o(j, key);
  if (j.contains("api_key")) throw ConfigError(key + ".api_key: keys are read from environment variables only");
  const bool scripted = j.contains("scripted"), remote = j.contains("remote");
  if (scripted == remote) throw ConfigError(key + ": exactly one of 'scripted' or 'remote' is required");
  if (scripted) {
    std::string name;
    o.get("scripted", name);
    const auto& names = scripted_policy_names();
    if (std::find(names.begin(), names.end(), name) == names.end())
      throw ConfigError(key + ".scripted: unknown scripted policy '" + name + "'");
    s.backend = ScriptedRef{name};
  } else {
    RemoteEndpoint e;
    Obj r(o.raw("remote"), key + ".remote");
    if (o.raw("remote").contains("api_key"))
      throw ConfigError(key + ".remote.api_key: keys are read from environment variables only");
    r.get("url", e.url);
    r.get("model", e.model);
    r.get("api_key_env", e.api_key_env);
    r.get("max_concurrent", e.max_concurrent);
    r.get("max_attempts", e.max_attempts);
    r.get("backoff_ms", e.backoff_ms);
    r.get("timeout_s", e.timeout_s);
    r.done();
    if (e.url.empty()) throw ConfigError(key + ".remote.url: required");
    if (e.model.empty()) throw ConfigError(key + ".remote.model: required");
    positive(key + ".remote.max_concurrent", e.max_concurrent);
    positive(key + ".remote.max_attempts", e.max_attempts);
    s.backend = e;
  }
  o.get("temperature", s.decode.temperature);
  o.get("max_output_tokens", s.decode.max_output_tokens);
  o.get("trainable", s.trainable);
  o.done();
  return s;
}

ordered_json to_json(const PolicySpec& spec) {
  ordered_json j;
  if (const auto* s = std::get_if<ScriptedRef>(&spec.backend)) {
    j["scripted"] = s->name;
  } else {
    const auto& e = std::get<RemoteEndpoint>(spec.backend);
    j["remote"] = {{"url", e.url},
                   {"model", e.model},
                   {"api_key_env", e.api_key_env},
                   {"max_concurrent", e.max_concurrent},
                   {"max_attempts", e.max_attempts},
                   {"backoff_ms", e.backoff_ms},
                   {"timeout_s", e.timeout_s}};
  }
  j["temperature"] = spec.decode.temperature;
  j["max_output_tokens"] = spec.decode.max_output_tokens;
  j["trainable"] = spec.trainable;
  return j;
}

fs::path ExperimentConfig::resolve(const std::string& p) const {
  const fs::path path(p);
  return path.is_absolute() ? path : (base_dir / path).lexically_normal();
}

ExperimentConfig parse_experiment_config(const json& doc, const fs::path& base_dir) {
  ExperimentConfig c;
  c.base_dir = base_dir;
  Obj o(doc, "");
  o.get("env_files", c.env_files);
  o.get("scripted_fixtures", c.scripted_fixtures);
  o.get("tasks", c.tasks);
  o.get("seeds", c.seeds);
  if (o.has("actor")) c.actor = parse_policy_spec(o.raw("actor"), Role::Actor, "actor");
  if (o.has("thinker")) c.thinker = parse_policy_spec(o.raw("thinker"), Role::Thinker, "thinker");
  if (o.has("weak")) c.weak = parse_policy_spec(o.raw("weak"), Role::Actor, "weak");
  if (o.has("strong")) c.strong = parse_policy_spec(o.raw("strong"), Role::Actor, "strong");
  if (o.has("run")) c.run = parse_run(o.raw("run"));
  if (o.has("pipeline")) c.pipeline = parse_pipeline(o.raw("pipeline"));
  o.get("store_dir", c.store_dir);
  o.get("parallelism", c.parallelism);
  o.get("k", c.k);
  o.done();
  if (c.env_files.empty()) throw ConfigError("env_files: at least one environment file is required");
  if (c.seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  positive("parallelism", c.parallelism);
  positive("k", c.k);
  c.pipeline.parallelism = c.parallelism;
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_experiment_config(doc, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

ordered_json to_json(const ExperimentConfig& c, const fs::path& relative_to) {
  ordered_json j;
  std::vector<std::string> envs;
  for (const auto& e : c.env_files) envs.push_back(relative_to_dir(c.resolve(e), relative_to));
  j["env_files"] = envs;
  j["scripted_fixtures"] = c.scripted_fixtures.empty() ? std::string() : relative_to_dir(c.resolve(c.scripted_fixtures), relative_to);
  j["tasks"] = c.tasks;
  j["seeds"] = c.seeds;
  const auto policy = [](const std::optional<PolicySpec>& p) { return p ? to_json(*p) : ordered_json(nullptr); };
  j["actor"] = policy(c.actor);
  j["thinker"] = policy(c.thinker);
  j["weak"] = policy(c.weak);
  j["strong"] = policy(c.strong);
  const auto& r = c.run;
  j["run"] = {{"mode", mode_name(r.mode)},
              {"bon_inner", mode_name(r.bon_inner)},
              {"n_trigger", r.n_trigger},
              {"max_steps", r.max_steps},
              {"retries_N", r.retries_N},
              {"samples_N", r.samples_N},
              {"bon_temperature", r.bon_temperature},
              {"trigger_policy", r.trigger_policy == TriggerPolicy::Fixed ? "fixed" : "on-failure"},
              {"max_prompt_chars", r.max_prompt_chars},
              {"thinker_sees_thoughts", r.thinker_sees_thoughts},
              {"record_wall_time", r.record_wall_time}};
  const auto& p = c.pipeline;
  j["pipeline"] = {{"x", p.x},
                   {"y", p.y},
                   {"m", p.m},
                   {"reward_mode", reward_mode_name(p.reward_mode)},
                   {"penalty_rate", p.penalty_rate},
                   {"nodes_per_trajectory", p.nodes_per_trajectory},
                   {"rollout_max_steps", p.rollout_max_steps},
                   {"completion", p.completion == CompletionRule::AnyImprovement ? "any-improvement" : "reach-target"},
                   {"pad_short_weak", p.pad_short_weak == ShortWeakPolicy::RepeatLast ? "repeat-last" : "error"},
                   {"sample_retry_budget", p.sample_retry_budget},
                   {"sample_temperature", p.sample_temperature}};
  j["store_dir"] = relative_to_dir(c.resolve(c.store_dir), relative_to);
  j["parallelism"] = c.parallelism;
  j["k"] = c.k;
  return j;
}

std::string file_digest(const fs::path& path) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(read_file(path))));
  return buf;
}

const TaskSpec& Experiment::task(const std::string& id) const {
  for (const auto& t : all_tasks)
    if (t.id == id) return t;
  throw ConfigError("unknown task '" + id + "'");
}

std::vector<EpisodeSpec> Experiment::episodes() const {
  std::vector<EpisodeSpec> out;
  for (std::size_t i : selected)
    for (auto seed : cfg.seeds) out.push_back({&all_tasks[i], seed});
  return out;
}

PolicyHandle Experiment::policy(const std::optional<PolicySpec>& spec, const char* key) const {
  if (!spec) throw ConfigError(std::string(key) + ": policy is required for this command");
  try {
    return make_policy(*spec, fixtures);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

Experiment load_experiment(ExperimentConfig cfg) {
  Experiment x;
  x.cfg = std::move(cfg);
  for (std::size_t i = 0; i < x.cfg.env_files.size(); ++i) {
    const auto path = x.cfg.resolve(x.cfg.env_files[i]);
    if (!fs::exists(path)) throw ConfigError("env_files[" + std::to_string(i) + "]: no such file " + path.string());
    auto tasks = load_environment_file(path);
    if (!tasks.empty()) x.env_digests[tasks.front().env_name] = file_digest(path);
    for (auto& t : tasks) {
      for (const auto& existing : x.all_tasks)
        if (existing.id == t.id) throw ConfigError("duplicate task id '" + t.id + "' in " + path.string());
      x.all_tasks.push_back(std::move(t));
    }
  }
  if (x.cfg.tasks.empty()) {
    for (std::size_t i = 0; i < x.all_tasks.size(); ++i) x.selected.push_back(i);
  } else {
    for (std::size_t s = 0; s < x.cfg.tasks.size(); ++s) {
      const auto& id = x.cfg.tasks[s];
      auto it = std::find_if(x.all_tasks.begin(), x.all_tasks.end(), [&](const TaskSpec& t) { return t.id == id; });
      if (it == x.all_tasks.end()) throw ConfigError("tasks[" + std::to_string(s) + "]: unknown task '" + id + "'");
      x.selected.push_back(static_cast<std::size_t>(it - x.all_tasks.begin()));
    }
  }
  if (!x.cfg.scripted_fixtures.empty()) {
    const auto path = x.cfg.resolve(x.cfg.scripted_fixtures);
    if (!fs::exists(path)) throw ConfigError("scripted_fixtures: no such file " + path.string());
    x.fixtures = std::make_shared<const ScriptedFixtures>(load_scripted_fixtures(path));
  }
  return x;
}

}  // namespace ttx
