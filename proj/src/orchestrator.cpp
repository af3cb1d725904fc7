#include "ttx/orchestrator.hpp"

#include <chrono>

#include "ttx/run_store.hpp"

namespace ttx {

std::vector<std::string> Trajectory::actions() const {
  std::vector<std::string> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.action);
  return out;
}

std::vector<std::string> Trajectory::observations() const {
  std::vector<std::string> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.observation);
  return out;
}

HistoryView Trajectory::view(std::optional<std::size_t> upto, bool with_thoughts) const {
  const std::size_t n = std::min(upto.value_or(steps.size()), steps.size());
  HistoryView v{task_id, initial_observation, {}, {}};
  v.steps.reserve(n);
  for (std::size_t i = 0; i < n; ++i) v.steps.push_back({steps[i].action, steps[i].observation});
  if (with_thoughts)
    for (const auto& d : thoughts)
      if (d.anchor_step <= n) v.thoughts.push_back(d);
  return v;
}

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::ReAct: return "react";
    case Mode::TTExplore: return "ttexplore";
    case Mode::Reflexion: return "reflexion";
    case Mode::BestOfN: return "bestofn";
  }
  return "?";
}

std::optional<Mode> mode_from_name(std::string_view name) {
  for (Mode m : {Mode::ReAct, Mode::TTExplore, Mode::Reflexion, Mode::BestOfN})
    if (mode_name(m) == name) return m;
  return std::nullopt;
}

void validate_run_config(const RunConfig& cfg, bool has_thinker) {
  if (cfg.max_steps < 1) throw ConfigError("run.max_steps must be positive");
  if (cfg.n_trigger < 1) throw ConfigError("run.n_trigger must be positive");
  if (cfg.n_trigger >= cfg.max_steps) throw ConfigError("run.n_trigger must be smaller than run.max_steps");
  if (cfg.retries_N < 1) throw ConfigError("run.retries_N must be positive");
  if (cfg.samples_N < 1) throw ConfigError("run.samples_N must be positive");
  if (cfg.bon_inner == Mode::BestOfN) throw ConfigError("run.bon_inner cannot itself be bestofn");
  const bool needs_thinker =
      cfg.mode == Mode::TTExplore || (cfg.mode == Mode::BestOfN && cfg.bon_inner == Mode::TTExplore);
  if (needs_thinker && !has_thinker) throw ConfigError("ttexplore requires a thinker policy");
}

std::size_t expected_trigger_count(int n_trigger, int max_steps) {
  if (n_trigger < 1 || max_steps < 1) return 0;
  return static_cast<std::size_t>((max_steps - 1) / n_trigger);
}

std::size_t select_best(const std::vector<double>& scores, const std::vector<bool>& failed) {
  if (scores.empty()) throw ContractError("select_best on an empty candidate list");
  const bool all_failed =
      !failed.empty() && std::all_of(failed.begin(), failed.end(), [](bool f) { return f; });
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool eligible = all_failed || failed.empty() || !failed[i];
    if (!eligible) continue;
    if (!best || scores[i] > scores[*best]) best = i;
  }
  return *best;
}

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t elapsed_ms(Clock::time_point since) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - since).count();
}

PromptOptions actor_prompt_options(const RunConfig& cfg, const std::vector<std::string>& reflections) {
  PromptOptions o;
  o.max_chars = cfg.max_prompt_chars;
  o.reflections = reflections;
  return o;
}

// Actor turn: one retry on a parse failure, then the "look around" no-op.
std::string next_action(const PolicyHandle& actor, const std::string& prompt, std::uint64_t seed,
                        Trajectory& traj) {
  const std::size_t step_no = traj.steps.size() + 1;
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      return parse_actor_output(complete(actor, prompt, seed)).action;
    } catch (const ParseError& e) {
      traj.incidents.push_back({step_no, "actor-parse", std::string(parse_error_name(e.kind()))});
    }
  }
  traj.incidents.push_back({step_no, "actor-noop", "substituted 'look around'"});
  return "look around";
}

void finalize(Trajectory& traj) {
  traj.final.process_score = traj.current_score();
  traj.final.success = traj.final.process_score >= 100.0;
  traj.final.steps_used = traj.steps.size();
  std::int64_t total = 0;
  for (const auto& s : traj.steps) total += s.wall_ms;
  traj.final.wall_ms_total = total;
}

bool should_trigger(const RunConfig& cfg, const Trajectory& traj) {
  const std::size_t t = traj.steps.size();
  const auto n = static_cast<std::size_t>(cfg.n_trigger);
  if (t == 0 || t % n != 0) return false;
  if (cfg.trigger_policy == TriggerPolicy::Fixed) return true;
  for (std::size_t i = t - std::min(t, n); i < t; ++i)
    if (traj.steps[i].observation == kNothingHappened) return true;
  return false;
}

void invoke_thinker(const PolicyHandle& thinker, const TaskSpec& task, const RunConfig& cfg, Trajectory& traj) {
  PromptOptions o;
  o.max_chars = cfg.max_prompt_chars;
  o.include_thoughts = cfg.thinker_sees_thoughts;
  const std::string prompt = render_thinker_prompt(task, traj.view(std::nullopt, cfg.thinker_sees_thoughts), o);
  ++traj.thinker_calls;
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      auto text = parse_thinker_output(complete(thinker, prompt, static_cast<std::uint64_t>(cfg.seed)));
      traj.thoughts.push_back({std::move(text), traj.steps.size()});
      return;
    } catch (const ParseError& e) {
      traj.incidents.push_back({traj.steps.size(), "thinker-parse", std::string(parse_error_name(e.kind()))});
    }
  }
  traj.incidents.push_back({traj.steps.size(), "thinker-dropped", "no deep thought after retry"});
}

Trajectory start(const TaskSpec& task, const RunConfig& cfg, WorldState& state) {
  auto [s, obs] = reset(task, cfg.seed);
  state = std::move(s);
  Trajectory t;
  t.task_id = task.id;
  t.seed = cfg.seed;
  t.mode = std::string(mode_name(cfg.mode));
  t.initial_observation = obs.text;
  t.initial_score = process_score(state, task).value;
  return t;
}

void require_mode(const RunConfig& cfg, Mode m) {
  if (cfg.mode != m)
    throw ContractError("runner for " + std::string(mode_name(m)) + " called with mode " +
                        std::string(mode_name(cfg.mode)));
}

}  // namespace

void continue_episode(const PolicyHandle& actor, const TaskSpec& task, const RunConfig& cfg, Trajectory& traj,
                      WorldState& state, const ContinueOptions& options) {
  const std::size_t begin = traj.steps.size();
  const std::size_t end = begin + options.max_new_steps;
  const std::size_t limit = options.step_limit ? options.step_limit : end;
  const auto seed = static_cast<std::uint64_t>(cfg.seed);
  const auto done = [&] {
    return process_score(state, task).satisfied_subgoals.size() == task.subgoals.size();
  };
  const auto improved = [&] { return options.stop_above && traj.current_score() > *options.stop_above; };
  if (done()) {
    finalize(traj);
    return;
  }

  while (traj.steps.size() < end) {
    const auto t0 = Clock::now();
    std::string action;
    try {
      const auto prompt = render_actor_prompt(task, traj.view(), actor_prompt_options(cfg, options.reflections));
      action = next_action(actor, prompt, seed, traj);
    } catch (const RemoteError& e) {
      traj.error = std::string("backend: ") + e.what();
      break;
    }
    auto r = step(task, state, action, traj.steps.size() + 1);
    state = std::move(r.state);
    traj.steps.push_back({action, r.observation.text, process_score(state, task).value,
                          cfg.record_wall_time ? elapsed_ms(t0) : 0});
    if (r.done || improved()) break;

    if (options.thinker && traj.steps.size() < limit && traj.steps.size() < end && should_trigger(cfg, traj)) {
      try {
        invoke_thinker(*options.thinker, task, cfg, traj);
      } catch (const RemoteError& e) {
        traj.error = std::string("backend: ") + e.what();
        break;
      }
    }
  }
  finalize(traj);
}

Trajectory run_react(const PolicyHandle& actor, const TaskSpec& task, const RunConfig& cfg) {
  require_mode(cfg, Mode::ReAct);
  validate_run_config(cfg, false);
  WorldState state;
  Trajectory traj = start(task, cfg, state);
  ContinueOptions o;
  o.max_new_steps = static_cast<std::size_t>(cfg.max_steps);
  continue_episode(actor, task, cfg, traj, state, o);
  finalize(traj);
  return traj;
}

Trajectory run_ttexplore(const PolicyHandle& actor, const PolicyHandle& thinker, const TaskSpec& task,
                         const RunConfig& cfg) {
  require_mode(cfg, Mode::TTExplore);
  validate_run_config(cfg, true);
  WorldState state;
  Trajectory traj = start(task, cfg, state);
  ContinueOptions o;
  o.max_new_steps = static_cast<std::size_t>(cfg.max_steps);
  o.thinker = &thinker;
  continue_episode(actor, task, cfg, traj, state, o);
  finalize(traj);
  return traj;
}

Trajectory run_reflexion(const PolicyHandle& actor, const TaskSpec& task, const RunConfig& cfg) {
  require_mode(cfg, Mode::Reflexion);
  validate_run_config(cfg, false);
  std::vector<Trajectory> attempts;
  std::vector<std::string> reflections;
  for (int i = 0; i < cfg.retries_N; ++i) {
    WorldState state;
    Trajectory traj = start(task, cfg, state);
    traj.reflections = reflections;
    ContinueOptions o;
    o.max_new_steps = static_cast<std::size_t>(cfg.max_steps);
    o.reflections = reflections;
    continue_episode(actor, task, cfg, traj, state, o);
    finalize(traj);
    attempts.push_back(std::move(traj));
    const auto& last = attempts.back();
    if (last.final.success || last.error) break;
    if (i + 1 < cfg.retries_N) {
      try {
        const auto prompt = render_reflection_prompt(task, last.view(), last.final.process_score);
        reflections.push_back(parse_reflection(complete(actor, prompt, static_cast<std::uint64_t>(cfg.seed))));
      } catch (const RemoteError& e) {
        attempts.back().error = std::string("backend: ") + e.what();
        break;
      }
    }
  }
  std::vector<double> scores;
  std::vector<bool> failed;
  for (const auto& a : attempts) {
    scores.push_back(a.final.process_score);
    failed.push_back(a.error.has_value());
  }
  const std::size_t best = select_best(scores, failed);
  Trajectory out = std::move(attempts[best]);
  out.candidate_scores = scores;
  out.selected_candidate = best;
  return out;
}

Trajectory run_best_of_n(const RunConfig& inner, const Agents& agents, const TaskSpec& task, int samples,
                         double temperature) {
  if (samples < 1) throw ContractError("best-of-n needs at least one sample");
  if (inner.mode == Mode::BestOfN) throw ContractError("best-of-n inner mode cannot be bestofn");
  Agents sampled = agents;
  sampled.actor.spec.decode.temperature = temperature;
  if (sampled.thinker) sampled.thinker->spec.decode.temperature = temperature;
  std::vector<Trajectory> runs;
  std::vector<double> scores;
  std::vector<bool> failed;
  for (int i = 0; i < samples; ++i) {
    RunConfig c = inner;
    c.seed = inner.seed + i;
    runs.push_back(run_episode(samples == 1 ? agents : sampled, task, c));
    scores.push_back(runs.back().error ? 0.0 : runs.back().final.process_score);
    failed.push_back(runs.back().error.has_value());
  }
  if (samples == 1) return std::move(runs.front());
  const std::size_t best = select_best(scores, failed);
  Trajectory out = std::move(runs[best]);
  out.mode = "bestofn";
  out.candidate_scores = scores;
  out.selected_candidate = best;
  return out;
}

Trajectory run_episode(const Agents& agents, const TaskSpec& task, const RunConfig& cfg) {
  switch (cfg.mode) {
    case Mode::ReAct: return run_react(agents.actor, task, cfg);
    case Mode::TTExplore:
      if (!agents.thinker) throw ConfigError("ttexplore requires a thinker policy");
      return run_ttexplore(agents.actor, *agents.thinker, task, cfg);
    case Mode::Reflexion: return run_reflexion(agents.actor, task, cfg);
    case Mode::BestOfN: {
      validate_run_config(cfg, agents.thinker.has_value());
      RunConfig inner = cfg;
      inner.mode = cfg.bon_inner;
      return run_best_of_n(inner, agents, task, cfg.samples_N, cfg.bon_temperature);
    }
  }
  throw ContractError("unknown mode");
}

std::pair<Trajectory, WorldState> replay_trajectory(const TaskSpec& task, std::int64_t seed,
                                                    const std::vector<std::string>& actions) {
  auto r = replay_full(task, seed, actions);
  Trajectory t;
  t.task_id = task.id;
  t.seed = seed;
  t.initial_observation = r.initial.text;
  t.initial_score = process_score(reset(task, seed).first, task).value;
  for (auto& s : r.steps) t.steps.push_back({std::move(s.action), std::move(s.observation), s.score_after, 0});
  finalize(t);
  return {std::move(t), std::move(r.state)};
}

std::string episode_id(std::size_t index, const EpisodeSpec& spec) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", index);
  return std::string(buf) + "-" + spec.task->id + "-s" + std::to_string(spec.seed);
}

std::vector<EpisodeResult> run_batch(const std::vector<EpisodeSpec>& episodes, const Agents& agents,
                                     const RunConfig& cfg, std::size_t parallelism, RunStore* store, int k) {
  validate_run_config(cfg, agents.thinker.has_value());
  return parallel_map<EpisodeResult>(episodes.size(), parallelism, [&](std::size_t i) {
    const auto& spec = episodes[i];
    RunConfig c = cfg;
    c.seed = spec.seed;
    const auto t0 = Clock::now();
    EpisodeResult r;
    r.episode_id = episode_id(i, spec);
    r.trajectory = run_episode(agents, *spec.task, c);
    r.wall_seconds =
        cfg.record_wall_time ? std::chrono::duration<double>(Clock::now() - t0).count() : 0.0;
    if (!r.trajectory.steps.empty()) r.metrics = compute_metrics(r.trajectory, k);
    if (store) store->write_episode(r, spec.task->env_name);
    return r;
  });
}

}  // namespace ttx
