#include "ttx/pipeline.hpp"

#include <cmath>
#include <map>

#include "ttx/run_store.hpp"

namespace ttx {

using nlohmann::ordered_json;

std::string_view difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::Unset: return "unset";
    case Difficulty::Easy: return "easy";
    case Difficulty::Medium: return "medium";
    case Difficulty::Hard: return "hard";
  }
  return "?";
}

std::string_view reward_mode_name(RewardMode m) { return m == RewardMode::Binary ? "binary" : "step-penalty"; }

void validate_pipeline_config(const PipelineConfig& cfg) {
  if (cfg.x <= 0 || cfg.y <= cfg.x) throw ConfigError("pipeline requires 0 < x < y");
  if (cfg.m < 1) throw ConfigError("pipeline.m must be positive");
  if (cfg.penalty_rate < 0) throw ConfigError("pipeline.penalty_rate must be >= 0");
  if (cfg.rollout_max_steps < 1) throw ConfigError("pipeline.rollout_max_steps must be positive");
  if (cfg.sample_retry_budget < 0) throw ConfigError("pipeline.sample_retry_budget must be >= 0");
  if (cfg.nodes_per_trajectory != 1 && cfg.nodes_per_trajectory != 2 && cfg.nodes_per_trajectory != 4)
    throw ConfigError("pipeline.nodes_per_trajectory must be 1, 2 or 4");
}

std::vector<SubTask> divide_subtasks(const TaskSpec& task, const Trajectory& strong) {
  if (strong.task_id != task.id) throw ContractError("strong trajectory was recorded on another task");
  std::vector<SubTask> out;
  double previous = strong.initial_score;
  std::size_t milestone = 0;  // steps up to the current starting milestone
  for (std::size_t i = 0; i < strong.steps.size(); ++i) {
    const double score = strong.steps[i].score_after;
    if (score > previous) {
      SubTask sub;
      sub.parent_task_id = task.id;
      sub.seed = strong.seed;
      for (std::size_t a = 0; a < milestone; ++a) sub.prefix_actions.push_back(strong.steps[a].action);
      sub.start_score = previous;
      sub.target_score = score;
      out.push_back(std::move(sub));
      milestone = i + 1;
    }
    previous = std::max(previous, score);
  }
  return out;
}

namespace {

RunConfig continuation_config(const RunConfig& run, std::int64_t seed) {
  RunConfig c = run;
  c.seed = seed;
  return c;
}

std::pair<Trajectory, WorldState> replay_prefix(const SubTask& sub, const TaskSpec& task,
                                                const std::vector<std::string>& actions) {
  auto [traj, state] = replay_trajectory(task, sub.seed, actions);
  return {std::move(traj), std::move(state)};
}

void check_start(const SubTask& sub, const Trajectory& prefix) {
  if (prefix.current_score() != sub.start_score)
    throw IntegrityError("sub-task prefix of " + sub.parent_task_id + " replays to score " +
                         format_fixed2(prefix.current_score()) + ", recorded " + format_fixed2(sub.start_score));
}

}  // namespace

Classification classify_difficulty(const SubTask& sub, const TaskSpec& task, const PolicyHandle& weak,
                                   const PipelineConfig& cfg, const RunConfig& run) {
  auto [traj, state] = replay_prefix(sub, task, sub.prefix_actions);
  check_start(sub, traj);
  const std::size_t begin = traj.steps.size();
  ContinueOptions o;
  o.max_new_steps = static_cast<std::size_t>(cfg.y);
  o.stop_above = cfg.completion == CompletionRule::AnyImprovement ? sub.start_score : sub.target_score - 0.005;
  continue_episode(weak, task, continuation_config(run, sub.seed), traj, state, o);
  if (traj.error) throw Error("weak policy failed during classification: " + *traj.error);

  Classification c;
  for (std::size_t i = begin; i < traj.steps.size(); ++i) {
    if (traj.steps[i].score_after > *o.stop_above) {
      c.completion_step = i - begin + 1;
      break;
    }
  }
  if (!c.completion_step)
    c.difficulty = Difficulty::Hard;
  else if (*c.completion_step <= static_cast<std::size_t>(cfg.x))
    c.difficulty = Difficulty::Easy;
  else
    c.difficulty = Difficulty::Medium;
  c.weak_traj = std::move(traj);
  return c;
}

std::vector<SubTask> filter_subtasks(const std::vector<SubTask>& subs) {
  std::vector<SubTask> out;
  for (const auto& s : subs) {
    if (s.difficulty == Difficulty::Unset) throw ContractError("filter_subtasks needs classified sub-tasks");
    if (s.difficulty != Difficulty::Easy) out.push_back(s);
  }
  return out;
}

RolloutContext build_rollout_context(SubTask& sub, const TaskSpec& task, const PipelineConfig& cfg,
                                     const RunConfig& run) {
  const auto x = static_cast<std::size_t>(cfg.x);
  std::vector<std::string> weak(sub.weak_traj.begin(), sub.weak_traj.begin() + std::min(x, sub.weak_traj.size()));
  if (weak.size() < x) {
    if (cfg.pad_short_weak == ShortWeakPolicy::Error)
      throw ContractError("weak trajectory shorter than x for " + sub.parent_task_id);
    const std::string filler = weak.empty() ? std::string("look around") : weak.back();
    weak.resize(x, filler);
  }
  sub.weak_prefix = weak;

  auto [prefix, ignored] = replay_prefix(sub, task, sub.prefix_actions);
  check_start(sub, prefix);
  std::vector<std::string> all = sub.prefix_actions;
  all.insert(all.end(), weak.begin(), weak.end());
  auto [history, state] = replay_prefix(sub, task, all);

  RolloutContext ctx;
  ctx.context_id = sub.parent_task_id + "-s" + std::to_string(sub.seed) + "-p" + std::to_string(sub.prefix_actions.size());
  PromptOptions o;
  o.max_chars = run.max_prompt_chars;
  ctx.prompt = render_thinker_prompt(task, history.view(), o);
  ctx.state = std::move(state);
  ctx.history = std::move(history);
  return ctx;
}

std::optional<std::vector<DeepThought>> sample_thoughts(const PolicyHandle& thinker, const RolloutContext& context,
                                                        int m, std::uint64_t seed, int retry_budget) {
  if (m < 1) throw ContractError("sample_thoughts requires m >= 1");
  std::vector<DeepThought> out;
  const auto tries = static_cast<std::uint64_t>(retry_budget + 1);
  for (int j = 0; j < m; ++j) {
    std::optional<std::string> text;
    for (std::uint64_t attempt = 0; attempt < tries && !text; ++attempt) {
      try {
        text = parse_thinker_output(complete(thinker, context.prompt, seed + static_cast<std::uint64_t>(j) * tries + attempt));
      } catch (const ParseError&) {
      }
    }
    if (!text) return std::nullopt;
    out.push_back({std::move(*text), context.history.steps.size()});
  }
  return out;
}

double compute_reward(RewardMode mode, double rate, std::optional<std::size_t> first_improvement) {
  if (!first_improvement) return 0.0;
  if (mode == RewardMode::Binary) return 1.0;
  const double penalized = static_cast<double>(*first_improvement - 1);
  return std::max(0.0, 1.0 - rate * penalized);
}

RewardRecord evaluate_thought(const PolicyHandle& actor_frozen, const SubTask& sub, const TaskSpec& task,
                              const RolloutContext& context, const DeepThought& thought, const PipelineConfig& cfg,
                              const RunConfig& run) {
  if (actor_frozen.spec.trainable) throw ContractError("reward evaluation needs a frozen (non-trainable) actor");
  Trajectory traj = context.history;
  WorldState state = context.state;
  const std::size_t begin = traj.steps.size();
  traj.thoughts.push_back({thought.text, begin});
  ContinueOptions o;
  o.max_new_steps = static_cast<std::size_t>(cfg.y - cfg.x);
  o.stop_above = sub.start_score;
  continue_episode(actor_frozen, task, continuation_config(run, sub.seed), traj, state, o);

  RewardRecord r;
  r.context_id = context.context_id;
  r.thought = {thought.text, begin};
  r.error = traj.error;
  r.continuation.assign(traj.steps.begin() + static_cast<std::ptrdiff_t>(begin), traj.steps.end());
  for (std::size_t i = 0; i < r.continuation.size(); ++i) {
    if (r.continuation[i].score_after > sub.start_score) {
      r.first_improvement = i + 1;
      break;
    }
  }
  r.reward = compute_reward(cfg.reward_mode, cfg.penalty_rate, r.first_improvement);
  return r;
}

std::string grpo_jsonl(const std::vector<RolloutGroup>& groups) {
  std::string out;
  for (const auto& g : groups) {
    ordered_json line;
    line["context_id"] = g.context_id;
    line["prompt"] = g.prompt;
    line["completions"] = ordered_json::array();
    line["rewards"] = ordered_json::array();
    for (const auto& r : g.records) {
      if (r.context_id != g.context_id) throw ContractError("record from another context in group " + g.context_id);
      line["completions"].push_back(format_thinker_output(r.thought.text));
      line["rewards"].push_back(r.reward);
    }
    line["meta"] = g.meta;
    out += line.dump() + "\n";
  }
  return out;
}

void export_grpo(const std::vector<RolloutGroup>& groups, const std::filesystem::path& path) {
  write_new_file(path, grpo_jsonl(groups));
}

std::string sft_jsonl(const std::vector<Trajectory>& trajectories, const TaskLookup& tasks,
                      const PromptOptions& options) {
  std::string out;
  for (const auto& t : trajectories) {
    if (t.thoughts.empty()) continue;
    const TaskSpec& task = tasks(t.task_id);
    for (std::size_t i = 0; i < t.thoughts.size(); ++i) {
      const auto& d = t.thoughts[i];
      // The prompt the thinker saw: history through the anchor, earlier thoughts only.
      HistoryView v = t.view(d.anchor_step, options.include_thoughts);
      v.thoughts.erase(std::remove_if(v.thoughts.begin(), v.thoughts.end(),
                                      [&](const DeepThought& p) { return p.anchor_step >= d.anchor_step; }),
                       v.thoughts.end());
      ordered_json line;
      line["prompt"] = render_thinker_prompt(task, v, options);
      line["completion"] = format_thinker_output(d.text);
      out += line.dump() + "\n";
    }
  }
  return out;
}

void export_sft(const std::vector<Trajectory>& trajectories, const TaskLookup& tasks,
                const std::filesystem::path& path, const PromptOptions& options) {
  write_new_file(path, sft_jsonl(trajectories, tasks, options));
}

int node_trigger_interval(int nodes) {
  switch (nodes) {
    case 2: return 9;
    case 4: return 6;
    default: throw ConfigError("no trigger interval for " + std::to_string(nodes) + " thinking nodes");
  }
}

// --- end to end ------------------------------------------------------------

namespace {

struct ContextOutcome {
  std::optional<RolloutGroup> group;
  std::string skip_reason;
};

PolicyHandle with_temperature(PolicyHandle h, double temperature) {
  h.spec.decode.temperature = temperature;
  return h;
}

ContextOutcome roll_out(SubTask& sub, const TaskSpec& task, const PipelineAgents& agents, const PipelineConfig& cfg,
                        const RunConfig& run) {
  const RolloutContext ctx = build_rollout_context(sub, task, cfg, run);
  const PolicyHandle thinker = with_temperature(agents.thinker, cfg.sample_temperature);
  const auto base_seed = mix64(fnv1a(ctx.context_id) ^ static_cast<std::uint64_t>(run.seed));
  // A backend failure during evaluation drops the group and resamples once.
  for (int round = 0; round < 2; ++round) {
    const auto thoughts =
        sample_thoughts(thinker, ctx, cfg.m, base_seed + static_cast<std::uint64_t>(round) * 1000003ULL,
                        cfg.sample_retry_budget);
    if (!thoughts) return {std::nullopt, "thinker output unparseable after retries"};
    RolloutGroup g;
    g.context_id = ctx.context_id;
    g.prompt = ctx.prompt;
    bool failed = false;
    for (const auto& d : *thoughts) {
      auto rec = evaluate_thought(agents.actor, sub, task, ctx, d, cfg, run);
      if (rec.error) {
        failed = true;
        break;
      }
      g.records.push_back(std::move(rec));
    }
    if (failed) continue;
    ordered_json first = ordered_json::array();
    for (const auto& r : g.records) first.push_back(r.first_improvement ? ordered_json(*r.first_improvement) : nullptr);
    g.meta = {{"parent_task_id", sub.parent_task_id},
              {"seed", sub.seed},
              {"difficulty", difficulty_name(sub.difficulty)},
              {"start_score", sub.start_score},
              {"target_score", sub.target_score},
              {"prefix_actions", sub.prefix_actions},
              {"weak_prefix", *sub.weak_prefix},
              {"reward_mode", reward_mode_name(cfg.reward_mode)},
              {"first_improvement", first}};
    return {std::move(g), {}};
  }
  return {std::nullopt, "frozen actor backend failed twice"};
}

template <typename Fn>
auto staged(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw Error(std::string(stage) + ": " + e.what());
  }
}

}  // namespace

ForgeResult run_forge(const std::vector<EpisodeSpec>& episodes, const PipelineAgents& agents,
                      const PipelineConfig& cfg, const RunConfig& run) {
  validate_pipeline_config(cfg);
  ForgeResult out;
  std::map<std::string, const TaskSpec*> tasks;
  for (const auto& e : episodes) tasks[e.task->id] = e.task;

  // Strong episodes and division.
  RunConfig strong_cfg = run;
  strong_cfg.mode = Mode::ReAct;
  const auto strong = staged("strong", [&] {
    return parallel_map<Trajectory>(episodes.size(), cfg.parallelism, [&](std::size_t i) {
      RunConfig c = strong_cfg;
      c.seed = episodes[i].seed;
      return run_react(agents.strong, *episodes[i].task, c);
    });
  });
  staged("divide", [&] {
    for (std::size_t i = 0; i < episodes.size(); ++i) {
      auto subs = divide_subtasks(*episodes[i].task, strong[i]);
      if (subs.empty()) out.warnings.push_back("strong trajectory for " + episodes[i].task->id + " seed " +
                                               std::to_string(episodes[i].seed) + " never raised the score");
      for (auto& s : subs) out.subtasks.push_back(std::move(s));
    }
    return 0;
  });

  // Classification; a weak-policy failure skips that sub-task.
  struct Graded {
    Difficulty difficulty = Difficulty::Unset;
    std::vector<std::string> weak_actions;
    std::string error;
  };
  const auto graded = staged("classify", [&] {
    return parallel_map<Graded>(out.subtasks.size(), cfg.parallelism, [&](std::size_t i) {
      const auto& sub = out.subtasks[i];
      try {
        auto c = classify_difficulty(sub, *tasks.at(sub.parent_task_id), agents.weak, cfg, run);
        std::vector<std::string> weak;
        for (std::size_t s = sub.prefix_actions.size(); s < c.weak_traj.steps.size(); ++s)
          weak.push_back(c.weak_traj.steps[s].action);
        return Graded{c.difficulty, std::move(weak), {}};
      } catch (const RemoteError& e) {
        return Graded{Difficulty::Unset, {}, e.what()};
      }
    });
  });
  std::vector<SubTask> classified;
  for (std::size_t i = 0; i < graded.size(); ++i) {
    auto& sub = out.subtasks[i];
    sub.difficulty = graded[i].difficulty;
    sub.weak_traj = graded[i].weak_actions;
    if (!graded[i].error.empty()) {
      out.skipped.emplace_back(sub.parent_task_id + "-p" + std::to_string(sub.prefix_actions.size()),
                               "classification aborted: " + graded[i].error);
      continue;
    }
    classified.push_back(sub);
  }
  auto kept = staged("filter", [&] { return filter_subtasks(classified); });
  if (kept.empty()) out.warnings.push_back("no sub-task survived difficulty filtering; GRPO export is empty");

  // Rollouts and rewards.
  auto outcomes = staged("rollout", [&] {
    return parallel_map<ContextOutcome>(kept.size(), cfg.parallelism, [&](std::size_t i) {
      return roll_out(kept[i], *tasks.at(kept[i].parent_task_id), agents, cfg, run);
    });
  });
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i].group)
      out.groups.push_back(std::move(*outcomes[i].group));
    else
      out.skipped.emplace_back(kept[i].parent_task_id + "-s" + std::to_string(kept[i].seed) + "-p" +
                                   std::to_string(kept[i].prefix_actions.size()),
                               outcomes[i].skip_reason);
  }

  // SFT source episodes: actor + thinker under TTExplore.
  RunConfig sft_cfg = run;
  sft_cfg.mode = Mode::TTExplore;
  out.sft_trajectories = staged("sft", [&] {
    return parallel_map<Trajectory>(episodes.size(), cfg.parallelism, [&](std::size_t i) {
      RunConfig c = sft_cfg;
      c.seed = episodes[i].seed;
      return run_ttexplore(agents.actor, agents.thinker, *episodes[i].task, c);
    });
  });

  // Manifest.
  std::map<std::string, std::size_t> counts{{"easy", 0}, {"medium", 0}, {"hard", 0}, {"unset", 0}};
  for (const auto& s : out.subtasks) ++counts[std::string(difficulty_name(s.difficulty))];
  std::map<std::string, std::size_t> histogram;
  double reward_sum = 0;
  std::size_t reward_n = 0;
  for (const auto& g : out.groups)
    for (const auto& r : g.records) {
      ++histogram[format_fixed2(r.reward)];
      reward_sum += r.reward;
      ++reward_n;
    }
  std::size_t sft_records = 0;
  for (const auto& t : out.sft_trajectories) sft_records += t.thoughts.size();
  ordered_json skipped = ordered_json::array();
  for (const auto& [id, reason] : out.skipped) skipped.push_back({{"id", id}, {"reason", reason}});
  out.manifest = {{"strong_episodes", episodes.size()},
                  {"subtasks", out.subtasks.size()},
                  {"difficulty_counts", {{"easy", counts["easy"]}, {"medium", counts["medium"]}, {"hard", counts["hard"]}}},
                  {"kept_after_filter", kept.size()},
                  {"groups", out.groups.size()},
                  {"records", reward_n},
                  {"mean_reward", reward_n ? round2(reward_sum / static_cast<double>(reward_n)) : 0.0},
                  {"reward_histogram", histogram},
                  {"skipped", skipped},
                  {"sft_records", sft_records},
                  {"warnings", out.warnings}};
  return out;
}

std::vector<MultiNodeRollout> build_multinode_contexts(const TaskSpec& task, const PipelineAgents& agents,
                                                       const PipelineConfig& cfg, const RunConfig& run) {
  validate_pipeline_config(cfg);
  std::vector<MultiNodeRollout> out;
  if (cfg.nodes_per_trajectory == 1) {
    auto forge = run_forge({{&task, run.seed}}, agents, cfg, run);
    for (const auto& g : forge.groups) {
      for (std::size_t j = 0; j < g.records.size(); ++j) {
        const auto& r = g.records[j];
        MultiNodeRollout m;
        m.sample_index = j;
        m.nodes.push_back({r.thought.anchor_step, g.prompt, r.thought.text});
        m.reward = r.reward;
        out.push_back(std::move(m));
      }
    }
    return out;
  }

  RunConfig c = run;
  c.mode = Mode::TTExplore;
  c.n_trigger = node_trigger_interval(cfg.nodes_per_trajectory);
  c.max_steps = cfg.rollout_max_steps;
  validate_run_config(c, true);
  const PolicyHandle thinker = with_temperature(agents.thinker, cfg.sample_temperature);
  for (int j = 0; j < cfg.m; ++j) {
    RunConfig cj = c;
    cj.seed = run.seed + j;
    MultiNodeRollout m;
    m.sample_index = static_cast<std::size_t>(j);
    m.trajectory = run_ttexplore(agents.actor, thinker, task, cj);
    const auto& t = m.trajectory;
    PromptOptions o;
    o.max_chars = run.max_prompt_chars;
    o.include_thoughts = run.thinker_sees_thoughts;
    for (const auto& d : t.thoughts) {
      HistoryView v = t.view(d.anchor_step, run.thinker_sees_thoughts);
      std::erase_if(v.thoughts, [&](const DeepThought& p) { return p.anchor_step >= d.anchor_step; });
      m.nodes.push_back({d.anchor_step, render_thinker_prompt(task, v, o), d.text});
    }
    // Shared reward: improvement after the first thinking node.
    if (!t.thoughts.empty()) {
      const std::size_t anchor = t.thoughts.front().anchor_step;
      const double base = anchor == 0 ? t.initial_score : t.steps[anchor - 1].score_after;
      std::optional<std::size_t> first;
      for (std::size_t i = anchor; i < t.steps.size(); ++i)
        if (t.steps[i].score_after > base) {
          first = i - anchor + 1;
          break;
        }
      m.reward = compute_reward(cfg.reward_mode, cfg.penalty_rate, first);
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace ttx
