#include <algorithm>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "ttx/pipeline.hpp"

using namespace ttx;

namespace {

// Actor that plays a fixed action list, indexed by how many steps the prompt
// shows beyond `offset`. The last action repeats once the list runs out.
class ScriptBackend : public Backend {
 public:
  ScriptBackend(std::vector<std::string> actions, std::size_t offset) : actions_(std::move(actions)), offset_(offset) {}
  std::string complete(std::string_view prompt, const DecodeParams&, std::uint64_t) override {
    const auto digest = read_prompt(prompt);
    const std::size_t shown = digest.steps.empty() ? 0 : digest.steps.back().first;
    const std::size_t i = std::min(shown - std::min(shown, offset_), actions_.size() - 1);
    return "<think>scripted</think><answer>" + actions_[i] + "</answer>";
  }
  std::string describe() const override { return "script"; }

 private:
  std::vector<std::string> actions_;
  std::size_t offset_;
};

PolicyHandle script(std::vector<std::string> actions, std::size_t offset = 0) {
  PolicySpec spec;
  spec.backend = ScriptedRef{"script"};
  return {spec, std::make_shared<ScriptBackend>(std::move(actions), offset)};
}

// Wraps a policy and records every prompt it is given.
class Recorder : public Backend {
 public:
  explicit Recorder(PolicyHandle inner) : inner_(std::move(inner)) {}
  std::string complete(std::string_view prompt, const DecodeParams&, std::uint64_t seed) override {
    prompts.emplace_back(prompt);
    return ttx::complete(inner_, prompt, seed);
  }
  std::string describe() const override { return "recorder"; }
  std::vector<std::string> prompts;

 private:
  PolicyHandle inner_;
};

Trajectory scored(const std::string& task_id, const std::vector<double>& scores) {
  Trajectory t;
  t.task_id = task_id;
  for (std::size_t i = 0; i < scores.size(); ++i) t.steps.push_back({"a" + std::to_string(i), "o", scores[i], 0});
  return t;
}

SubTask fresh_subtask(const std::string& task_id, double start, double target) {
  SubTask s;
  s.parent_task_id = task_id;
  s.start_score = start;
  s.target_score = target;
  return s;
}

PipelineConfig defaults() { return PipelineConfig{}; }

}  // namespace

TEST_CASE("divide: one sub-task per strict score increase") {
  SUBCASE("expert run on MiniHouse-2") {
    const auto& t = fixture::task("MiniHouse-2");
    const auto [strong, state] = replay_trajectory(t, 0, fixture::tables()->by_task("MiniHouse-2")->expert_plan);
    std::vector<double> scores;
    for (const auto& s : strong.steps) scores.push_back(s.score_after);
    REQUIRE(scores == std::vector<double>{0, 0, 33.33, 33.33, 66.67, 100});
    const auto subs = divide_subtasks(t, strong);
    REQUIRE(subs.size() == 3);
    CHECK(subs[0].prefix_actions.size() == 0);
    CHECK(subs[1].prefix_actions.size() == 3);
    CHECK(subs[2].prefix_actions.size() == 5);
    CHECK(subs[0].start_score == 0.0);
    CHECK(subs[0].target_score == 33.33);
    CHECK(subs[1].start_score == 33.33);
    CHECK(subs[1].target_score == 66.67);
    CHECK(subs[2].start_score == 66.67);
    CHECK(subs[2].target_score == 100.0);
    for (const auto& s : subs) {
      CHECK(s.difficulty == Difficulty::Unset);
      CHECK(process_score(replay(t, 0, s.prefix_actions), t).value == s.start_score);
    }
  }
  SUBCASE("a single jump") {
    const auto subs = divide_subtasks(fixture::task("MiniHouse-1"), scored("MiniHouse-1", {0, 100}));
    REQUIRE(subs.size() == 1);
    CHECK(subs[0].prefix_actions.empty());
    CHECK(subs[0].target_score == 100.0);
  }
  SUBCASE("flat scores") {
    CHECK(divide_subtasks(fixture::task("MiniHouse-1"), scored("MiniHouse-1", {0, 0, 0})).empty());
  }
  SUBCASE("a trajectory from another task") {
    CHECK_THROWS_AS(divide_subtasks(fixture::task("MiniHouse-1"), scored("KeyMaze-1", {0, 100})), ContractError);
  }
}

TEST_CASE("property: division agrees with replayed scores") {
  std::mt19937_64 rng(5);
  const Agents random{fixture::policy("random-actor"), std::nullopt};
  for (int trial = 0; trial < 60; ++trial) {
    const auto& t = fixture::task(std::vector<std::string>{"MiniHouse-1", "MiniHouse-2", "KeyMaze-1"}[trial % 3]);
    auto cfg = fixture::config(Mode::ReAct, static_cast<std::int64_t>(rng() % 100));
    cfg.max_steps = 40;
    const auto traj = run_episode(random, t, cfg);
    std::size_t increases = 0;
    double best = traj.initial_score;
    for (const auto& s : traj.steps)
      if (s.score_after > best) {
        ++increases;
        best = s.score_after;
      }
    const auto subs = divide_subtasks(t, traj);
    CHECK(subs.size() == increases);
    for (std::size_t j = 0; j < subs.size(); ++j) {
      CHECK(subs[j].target_score > subs[j].start_score);
      CHECK(process_score(replay(t, traj.seed, subs[j].prefix_actions), t).value == subs[j].start_score);
      if (j > 0) CHECK(subs[j].prefix_actions.size() > subs[j - 1].prefix_actions.size());
    }
  }
}

TEST_CASE("classification by weak completion step") {
  const auto& t = fixture::task("MiniHouse-1");
  const auto sub = fresh_subtask("MiniHouse-1", 0.0, 33.33);
  const auto cfg = defaults();
  // Opening the fridge is the first scoring action; pad with harmless looks.
  auto opens_at = [](std::size_t step) {
    std::vector<std::string> a{"go to fridge 1"};
    while (a.size() + 1 < step) a.push_back("look around");
    a.push_back("open fridge 1");
    return a;
  };
  struct Case {
    std::size_t step;
    Difficulty expected;
  };
  for (const Case c : {Case{3, Difficulty::Easy}, Case{5, Difficulty::Easy}, Case{6, Difficulty::Medium},
                       Case{9, Difficulty::Medium}, Case{15, Difficulty::Medium}, Case{16, Difficulty::Hard}}) {
    CAPTURE(c.step);
    const auto r = classify_difficulty(sub, t, script(opens_at(c.step)), cfg);
    CHECK(r.difficulty == c.expected);
    if (c.step <= 15) {
      REQUIRE(r.completion_step.has_value());
      CHECK(*r.completion_step == c.step);
      CHECK(r.weak_traj.steps.size() == c.step);
    } else {
      CHECK_FALSE(r.completion_step.has_value());
      CHECK(r.weak_traj.steps.size() == 15);
    }
  }
  const auto never = classify_difficulty(sub, t, fixture::policy("loop-actor"), cfg);
  CHECK(never.difficulty == Difficulty::Hard);
  CHECK(never.weak_traj.steps.size() == 15);
}

TEST_CASE("classification keeps the prefix and is deterministic") {
  const auto& t = fixture::task("MiniHouse-2");
  const auto [strong, st] = replay_trajectory(t, 0, fixture::tables()->by_task("MiniHouse-2")->expert_plan);
  const auto subs = divide_subtasks(t, strong);
  for (const auto& s : subs) {
    const auto a = classify_difficulty(s, t, fixture::policy("greedy-actor"), defaults());
    const auto b = classify_difficulty(s, t, fixture::policy("greedy-actor"), defaults());
    CHECK(a.difficulty == b.difficulty);
    CHECK(a.weak_traj == b.weak_traj);
    for (std::size_t i = 0; i < s.prefix_actions.size(); ++i) CHECK(a.weak_traj.steps[i].action == s.prefix_actions[i]);
  }
  auto broken = subs[1];
  broken.start_score = 0.0;
  CHECK_THROWS_AS(classify_difficulty(broken, t, fixture::policy("greedy-actor"), defaults()), IntegrityError);
}

TEST_CASE("filtering drops Easy and keeps order") {
  auto make = [](std::vector<Difficulty> ds) {
    std::vector<SubTask> out;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      SubTask s = fresh_subtask("T" + std::to_string(i), 0, 1);
      s.difficulty = ds[i];
      out.push_back(s);
    }
    return out;
  };
  using D = Difficulty;
  const auto kept = filter_subtasks(make({D::Easy, D::Medium, D::Hard, D::Easy, D::Medium}));
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].parent_task_id == "T1");
  CHECK(kept[1].parent_task_id == "T2");
  CHECK(kept[2].parent_task_id == "T4");
  CHECK(filter_subtasks(make({D::Easy, D::Easy})).empty());
  CHECK(filter_subtasks({}).empty());
  CHECK_THROWS_AS(filter_subtasks(make({D::Medium, D::Unset})), ContractError);
}

TEST_CASE("rollout context: prefix plus exactly x weak actions") {
  const auto& t = fixture::task("MiniHouse-1");
  SUBCASE("empty prefix") {
    auto sub = fresh_subtask("MiniHouse-1", 0.0, 33.33);
    sub.weak_traj = {"go to fridge 1", "take apple 1 from fridge 1", "take apple 1 from fridge 1", "look around",
                     "take apple 1 from fridge 1", "go to kitchen", "look around"};
    const auto ctx = build_rollout_context(sub, t, defaults());
    CHECK(ctx.history.steps.size() == 5);
    REQUIRE(sub.weak_prefix.has_value());
    CHECK(*sub.weak_prefix ==
          std::vector<std::string>(sub.weak_traj.begin(), sub.weak_traj.begin() + 5));
    CHECK(ctx.state == replay(t, 0, *sub.weak_prefix));
    CHECK(ctx.prompt == render_thinker_prompt(t, ctx.history.view()));
    CHECK(ctx.context_id == "MiniHouse-1-s0-p0");
    auto again = sub;
    CHECK(build_rollout_context(again, t, defaults()).prompt == ctx.prompt);
  }
  SUBCASE("non-empty prefix") {
    auto sub = fresh_subtask("MiniHouse-1", 33.33, 66.67);
    sub.prefix_actions = {"go to fridge 1", "open fridge 1"};
    sub.weak_traj = {"look around", "look around", "go to kitchen", "look around", "go to fridge 1", "x"};
    const auto ctx = build_rollout_context(sub, t, defaults());
    CHECK(ctx.history.steps.size() == 7);
    CHECK(ctx.history.steps[1].action == "open fridge 1");
    CHECK(ctx.context_id == "MiniHouse-1-s0-p2");
  }
  SUBCASE("short weak trajectories are padded with their last action") {
    auto sub = fresh_subtask("MiniHouse-1", 0.0, 33.33);
    sub.weak_traj = {"go to kitchen", "go to fridge 1"};
    build_rollout_context(sub, t, defaults());
    CHECK(*sub.weak_prefix == std::vector<std::string>{"go to kitchen", "go to fridge 1", "go to fridge 1",
                                                       "go to fridge 1", "go to fridge 1"});
    auto strict = defaults();
    strict.pad_short_weak = ShortWeakPolicy::Error;
    auto sub2 = fresh_subtask("MiniHouse-1", 0.0, 33.33);
    sub2.weak_traj = {"go to kitchen"};
    CHECK_THROWS_AS(build_rollout_context(sub2, t, strict), ContractError);
  }
  SUBCASE("a prefix that no longer replays to its start score") {
    auto sub = fresh_subtask("MiniHouse-1", 66.67, 100.0);
    sub.prefix_actions = {"go to fridge 1", "open fridge 1"};
    sub.weak_traj = {"look around"};
    CHECK_THROWS_AS(build_rollout_context(sub, t, defaults()), IntegrityError);
  }
}

TEST_CASE("thought sampling") {
  const auto& t = fixture::task("MiniHouse-1");
  auto sub = fresh_subtask("MiniHouse-1", 0.0, 33.33);
  sub.weak_traj = {"go to fridge 1", "take apple 1 from fridge 1"};
  const auto ctx = build_rollout_context(sub, t, defaults());
  const auto hot = fixture::thinker("sampling-thinker", 1.0);

  const auto a = sample_thoughts(hot, ctx, 8, 42);
  const auto b = sample_thoughts(hot, ctx, 8, 42);
  REQUIRE(a.has_value());
  CHECK(a->size() == 8);
  CHECK(*a == *b);
  for (const auto& d : *a) {
    CHECK(d.anchor_step == 5);
    CHECK_FALSE(d.text.empty());
  }
  const auto one = sample_thoughts(hot, ctx, 1, 42);
  REQUIRE(one.has_value());
  CHECK(one->size() == 1);
  CHECK(one->front() == a->front());

  CHECK_FALSE(sample_thoughts(fixture::thinker("mute-thinker"), ctx, 4, 0).has_value());
  CHECK_THROWS_AS(sample_thoughts(hot, ctx, 0, 0), ContractError);
}

TEST_CASE("reward rule") {
  // Reference: one minus the rate per step taken before the improving one.
  auto expected = [](double rate, std::size_t t) { return std::max(0.0, 1.0 - rate * static_cast<double>(t - 1)); };
  CHECK(compute_reward(RewardMode::StepPenalty, 0.05, 1) == 1.0);
  CHECK(compute_reward(RewardMode::StepPenalty, 0.05, 4) == doctest::Approx(0.85));
  CHECK(compute_reward(RewardMode::StepPenalty, 0.05, std::nullopt) == 0.0);
  CHECK(compute_reward(RewardMode::Binary, 0.05, std::nullopt) == 0.0);
  CHECK(compute_reward(RewardMode::Binary, 0.05, 7) == 1.0);
  CHECK(compute_reward(RewardMode::StepPenalty, 0.5, 10) == 0.0);

  for (double rate : {0.0, 0.01, 0.05, 0.2, 1.0}) {
    double previous = 2.0;
    for (std::size_t t = 1; t <= 40; ++t) {
      const double r = compute_reward(RewardMode::StepPenalty, rate, t);
      CHECK(r == doctest::Approx(expected(rate, t)));
      CHECK(r >= 0.0);
      CHECK(r <= 1.0);
      CHECK(r <= previous);
      previous = r;
      CHECK(compute_reward(RewardMode::Binary, rate, t) == 1.0);
    }
  }
}

TEST_CASE("thought evaluation with a frozen actor") {
  const auto& t = fixture::task("MiniHouse-1");
  auto sub = fresh_subtask("MiniHouse-1", 0.0, 33.33);
  sub.weak_traj = std::vector<std::string>{"go to fridge 1"};
  sub.weak_traj.resize(5, "take apple 1 from fridge 1");
  const auto ctx = build_rollout_context(sub, t, defaults());
  const auto actor = fixture::policy("greedy-actor");
  auto penalty = defaults();
  penalty.reward_mode = RewardMode::StepPenalty;

  // Plan lines are followed as a set, so detours must be distinct actions.
  auto plan = [](std::size_t detours) {
    const std::vector<std::string> detour{"look around", "go to table 1", "go to fridge 1"};
    std::string d = "Summary: s\nPlan:\n";
    for (std::size_t i = 0; i < detours; ++i) d += "- " + detour[i] + "\n";
    return d + "- open fridge 1\n- take apple 1 from fridge 1";
  };

  SUBCASE("the oracle thought improves on the first step") {
    const auto thought = sample_thoughts(fixture::thinker("oracle-thinker"), ctx, 1, 0)->front();
    CHECK(thought.text.find("closed-blocks-access") != std::string::npos);
    const auto r = evaluate_thought(actor, sub, t, ctx, thought, defaults());
    REQUIRE(r.first_improvement.has_value());
    CHECK(*r.first_improvement == 1);
    CHECK(r.reward == 1.0);
    CHECK(r.continuation.front().action == "open fridge 1");
    CHECK(r.context_id == ctx.context_id);
    CHECK(r.thought.anchor_step == 5);
  }
  SUBCASE("improvement at step 4 under the step penalty") {
    const auto r = evaluate_thought(actor, sub, t, ctx, {plan(3), 5}, penalty);
    REQUIRE(r.first_improvement.has_value());
    CHECK(*r.first_improvement == 4);
    CHECK(r.reward == doctest::Approx(0.85));
    CHECK(evaluate_thought(actor, sub, t, ctx, {plan(1), 5}, penalty).reward == doctest::Approx(0.95));
    CHECK(evaluate_thought(actor, sub, t, ctx, {plan(3), 5}, defaults()).reward == 1.0);
  }
  SUBCASE("no improvement within y - x steps") {
    for (const auto& cfg : {defaults(), penalty}) {
      const auto r = evaluate_thought(actor, sub, t, ctx, {"continue", 5}, cfg);
      CHECK(r.continuation.size() == 10);
      CHECK_FALSE(r.first_improvement.has_value());
      CHECK(r.reward == 0.0);
    }
  }
  SUBCASE("a trainable actor is refused") {
    auto trainable = actor;
    trainable.spec.trainable = true;
    CHECK_THROWS_AS(evaluate_thought(trainable, sub, t, ctx, {"continue", 5}, defaults()), ContractError);
  }
  SUBCASE("property: reward is positive exactly when the continuation beats the start") {
    const auto hot = fixture::thinker("sampling-thinker", 1.0);
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      for (const auto& cfg : {defaults(), penalty}) {
        const auto d = sample_thoughts(hot, ctx, 1, seed)->front();
        const auto r = evaluate_thought(actor, sub, t, ctx, d, cfg);
        const bool improved = std::any_of(r.continuation.begin(), r.continuation.end(),
                                          [&](const TrajectoryStep& s) { return s.score_after > sub.start_score; });
        CHECK((r.reward > 0.0) == improved);
        CHECK(r.continuation.size() <= 10);
        if (cfg.reward_mode == RewardMode::Binary) CHECK((r.reward == 0.0 || r.reward == 1.0));
      }
    }
  }
}

TEST_CASE("multi-node rollouts") {
  const auto& t = fixture::task("MiniHouse-1");
  const PipelineAgents agents{fixture::policy("oracle-actor"), fixture::policy("greedy-actor"),
                              fixture::thinker("null-thinker"), fixture::policy("loop-actor")};
  CHECK(node_trigger_interval(2) == 9);
  CHECK(node_trigger_interval(4) == 6);
  CHECK_THROWS_AS(node_trigger_interval(3), ConfigError);

  auto anchors_for = [&](int nodes) {
    auto cfg = defaults();
    cfg.nodes_per_trajectory = nodes;
    cfg.m = 2;
    const auto rollouts = build_multinode_contexts(t, agents, cfg, fixture::config(Mode::TTExplore));
    REQUIRE(rollouts.size() == 2);
    std::vector<std::size_t> anchors;
    for (const auto& n : rollouts[0].nodes) anchors.push_back(n.anchor_step);
    CHECK(rollouts[0].trajectory.steps.size() == 25);
    return anchors;
  };
  CHECK(anchors_for(2) == std::vector<std::size_t>{9, 18});
  CHECK(anchors_for(4) == std::vector<std::size_t>{6, 12, 18, 24});

  auto bad = defaults();
  bad.nodes_per_trajectory = 3;
  CHECK_THROWS_AS(build_multinode_contexts(t, agents, bad, fixture::config(Mode::TTExplore)), ConfigError);
}

TEST_CASE("multi-node prompts and shared rewards") {
  const auto& t = fixture::task("MiniHouse-1");
  const PipelineAgents agents{fixture::policy("oracle-actor"), fixture::policy("greedy-actor"),
                              fixture::thinker("oracle-thinker"), fixture::policy("greedy-actor")};
  auto cfg = defaults();
  cfg.nodes_per_trajectory = 4;
  cfg.m = 2;
  const auto rollouts = build_multinode_contexts(t, agents, cfg, fixture::config(Mode::TTExplore));
  for (const auto& r : rollouts) {
    REQUIRE_FALSE(r.nodes.empty());
    CHECK(r.trajectory.final.success);
    CHECK(r.reward == 1.0);
    for (const auto& n : r.nodes) {
      HistoryView v = r.trajectory.view(n.anchor_step);
      std::erase_if(v.thoughts, [&](const DeepThought& d) { return d.anchor_step >= n.anchor_step; });
      CHECK(n.prompt == render_thinker_prompt(t, v));
    }
  }
}

TEST_CASE("single-node path yields one node per rollout") {
  const auto& t = fixture::task("MiniHouse-1");
  const PipelineAgents agents{fixture::policy("oracle-actor"), fixture::policy("greedy-actor"),
                              fixture::thinker("sampling-thinker"), fixture::policy("greedy-actor")};
  auto cfg = defaults();
  cfg.m = 3;
  const auto rollouts = build_multinode_contexts(t, agents, cfg, fixture::config(Mode::TTExplore));
  REQUIRE_FALSE(rollouts.empty());
  for (const auto& r : rollouts) CHECK(r.nodes.size() == 1);
}

TEST_CASE("GRPO export format") {
  RolloutGroup g;
  g.context_id = "ctx";
  g.prompt = "the prompt";
  RewardRecord a, b;
  a.context_id = b.context_id = "ctx";
  a.thought = {"first", 5};
  a.reward = 1.0;
  b.thought = {"second", 5};
  b.reward = 0.0;
  g.records = {a, b};
  g.meta = {{"difficulty", "hard"}};
  const auto text = grpo_jsonl({g});
  CHECK(text ==
        "{\"context_id\":\"ctx\",\"prompt\":\"the prompt\",\"completions\":[\"<deepthink>first</deepthink>\","
        "\"<deepthink>second</deepthink>\"],\"rewards\":[1.0,0.0],\"meta\":{\"difficulty\":\"hard\"}}\n");
  CHECK(grpo_jsonl({}).empty());

  fixture::ScratchDir dir("grpo");
  export_grpo({}, dir.dir / "empty.jsonl");
  CHECK(read_file(dir.dir / "empty.jsonl").empty());
  CHECK_THROWS_AS(export_grpo({g}, dir.dir / "empty.jsonl"), IoError);

  auto stray = g;
  stray.records[1].context_id = "other";
  CHECK_THROWS_AS(grpo_jsonl({stray}), ContractError);
}

TEST_CASE("SFT export re-renders the prompt each thought was produced from") {
  const auto& t = fixture::task("KeyMaze-1");
  auto recorder = std::make_shared<Recorder>(fixture::thinker("oracle-thinker"));
  PolicyHandle thinker = fixture::thinker("oracle-thinker");
  thinker.backend = recorder;
  auto cfg = fixture::config(Mode::TTExplore);
  cfg.n_trigger = 3;
  const auto traj = run_ttexplore(fixture::policy("greedy-actor"), thinker, t, cfg);
  REQUIRE(traj.thoughts.size() >= 2);
  REQUIRE(recorder->prompts.size() == traj.thoughts.size());

  const TaskLookup lookup = [](const std::string& id) -> const TaskSpec& { return fixture::task(id); };
  const auto react = run_react(fixture::policy("greedy-actor"), t, fixture::config(Mode::ReAct));
  const auto text = sft_jsonl({traj, react}, lookup);
  std::vector<nlohmann::json> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    lines.push_back(nlohmann::json::parse(text.substr(pos, nl - pos)));
    pos = nl + 1;
  }
  REQUIRE(lines.size() == traj.thoughts.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    CHECK(lines[i]["prompt"] == recorder->prompts[i]);
    CHECK(lines[i]["completion"] == format_thinker_output(traj.thoughts[i].text));
    CHECK(lines[i].size() == 2);
  }
  CHECK(sft_jsonl({react}, lookup).empty());
}

TEST_CASE("end-to-end forge run") {
  std::vector<EpisodeSpec> eps;
  for (const char* id : {"MiniHouse-1", "MiniHouse-2", "KeyMaze-1"}) eps.push_back({&fixture::task(id), 0});
  const PipelineAgents agents{fixture::policy("oracle-actor"), fixture::policy("greedy-actor"),
                              fixture::thinker("sampling-thinker"), fixture::policy("greedy-actor")};
  auto cfg = defaults();
  const auto run = fixture::config(Mode::TTExplore);
  const auto a = run_forge(eps, agents, cfg, run);
  const auto b = run_forge(eps, agents, cfg, run);
  CHECK(grpo_jsonl(a.groups) == grpo_jsonl(b.groups));
  CHECK(a.manifest == b.manifest);

  // three milestones in each expert plan
  CHECK(a.subtasks.size() == 9);
  std::size_t easy = 0;
  for (const auto& s : a.subtasks) {
    CHECK(s.difficulty != Difficulty::Unset);
    easy += s.difficulty == Difficulty::Easy;
  }
  CHECK(a.manifest["kept_after_filter"] == a.subtasks.size() - easy);
  CHECK(a.groups.size() + a.skipped.size() == a.subtasks.size() - easy);
  for (const auto& g : a.groups) {
    CHECK(g.records.size() == static_cast<std::size_t>(cfg.m));
    CHECK(g.meta["difficulty"] != "easy");
    for (const auto& r : g.records) {
      CHECK(r.context_id == g.context_id);
      CHECK((r.reward == 0.0 || r.reward == 1.0));
    }
  }
  CHECK(a.manifest["difficulty_counts"]["easy"] == easy);
  CHECK(a.manifest["sft_records"] > 0);
  auto bad = cfg;
  bad.y = bad.x;
  CHECK_THROWS_AS(run_forge(eps, agents, bad, run), ConfigError);
}
