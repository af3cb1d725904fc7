#include "ttx/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <optional>

#include "CLI11.hpp"
#include "ttx/config.hpp"
#include "ttx/run_store.hpp"

namespace ttx {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Flags that override config values. Defaults are shown in --help; a flag
// only wins when given.
struct Overrides {
  std::string config;
  std::string from_manifest;
  std::string name;
  std::string store;
  std::string mode = "ttexplore";
  std::string bon_inner = "ttexplore";
  int n = 6;
  int max_steps = 50;
  int retries = 5;
  int samples = 5;
  double bon_temperature = 0.7;
  std::vector<std::int64_t> seeds;
  std::vector<std::string> tasks;
  std::size_t parallelism = 1;
  int k = 3;
  int x = 5;
  int y = 15;
  int m = 4;
  std::string reward_mode = "binary";
  double penalty = 0.05;
  int nodes = 1;

  std::vector<const CLI::Option*> given;
  std::map<std::string, const CLI::Option*> opts;

  bool has(const std::string& name) const {
    auto it = opts.find(name);
    return it != opts.end() && it->second->count() > 0;
  }
};

template <typename T>
void flag(CLI::App* app, Overrides& o, const std::string& name, T& var, const std::string& help) {
  o.opts[name] = app->add_option(name, var, help)->capture_default_str();
}

void source_flags(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config, "Experiment config file (JSON)");
  app->add_option("--from-manifest", o.from_manifest, "Re-run the resolved config embedded in a batch manifest");
  app->add_option("--name", o.name, "Batch directory name (default: UTC timestamp)");
  o.opts["--store"] = app->add_option("--store", o.store, "Run store root (overrides store_dir)");
  o.opts["--seeds"] = app->add_option("--seeds", o.seeds, "Episode seeds")->delimiter(',');
  o.opts["--tasks"] = app->add_option("--tasks", o.tasks, "Task ids to run (default: all)")->delimiter(',');
  flag(app, o, "--parallelism", o.parallelism, "Worker pool size");
}

void run_flags(CLI::App* app, Overrides& o) {
  flag(app, o, "--mode", o.mode, "react|ttexplore|reflexion|bestofn");
  flag(app, o, "--bon-inner", o.bon_inner, "Per-sample mode for bestofn");
  flag(app, o, "--n", o.n, "Thinker trigger interval in steps");
  flag(app, o, "--max-steps", o.max_steps, "Step budget per episode");
  flag(app, o, "--retries", o.retries, "Reflexion attempts");
  flag(app, o, "--samples", o.samples, "Best-of-N samples (N)");
  flag(app, o, "--bon-temperature", o.bon_temperature, "Sampling temperature for Best-of-N");
  flag(app, o, "--k", o.k, "Top-k for repetition metrics");
}

void pipeline_flags(CLI::App* app, Overrides& o) {
  flag(app, o, "--x", o.x, "Easy threshold and weak-prefix length");
  flag(app, o, "--y", o.y, "Weak-policy probe budget");
  flag(app, o, "--m", o.m, "Thought samples per context");
  flag(app, o, "--reward-mode", o.reward_mode, "binary|step-penalty");
  flag(app, o, "--penalty", o.penalty, "Per-step penalty rate for step-penalty rewards");
  flag(app, o, "--nodes", o.nodes, "Thinking nodes per trajectory (1, 2 or 4)");
}

ExperimentConfig resolve_config(const Overrides& o) {
  ExperimentConfig c;
  if (!o.from_manifest.empty()) {
    const fs::path manifest(o.from_manifest);
    if (!fs::exists(manifest)) throw ConfigError("no such manifest " + manifest.string());
    const auto doc = json::parse(read_file(manifest));
    if (!doc.contains("config")) throw ConfigError(manifest.string() + ": no embedded config");
    c = parse_experiment_config(doc["config"], manifest.parent_path());
  } else if (!o.config.empty()) {
    c = load_experiment_config(o.config);
  } else {
    throw ConfigError("--config or --from-manifest is required");
  }
  auto& r = c.run;
  if (o.has("--mode")) {
    auto m = mode_from_name(o.mode);
    if (!m) throw ConfigError("--mode: unknown mode '" + o.mode + "'");
    r.mode = *m;
  }
  if (o.has("--bon-inner")) {
    auto m = mode_from_name(o.bon_inner);
    if (!m) throw ConfigError("--bon-inner: unknown mode '" + o.bon_inner + "'");
    r.bon_inner = *m;
  }
  if (o.has("--n")) r.n_trigger = o.n;
  if (o.has("--max-steps")) r.max_steps = o.max_steps;
  if (o.has("--retries")) r.retries_N = o.retries;
  if (o.has("--samples")) r.samples_N = o.samples;
  if (o.has("--bon-temperature")) r.bon_temperature = o.bon_temperature;
  if (o.has("--k")) c.k = o.k;
  if (o.has("--seeds")) c.seeds = o.seeds;
  if (o.has("--tasks")) c.tasks = o.tasks;
  if (o.has("--parallelism")) c.parallelism = o.parallelism;
  if (o.has("--store")) c.store_dir = fs::absolute(o.store).string();
  auto& p = c.pipeline;
  if (o.has("--x")) p.x = o.x;
  if (o.has("--y")) p.y = o.y;
  if (o.has("--m")) p.m = o.m;
  if (o.has("--reward-mode")) {
    if (o.reward_mode == "binary")
      p.reward_mode = RewardMode::Binary;
    else if (o.reward_mode == "step-penalty")
      p.reward_mode = RewardMode::StepPenalty;
    else
      throw ConfigError("--reward-mode: expected binary or step-penalty");
  }
  if (o.has("--penalty")) p.penalty_rate = o.penalty;
  if (o.has("--nodes")) p.nodes_per_trajectory = o.nodes;
  p.parallelism = c.parallelism;
  if (c.parallelism < 1) throw ConfigError("parallelism: must be positive");
  if (c.k < 1) throw ConfigError("k: must be positive");
  return c;
}

std::string timestamp_name() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path batch_dir_for(const ExperimentConfig& c, const std::string& name) {
  const fs::path root = c.resolve(c.store_dir);
  if (!name.empty()) {
    if (name.find('/') != std::string::npos || name == "." || name == "..")
      throw ConfigError("--name: must be a plain directory name");
    return root / name;
  }
  const auto base = timestamp_name();
  fs::path dir = root / base;
  for (int i = 2; fs::exists(dir); ++i) dir = root / (base + "-" + std::to_string(i));
  return dir;
}

ordered_json digests_json(const Experiment& x) {
  ordered_json j = ordered_json::object();
  for (const auto& [name, d] : x.env_digests) j[name] = d;
  return j;
}

// --- run --------------------------------------------------------------------

int cmd_run(const Overrides& o, std::ostream& out, std::ostream& err) {
  const Experiment x = load_experiment(resolve_config(o));
  const auto& cfg = x.cfg;
  Agents agents{x.policy(cfg.actor, "actor"), std::nullopt};
  if (cfg.thinker) agents.thinker = x.policy(cfg.thinker, "thinker");
  validate_run_config(cfg.run, agents.thinker.has_value());
  const auto episodes = x.episodes();
  if (episodes.empty()) throw ConfigError("tasks: nothing selected");

  const fs::path dir = batch_dir_for(cfg, o.name);
  RunStore store = RunStore::create(dir);
  std::vector<EpisodeResult> results;
  std::optional<std::string> aborted;
  try {
    results = run_batch(episodes, agents, cfg.run, cfg.parallelism, &store, cfg.k);
  } catch (const std::exception& e) {
    aborted = e.what();
  }

  ordered_json m;
  m["kind"] = "run";
  m["config"] = to_json(cfg, dir);
  m["env_digests"] = digests_json(x);
  const bool thinking = cfg.run.mode == Mode::TTExplore ||
                        (cfg.run.mode == Mode::BestOfN && cfg.run.bon_inner == Mode::TTExplore);
  m["max_thinker_calls"] = thinking ? expected_trigger_count(cfg.run.n_trigger, cfg.run.max_steps) : 0;
  m["episodes"] = ordered_json::array();
  std::size_t failed = 0;
  for (const auto& r : results) {
    const auto& t = r.trajectory;
    if (t.error) ++failed;
    m["episodes"].push_back({{"episode_id", r.episode_id},
                             {"task_id", t.task_id},
                             {"seed", t.seed},
                             {"success", t.final.success},
                             {"process_score", t.final.process_score},
                             {"steps_used", t.final.steps_used},
                             {"thinker_calls", t.thinker_calls},
                             {"metrics", r.metrics ? to_json(*r.metrics) : ordered_json(nullptr)},
                             {"error", t.error ? ordered_json(*t.error) : ordered_json(nullptr)}});
  }
  m["summary"] = ordered_json::array();
  if (!results.empty())
    for (const auto& row : aggregate(results).rows) m["summary"].push_back(to_json(row));
  m["aborted"] = aborted ? ordered_json(*aborted) : ordered_json(nullptr);
  store.write_manifest(m);

  if (!results.empty()) out << aggregate(results).to_text();
  out << "store: " << dir.string() << "\n";
  if (aborted) {
    err << "error: batch aborted: " << *aborted << "\n";
    return 1;
  }
  if (failed) {
    err << "error: " << failed << " episode(s) aborted on backend failure\n";
    return 1;
  }
  return 0;
}

// --- metrics ----------------------------------------------------------------

int cmd_metrics(const std::string& batch, std::optional<int> k_flag, std::ostream& out, std::ostream& err) {
  const fs::path dir(batch);
  const auto ids = list_episodes(dir);
  if (ids.empty()) throw Error("no episodes in " + dir.string());
  std::optional<json> manifest;
  if (fs::exists(dir / "manifest.json")) manifest = load_manifest(dir);
  int k = 3;
  if (manifest && manifest->contains("config")) k = (*manifest)["config"].value("k", 3);
  if (k_flag) k = *k_flag;

  std::vector<EpisodeResult> results;
  char line[256];
  std::snprintf(line, sizeof(line), "%-32s %8s %8s %8s %8s\n", "episode", "act_div", "act_rep", "obs_div", "obs_rep");
  out << line;
  for (const auto& id : ids) {
    auto e = load_episode(dir, id);
    EpisodeResult r;
    r.episode_id = id;
    r.trajectory = std::move(e.trajectory);
    r.wall_seconds = e.meta.value("wall_seconds", 0.0);
    if (!r.trajectory.steps.empty()) {
      r.metrics = compute_metrics(r.trajectory, k);
      const auto& mm = *r.metrics;
      std::snprintf(line, sizeof(line), "%-32s %8.4f %8.4f %8.4f %8.4f\n", id.c_str(), mm.action_diversity,
                    mm.action_repetition, mm.observation_diversity, mm.observation_repetition);
    } else {
      std::snprintf(line, sizeof(line), "%-32s %8s %8s %8s %8s\n", id.c_str(), "-", "-", "-", "-");
    }
    out << line;
    results.push_back(std::move(r));
  }
  out << "\n" << aggregate(results).to_text();

  if (!manifest || !manifest->contains("episodes")) {
    out << "manifest check: skipped (no episode records)\n";
    return 0;
  }
  std::size_t checked = 0;
  for (const auto& rec : (*manifest)["episodes"]) {
    const auto id = rec.value("episode_id", std::string());
    auto it = std::find_if(results.begin(), results.end(), [&](const EpisodeResult& r) { return r.episode_id == id; });
    if (it == results.end()) {
      err << "manifest check: episode " << id << " is missing from the store\n";
      return 1;
    }
    const json expected = rec.value("metrics", json(nullptr));
    const json actual = it->metrics ? json(to_json(*it->metrics)) : json(nullptr);
    if (expected != actual) {
      err << "manifest check: MISMATCH for " << id << ": manifest " << expected.dump() << ", recomputed "
          << actual.dump() << "\n";
      return 1;
    }
    ++checked;
  }
  out << "manifest check: OK (" << checked << " episodes)\n";
  return 0;
}

// --- forge ------------------------------------------------------------------

int cmd_forge(const Overrides& o, std::ostream& out, std::ostream& err) {
  const Experiment x = load_experiment(resolve_config(o));
  const auto& cfg = x.cfg;
  validate_pipeline_config(cfg.pipeline);
  PipelineAgents agents{x.policy(cfg.strong, "strong"), x.policy(cfg.weak, "weak"), x.policy(cfg.thinker, "thinker"),
                        x.policy(cfg.actor, "actor")};
  if (agents.actor.spec.trainable) throw ConfigError("actor: the reward actor must be frozen (trainable: false)");
  RunConfig run = cfg.run;
  validate_run_config(run, true);
  const auto episodes = x.episodes();
  if (episodes.empty()) throw ConfigError("tasks: nothing selected");
  const fs::path dir = batch_dir_for(cfg, o.name);
  if (fs::exists(dir)) throw IoError("batch directory " + dir.string() + " already exists");

  ForgeResult result;
  try {
    result = run_forge(episodes, agents, cfg.pipeline, run);
  } catch (const std::exception& e) {
    err << "error: forge stopped at " << e.what() << "\n";
    return 1;
  }
  std::vector<MultiNodeRollout> multinode;
  if (cfg.pipeline.nodes_per_trajectory > 1)
    for (std::size_t i : x.selected) {
      RunConfig r = run;
      r.seed = cfg.seeds.front();
      auto part = build_multinode_contexts(x.all_tasks[i], agents, cfg.pipeline, r);
      for (auto& p : part) multinode.push_back(std::move(p));
    }

  fs::create_directories(dir);
  export_grpo(result.groups, dir / "grpo.jsonl");
  PromptOptions po;
  po.max_chars = run.max_prompt_chars;
  po.include_thoughts = run.thinker_sees_thoughts;
  export_sft(result.sft_trajectories, [&](const std::string& id) -> const TaskSpec& { return x.task(id); },
             dir / "sft.jsonl", po);
  if (!multinode.empty()) {
    std::string text;
    for (const auto& mn : multinode) {
      ordered_json line;
      line["task_id"] = mn.trajectory.task_id;
      line["sample_index"] = mn.sample_index;
      line["reward"] = mn.reward;
      line["nodes"] = ordered_json::array();
      for (const auto& node : mn.nodes)
        line["nodes"].push_back({{"anchor_step", node.anchor_step},
                                 {"prompt", node.prompt},
                                 {"completion", format_thinker_output(node.thought)}});
      text += line.dump() + "\n";
    }
    write_new_file(dir / "multinode.jsonl", text);
  }
  ordered_json m;
  m["kind"] = "forge";
  m["config"] = to_json(cfg, dir);
  m["env_digests"] = digests_json(x);
  m["forge"] = result.manifest;
  write_new_file(dir / "manifest.json", m.dump(2) + "\n");

  for (const auto& w : result.warnings) err << "warning: " << w << "\n";
  const auto& fm = result.manifest;
  out << "subtasks: " << fm["subtasks"].get<std::size_t>() << " (easy " << fm["difficulty_counts"]["easy"].get<int>()
      << ", medium " << fm["difficulty_counts"]["medium"].get<int>() << ", hard "
      << fm["difficulty_counts"]["hard"].get<int>() << ")\n";
  out << "groups: " << result.groups.size() << ", skipped: " << result.skipped.size()
      << ", mean reward: " << format_fixed2(fm["mean_reward"].get<double>()) << "\n";
  out << "sft records: " << fm["sft_records"].get<std::size_t>() << "\n";
  out << "store: " << dir.string() << "\n";
  return 0;
}

// --- replay -----------------------------------------------------------------

struct EnvChoice {
  std::vector<TaskSpec> tasks;
  fs::path path;
};

EnvChoice env_for(const fs::path& batch, const std::string& env_name, const std::string& env_flag,
                  const json& manifest) {
  if (!env_flag.empty()) return {load_environment_file(env_flag), env_flag};
  if (!manifest.contains("config")) throw ConfigError("manifest has no config; pass --env");
  for (const auto& f : manifest["config"].at("env_files")) {
    const fs::path p = (batch / f.get<std::string>()).lexically_normal();
    if (!fs::exists(p)) continue;
    auto tasks = load_environment_file(p);
    if (!tasks.empty() && tasks.front().env_name == env_name) return {std::move(tasks), p};
  }
  throw ConfigError("environment '" + env_name + "' not found among the manifest's env files; pass --env");
}

bool replay_one(const fs::path& batch, const std::string& id, const std::string& env_flag, const json& manifest,
                bool quiet, std::ostream& out) {
  const auto e = load_episode(batch, id);
  const auto env = env_for(batch, e.env_name, env_flag, manifest);
  auto it = std::find_if(env.tasks.begin(), env.tasks.end(),
                         [&](const TaskSpec& t) { return t.id == e.trajectory.task_id; });
  if (it == env.tasks.end()) throw ConfigError("task " + e.trajectory.task_id + " not in " + env.path.string());
  const TaskSpec& task = *it;

  std::string digest_note;
  if (manifest.contains("env_digests") && manifest["env_digests"].contains(e.env_name) &&
      manifest["env_digests"][e.env_name].get<std::string>() != file_digest(env.path))
    digest_note = " (environment file " + env.path.string() + " differs from the one recorded for this run)";

  const auto& t = e.trajectory;
  auto [state, obs] = reset(task, t.seed);
  if (obs.text != t.initial_observation) {
    out << "FAIL " << id << " at step 0: initial observation differs; rule mismatch" << digest_note << "\n";
    return false;
  }
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const auto& s = t.steps[i];
    auto r = step(task, state, s.action, i + 1);
    const double score = process_score(r.state, task).value;
    if (!quiet)
      out << "  " << (i + 1) << ". " << s.action << " -> " << r.observation.text << " [" << format_fixed2(score)
          << "]\n";
    if (score != s.score_after || r.observation.text != s.observation) {
      out << "FAIL " << id << " at step " << (i + 1) << ": ";
      if (score != s.score_after)
        out << "stored score " << format_fixed2(s.score_after) << ", replayed " << format_fixed2(score);
      else
        out << "stored observation differs from replay";
      const bool was_rejected = s.observation == kNothingHappened;
      if (was_rejected != !r.verdict.allowed) {
        out << "; rule mismatch: ";
        if (!r.verdict.allowed)
          out << "rule '" << r.verdict.rule_id << "' now rejects '" << s.action << "'";
        else
          out << "'" << s.action << "' was rejected when recorded but is allowed now";
      }
      out << digest_note << "\n";
      return false;
    }
    state = std::move(r.state);
  }
  out << "PASS " << id << " (" << t.steps.size() << " steps)\n";
  return true;
}

int cmd_replay(const std::string& batch, const std::string& id, const std::string& env_flag, bool quiet,
               std::ostream& out) {
  const fs::path dir(batch);
  const json manifest = fs::exists(dir / "manifest.json") ? load_manifest(dir) : json::object();
  std::vector<std::string> ids = id.empty() ? list_episodes(dir) : std::vector<std::string>{id};
  if (ids.empty()) throw Error("no episodes in " + dir.string());
  bool ok = true;
  for (const auto& e : ids) ok = replay_one(dir, e, env_flag, manifest, quiet, out) && ok;
  out << (ok ? "verdict: PASS\n" : "verdict: FAIL\n");
  return ok ? 0 : 1;
}

// --- validate ---------------------------------------------------------------

int cmd_validate(const Overrides& o, const std::vector<std::string>& envs, std::ostream& out) {
  for (const auto& f : envs) {
    const auto tasks = load_environment_file(f);
    out << "OK " << f << ": " << tasks.size() << " task(s)\n";
  }
  if (!o.config.empty() || !o.from_manifest.empty()) {
    const Experiment x = load_experiment(resolve_config(o));
    const auto& c = x.cfg;
    for (const auto& [p, key] : {std::pair{&c.actor, "actor"}, std::pair{&c.thinker, "thinker"},
                                 std::pair{&c.weak, "weak"}, std::pair{&c.strong, "strong"}})
      if (*p) x.policy(*p, key);
    validate_run_config(c.run, c.thinker.has_value());
    validate_pipeline_config(c.pipeline);
    out << "OK config: " << x.selected.size() << " task(s), " << x.episodes().size() << " episode(s)\n";
  } else if (envs.empty()) {
    throw ConfigError("validate needs --config, --from-manifest or --env");
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ttx: actor/thinker agent runs, exploration metrics and thinker training data"};
  app.name("ttx");
  app.require_subcommand(1);

  Overrides run_o, forge_o, validate_o;
  auto* run = app.add_subcommand("run", "Run a batch of episodes and write a run store");
  source_flags(run, run_o);
  run_flags(run, run_o);

  std::string metrics_dir;
  std::optional<int> metrics_k;
  auto* metrics = app.add_subcommand("metrics", "Recompute exploration metrics from a stored batch");
  metrics->add_option("batch", metrics_dir, "Batch directory")->required();
  metrics->add_option("--k", metrics_k, "Top-k for repetition (default: the batch's k, else 3)");

  auto* forge = app.add_subcommand("forge", "Build thinker training data (GRPO groups and SFT records)");
  source_flags(forge, forge_o);
  pipeline_flags(forge, forge_o);
  flag(forge, forge_o, "--n", forge_o.n, "Thinker trigger interval for the SFT episodes");
  flag(forge, forge_o, "--max-steps", forge_o.max_steps, "Step budget for strong and SFT episodes");

  std::string replay_dir, replay_id, replay_env;
  bool replay_quiet = false;
  auto* replay = app.add_subcommand("replay", "Re-execute stored episodes and verify every score");
  replay->add_option("batch", replay_dir, "Batch directory")->required();
  replay->add_option("episode", replay_id, "Episode id (default: every episode in the batch)");
  replay->add_option("--env", replay_env, "Environment file to replay against");
  replay->add_flag("-q,--quiet", replay_quiet, "Print verdicts only");

  std::vector<std::string> validate_envs;
  auto* validate = app.add_subcommand("validate", "Check a config and/or environment files");
  validate->add_option("-c,--config", validate_o.config, "Experiment config file");
  validate->add_option("--from-manifest", validate_o.from_manifest, "Check a manifest's embedded config");
  validate->add_option("--env", validate_envs, "Environment files");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*run) return cmd_run(run_o, out, err);
    if (*metrics) return cmd_metrics(metrics_dir, metrics_k, out, err);
    if (*forge) return cmd_forge(forge_o, out, err);
    if (*replay) return cmd_replay(replay_dir, replay_id, replay_env, replay_quiet, out);
    if (*validate) return cmd_validate(validate_o, validate_envs, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace ttx
