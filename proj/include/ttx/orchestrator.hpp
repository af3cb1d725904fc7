#pragma once

// Episode engines: ReAct, TTExplore (actor + periodically triggered thinker),
// Reflexion and Best-of-N harnesses, and a batch runner.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ttx/env.hpp"
#include "ttx/metrics.hpp"
#include "ttx/policy.hpp"
#include "ttx/trajectory.hpp"

namespace ttx {

class RunStore;

enum class Mode { ReAct, TTExplore, Reflexion, BestOfN };
enum class TriggerPolicy { Fixed, OnFailure };

std::string_view mode_name(Mode m);
std::optional<Mode> mode_from_name(std::string_view name);

struct RunConfig {
  Mode mode = Mode::TTExplore;
  Mode bon_inner = Mode::TTExplore;  // inner mode for BestOfN
  int n_trigger = 6;
  int max_steps = 50;
  int retries_N = 5;
  int samples_N = 5;
  double bon_temperature = 0.7;
  std::int64_t seed = 0;
  TriggerPolicy trigger_policy = TriggerPolicy::Fixed;
  std::size_t max_prompt_chars = 0;
  bool thinker_sees_thoughts = true;
  bool record_wall_time = true;
};

/// Throws ConfigError when invariants are violated.
void validate_run_config(const RunConfig& cfg, bool has_thinker);

struct Agents {
  PolicyHandle actor;
  std::optional<PolicyHandle> thinker;
};

Trajectory run_react(const PolicyHandle& actor, const TaskSpec& task, const RunConfig& cfg);
Trajectory run_ttexplore(const PolicyHandle& actor, const PolicyHandle& thinker, const TaskSpec& task,
                         const RunConfig& cfg);
Trajectory run_reflexion(const PolicyHandle& actor, const TaskSpec& task, const RunConfig& cfg);
/// `inner.mode` selects the per-sample runner; sample i uses seed inner.seed + i.
Trajectory run_best_of_n(const RunConfig& inner, const Agents& agents, const TaskSpec& task, int samples,
                         double temperature);
/// Dispatches on cfg.mode.
Trajectory run_episode(const Agents& agents, const TaskSpec& task, const RunConfig& cfg);

/// Index of the first maximum among eligible candidates; failed candidates
/// are eligible only when every candidate failed.
std::size_t select_best(const std::vector<double>& scores, const std::vector<bool>& failed = {});

/// Number of thinker invocations a Fixed-trigger episode that runs all its
/// steps makes: multiples of n strictly below max_steps.
std::size_t expected_trigger_count(int n_trigger, int max_steps);

struct ContinueOptions {
  std::size_t max_new_steps = 0;
  std::size_t step_limit = 0;              // absolute step cap for triggering; 0: start + max_new_steps
  const PolicyHandle* thinker = nullptr;   // enables periodic triggering
  std::optional<double> stop_above;        // stop as soon as the score exceeds this
  std::vector<std::string> reflections;
};

/// Runs the actor onward from the end of `traj`; `state` must be the world
/// state reached by `traj`'s steps. Both are updated in place.
void continue_episode(const PolicyHandle& actor, const TaskSpec& task, const RunConfig& cfg, Trajectory& traj,
                      WorldState& state, const ContinueOptions& options);

/// Trajectory rebuilt by replaying `actions` from reset.
std::pair<Trajectory, WorldState> replay_trajectory(const TaskSpec& task, std::int64_t seed,
                                                    const std::vector<std::string>& actions);

struct EpisodeSpec {
  const TaskSpec* task = nullptr;
  std::int64_t seed = 0;
};

struct EpisodeResult {
  std::string episode_id;
  Trajectory trajectory;
  std::optional<ExplorationMetrics> metrics;  // absent for zero-step episodes
  double wall_seconds = 0.0;
};

std::string episode_id(std::size_t index, const EpisodeSpec& spec);

/// Runs episodes on a bounded worker pool. Results keep input order; each
/// episode is persisted to `store` (when given) before it is reported.
std::vector<EpisodeResult> run_batch(const std::vector<EpisodeSpec>& episodes, const Agents& agents,
                                     const RunConfig& cfg, std::size_t parallelism, RunStore* store, int k = 3);

}  // namespace ttx
