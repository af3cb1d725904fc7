#pragma once

// Thinker training-data factory: split strong trajectories into sub-tasks at
// process-score milestones, grade them with a weak policy, build rollout
// contexts, sample m thoughts per context, score each thought by what a
// frozen actor does with it, and export the results.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ttx/orchestrator.hpp"

namespace ttx {

enum class Difficulty { Unset, Easy, Medium, Hard };
enum class RewardMode { Binary, StepPenalty };
enum class CompletionRule { AnyImprovement, ReachTarget };
enum class ShortWeakPolicy { RepeatLast, Error };

std::string_view difficulty_name(Difficulty d);
std::string_view reward_mode_name(RewardMode m);

struct PipelineConfig {
  int x = 5;
  int y = 15;
  int m = 4;
  RewardMode reward_mode = RewardMode::Binary;
  double penalty_rate = 0.05;
  int nodes_per_trajectory = 1;
  int rollout_max_steps = 25;
  CompletionRule completion = CompletionRule::AnyImprovement;
  ShortWeakPolicy pad_short_weak = ShortWeakPolicy::RepeatLast;
  int sample_retry_budget = 2;
  double sample_temperature = 1.0;
  std::size_t parallelism = 1;
};

void validate_pipeline_config(const PipelineConfig& cfg);

struct SubTask {
  std::string parent_task_id;
  std::int64_t seed = 0;
  std::vector<std::string> prefix_actions;
  double start_score = 0.0;
  double target_score = 0.0;
  Difficulty difficulty = Difficulty::Unset;
  std::vector<std::string> weak_traj;  // actions of the weak rollout kept from classification
  std::optional<std::vector<std::string>> weak_prefix;
};

/// One sub-task per strict score increase. Sub-task j starts at the
/// milestone reached by increase j-1 (the very start for j = 1) and targets
/// the score after increase j.
std::vector<SubTask> divide_subtasks(const TaskSpec& task, const Trajectory& strong);

struct Classification {
  Difficulty difficulty = Difficulty::Unset;
  Trajectory weak_traj;                         // prefix + weak steps
  std::optional<std::size_t> completion_step;   // 1-based within the weak steps
};

Classification classify_difficulty(const SubTask& sub, const TaskSpec& task, const PolicyHandle& weak,
                                   const PipelineConfig& cfg, const RunConfig& run = {});

/// Drops Easy sub-tasks; throws ContractError on unclassified input.
std::vector<SubTask> filter_subtasks(const std::vector<SubTask>& subs);

struct RolloutContext {
  std::string context_id;
  std::string prompt;
  WorldState state;
  Trajectory history;  // prefix + weak prefix, observations from replay
};

/// Sets sub.weak_prefix; replays prefix ++ weak_prefix and renders the
/// thinker prompt over it.
RolloutContext build_rollout_context(SubTask& sub, const TaskSpec& task, const PipelineConfig& cfg,
                                     const RunConfig& run = {});

/// m parsed thoughts anchored at the context boundary, or nullopt when some
/// sample keeps failing to parse (the group is discarded, never padded).
std::optional<std::vector<DeepThought>> sample_thoughts(const PolicyHandle& thinker, const RolloutContext& context,
                                                        int m, std::uint64_t seed, int retry_budget = 2);

struct RewardRecord {
  std::string context_id;
  DeepThought thought;
  std::vector<TrajectoryStep> continuation;
  std::optional<std::size_t> first_improvement;  // 1-based continuation step
  double reward = 0.0;
  std::optional<std::string> error;
};

/// Binary: 1 on improvement, else 0. StepPenalty: max(0, 1 - rate * (t - 1))
/// for first improvement at step t, else 0.
double compute_reward(RewardMode mode, double rate, std::optional<std::size_t> first_improvement);

RewardRecord evaluate_thought(const PolicyHandle& actor_frozen, const SubTask& sub, const TaskSpec& task,
                              const RolloutContext& context, const DeepThought& thought, const PipelineConfig& cfg,
                              const RunConfig& run = {});

struct RolloutGroup {
  std::string context_id;
  std::string prompt;
  std::vector<RewardRecord> records;
  nlohmann::ordered_json meta;
};

std::string grpo_jsonl(const std::vector<RolloutGroup>& groups);
void export_grpo(const std::vector<RolloutGroup>& groups, const std::filesystem::path& path);

using TaskLookup = std::function<const TaskSpec&(const std::string& task_id)>;

/// One {prompt, completion} record per deep thought; the prompt is the
/// thinker prompt re-rendered at the thought's anchor.
std::string sft_jsonl(const std::vector<Trajectory>& trajectories, const TaskLookup& tasks,
                      const PromptOptions& options = {});
void export_sft(const std::vector<Trajectory>& trajectories, const TaskLookup& tasks,
                const std::filesystem::path& path, const PromptOptions& options = {});

// --- multi-node rollouts ---------------------------------------------------

struct ThinkingNode {
  std::size_t anchor_step = 0;
  std::string prompt;
  std::string thought;
};

struct MultiNodeRollout {
  std::size_t sample_index = 0;
  std::vector<ThinkingNode> nodes;
  double reward = 0.0;  // shared by every node
  Trajectory trajectory;
};

/// Trigger interval used for a node count: 2 -> 9, 4 -> 6.
int node_trigger_interval(int nodes);

struct PipelineAgents {
  PolicyHandle strong;
  PolicyHandle weak;
  PolicyHandle thinker;
  PolicyHandle actor;  // frozen
};

// --- end to end ------------------------------------------------------------

struct ForgeResult {
  std::vector<SubTask> subtasks;  // all, classified
  std::vector<RolloutGroup> groups;
  std::vector<std::pair<std::string, std::string>> skipped;  // (context or task, reason)
  std::vector<Trajectory> sft_trajectories;
  std::vector<std::string> warnings;
  nlohmann::ordered_json manifest;
};

/// Strong episodes -> divide -> classify -> filter -> contexts -> sample ->
/// rewards, plus TTExplore episodes for SFT data. Stage failures are
/// rethrown as Error("<stage>: ...").
ForgeResult run_forge(const std::vector<EpisodeSpec>& episodes, const PipelineAgents& agents,
                      const PipelineConfig& cfg, const RunConfig& run);

/// Multi-node rollouts for the nodes-per-trajectory ablation; node count 1
/// runs the standard single-node path.
std::vector<MultiNodeRollout> build_multinode_contexts(const TaskSpec& task, const PipelineAgents& agents,
                                                       const PipelineConfig& cfg, const RunConfig& run);

}  // namespace ttx
