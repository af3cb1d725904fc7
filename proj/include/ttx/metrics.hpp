#pragma once

// Exploration metrics over a trajectory's action and observation texts.
// Length is the number of environment steps, rejected ones included.
// Deep thoughts never enter either sequence.

#include <string>
#include <vector>

#include "json.hpp"
#include "ttx/common.hpp"
#include "ttx/trajectory.hpp"

namespace ttx {

class EmptyTrajectory : public Error {
 public:
  EmptyTrajectory() : Error("metrics undefined for an empty trajectory") {}
};

struct ExplorationMetrics {
  double action_diversity = 0.0;
  double action_repetition = 0.0;
  double observation_diversity = 0.0;
  double observation_repetition = 0.0;
  int k = 3;

  bool operator==(const ExplorationMetrics&) const = default;
};

/// distinct / length over trimmed strings.
double diversity(const std::vector<std::string>& values);
/// (sum of counts of the k most frequent values) / length. Ties at the k-th
/// rank are broken lexicographically, which does not change the sum.
double repetition(const std::vector<std::string>& values, int k = 3);

double action_diversity(const Trajectory& traj);
double action_repetition(const Trajectory& traj, int k = 3);
double observation_diversity(const Trajectory& traj);
double observation_repetition(const Trajectory& traj, int k = 3);

ExplorationMetrics compute_metrics(const Trajectory& traj, int k = 3);

struct EpisodeResult;

struct SummaryRow {
  std::string task_set;  // task id, or "ALL"
  std::size_t episodes = 0;
  double success_rate = 0.0;        // percent
  double mean_process_score = 0.0;
  double mean_wall_seconds = 0.0;
  ExplorationMetrics mean_metrics;  // over episodes that have metrics

  bool operator==(const SummaryRow&) const = default;
};

struct SummaryTable {
  std::vector<SummaryRow> rows;  // per task in first-seen order, then ALL

  std::string to_jsonl() const;
  std::string to_text() const;
};

nlohmann::ordered_json to_json(const ExplorationMetrics& m);
nlohmann::ordered_json to_json(const SummaryRow& row);

/// Means are arithmetic and rounded half-up to two decimals.
SummaryTable aggregate(const std::vector<EpisodeResult>& results);

}  // namespace ttx
