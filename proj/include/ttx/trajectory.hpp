#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ttx/policy.hpp"

namespace ttx {

struct TrajectoryStep {
  std::string action;
  std::string observation;
  double score_after = 0.0;
  std::int64_t wall_ms = 0;

  bool operator==(const TrajectoryStep&) const = default;
};

struct TrajectoryFinal {
  bool success = false;
  double process_score = 0.0;
  std::size_t steps_used = 0;
  std::int64_t wall_ms_total = 0;

  bool operator==(const TrajectoryFinal&) const = default;
};

/// Something the runner tolerated instead of failing (parse retries, no-op
/// substitution, dropped thinker output).
struct Incident {
  std::size_t step = 0;
  std::string kind;
  std::string detail;

  bool operator==(const Incident&) const = default;
};

struct Trajectory {
  std::string task_id;
  std::int64_t seed = 0;
  std::string mode;
  std::string initial_observation;
  double initial_score = 0.0;
  std::vector<TrajectoryStep> steps;
  std::vector<DeepThought> thoughts;
  std::size_t thinker_calls = 0;
  TrajectoryFinal final;
  std::vector<Incident> incidents;
  std::optional<std::string> error;  // set when a backend failure aborted the episode

  // Reflexion / Best-of-N bookkeeping.
  std::vector<double> candidate_scores;
  std::optional<std::size_t> selected_candidate;
  std::vector<std::string> reflections;

  bool operator==(const Trajectory&) const = default;

  std::vector<std::string> actions() const;
  std::vector<std::string> observations() const;
  /// History up to and including step `upto` (all steps by default).
  HistoryView view(std::optional<std::size_t> upto = std::nullopt, bool with_thoughts = true) const;
  double current_score() const { return steps.empty() ? initial_score : steps.back().score_after; }
};

}  // namespace ttx
