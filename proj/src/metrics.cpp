#include "ttx/metrics.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "ttx/orchestrator.hpp"

namespace ttx {

namespace {

std::map<std::string, std::size_t> counts(const std::vector<std::string>& values) {
  std::map<std::string, std::size_t> c;
  for (const auto& v : values) ++c[std::string(trim(v))];
  return c;
}

}  // namespace

double diversity(const std::vector<std::string>& values) {
  if (values.empty()) throw EmptyTrajectory();
  return static_cast<double>(counts(values).size()) / static_cast<double>(values.size());
}

double repetition(const std::vector<std::string>& values, int k) {
  if (values.empty()) throw EmptyTrajectory();
  if (k < 1) throw ContractError("repetition requires k >= 1");
  const auto c = counts(values);
  std::vector<std::pair<std::string, std::size_t>> ranked(c.begin(), c.end());
  // Descending count; lexicographic text among equal counts.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::size_t top = 0;
  for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(k); ++i) top += ranked[i].second;
  return static_cast<double>(top) / static_cast<double>(values.size());
}

double action_diversity(const Trajectory& traj) { return diversity(traj.actions()); }
double action_repetition(const Trajectory& traj, int k) { return repetition(traj.actions(), k); }
double observation_diversity(const Trajectory& traj) { return diversity(traj.observations()); }
double observation_repetition(const Trajectory& traj, int k) { return repetition(traj.observations(), k); }

ExplorationMetrics compute_metrics(const Trajectory& traj, int k) {
  const auto a = traj.actions();
  const auto o = traj.observations();
  return {diversity(a), repetition(a, k), diversity(o), repetition(o, k), k};
}

nlohmann::ordered_json to_json(const ExplorationMetrics& m) {
  return {{"action_diversity", m.action_diversity},
          {"action_repetition", m.action_repetition},
          {"observation_diversity", m.observation_diversity},
          {"observation_repetition", m.observation_repetition},
          {"k", m.k}};
}

nlohmann::ordered_json to_json(const SummaryRow& r) {
  return {{"task_set", r.task_set},
          {"episodes", r.episodes},
          {"success_rate", r.success_rate},
          {"mean_process_score", r.mean_process_score},
          {"mean_wall_seconds", r.mean_wall_seconds},
          {"mean_metrics", to_json(r.mean_metrics)}};
}

namespace {

SummaryRow summarize(const std::string& name, const std::vector<const EpisodeResult*>& group) {
  SummaryRow row;
  row.task_set = name;
  row.episodes = group.size();
  double success = 0, score = 0, wall = 0;
  ExplorationMetrics sum;
  std::size_t with_metrics = 0;
  for (const auto* r : group) {
    success += r->trajectory.final.success ? 1.0 : 0.0;
    score += r->trajectory.final.process_score;
    wall += r->wall_seconds;
    if (r->metrics) {
      ++with_metrics;
      sum.action_diversity += r->metrics->action_diversity;
      sum.action_repetition += r->metrics->action_repetition;
      sum.observation_diversity += r->metrics->observation_diversity;
      sum.observation_repetition += r->metrics->observation_repetition;
      sum.k = r->metrics->k;
    }
  }
  const double n = static_cast<double>(group.size());
  row.success_rate = round2(100.0 * success / n);
  row.mean_process_score = round2(score / n);
  row.mean_wall_seconds = round2(wall / n);
  if (with_metrics > 0) {
    const double m = static_cast<double>(with_metrics);
    row.mean_metrics = {round2(sum.action_diversity / m), round2(sum.action_repetition / m),
                        round2(sum.observation_diversity / m), round2(sum.observation_repetition / m), sum.k};
  }
  return row;
}

}  // namespace

SummaryTable aggregate(const std::vector<EpisodeResult>& results) {
  if (results.empty()) throw ContractError("aggregate requires at least one episode");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EpisodeResult*>> groups;
  std::vector<const EpisodeResult*> all;
  for (const auto& r : results) {
    auto& g = groups[r.trajectory.task_id];
    if (g.empty()) order.push_back(r.trajectory.task_id);
    g.push_back(&r);
    all.push_back(&r);
  }
  SummaryTable t;
  for (const auto& name : order) t.rows.push_back(summarize(name, groups[name]));
  t.rows.push_back(summarize("ALL", all));
  return t;
}

std::string SummaryTable::to_jsonl() const {
  std::string out;
  for (const auto& r : rows) out += to_json(r).dump() + "\n";
  return out;
}

std::string SummaryTable::to_text() const {
  std::size_t name_w = 8;
  for (const auto& r : rows) name_w = std::max(name_w, r.task_set.size());
  std::ostringstream os;
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.insert(0, w - s.size(), ' ');
    return s;
  };
  std::string header = "task_set";
  header.resize(name_w, ' ');
  os << header << pad("episodes", 10) << pad("succ%", 9) << pad("proc", 9) << pad("wall_s", 9)
     << pad("act_div", 9) << pad("act_rep", 9) << pad("obs_div", 9) << pad("obs_rep", 9) << "\n";
  for (const auto& r : rows) {
    std::string name = r.task_set;
    name.resize(name_w, ' ');
    os << name << pad(std::to_string(r.episodes), 10) << pad(format_fixed2(r.success_rate), 9)
       << pad(format_fixed2(r.mean_process_score), 9) << pad(format_fixed2(r.mean_wall_seconds), 9)
       << pad(format_fixed2(r.mean_metrics.action_diversity), 9)
       << pad(format_fixed2(r.mean_metrics.action_repetition), 9)
       << pad(format_fixed2(r.mean_metrics.observation_diversity), 9)
       << pad(format_fixed2(r.mean_metrics.observation_repetition), 9) << "\n";
  }
  return os.str();
}

}  // namespace ttx
