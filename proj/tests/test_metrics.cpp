#include <algorithm>
#include <random>

#include "doctest.h"
#include "helpers.hpp"

using namespace ttx;

namespace {

Trajectory traj_of(const std::vector<std::string>& actions, std::vector<std::string> observations = {}) {
  Trajectory t;
  t.task_id = "T";
  if (observations.empty()) observations.assign(actions.size(), "obs");
  for (std::size_t i = 0; i < actions.size(); ++i) t.steps.push_back({actions[i], observations[i], 0.0, 0});
  return t;
}

// Brute-force references: quadratic distinct count, and the top-k sum taken
// from the multiset of counts alone (tie order cannot affect it).
double ref_diversity(const std::vector<std::string>& v) {
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    bool seen = false;
    for (std::size_t j = 0; j < i; ++j) seen = seen || v[j] == v[i];
    distinct += !seen;
  }
  return static_cast<double>(distinct) / static_cast<double>(v.size());
}

double ref_repetition(const std::vector<std::string>& v, int k) {
  std::vector<std::size_t> counts;
  std::vector<std::string> keys;
  for (const auto& x : v) {
    auto it = std::find(keys.begin(), keys.end(), x);
    if (it == keys.end()) {
      keys.push_back(x);
      counts.push_back(1);
    } else {
      ++counts[static_cast<std::size_t>(it - keys.begin())];
    }
  }
  std::sort(counts.rbegin(), counts.rend());
  std::size_t top = 0;
  for (std::size_t i = 0; i < counts.size() && i < static_cast<std::size_t>(k); ++i) top += counts[i];
  return static_cast<double>(top) / static_cast<double>(v.size());
}

EpisodeResult result_of(const std::string& task, double score, double wall, std::optional<ExplorationMetrics> m) {
  EpisodeResult r;
  r.trajectory.task_id = task;
  r.trajectory.final.process_score = score;
  r.trajectory.final.success = score == 100.0;
  r.wall_seconds = wall;
  r.metrics = m;
  return r;
}

}  // namespace

TEST_CASE("action diversity examples") {
  CHECK(action_diversity(traj_of({"a", "b", "c", "d"})) == 1.0);
  CHECK(action_diversity(traj_of({"a", "a", "a", "a"})) == 0.25);
  CHECK(action_diversity(traj_of({"a", "b", "a", "c", "a", "b"})) == 0.5);
}

TEST_CASE("action repetition examples") {
  CHECK(action_repetition(traj_of({"a", "a", "a", "a"}), 3) == 1.0);
  CHECK(action_repetition(traj_of({"a", "b", "c", "d"}), 3) == 0.75);
  CHECK(action_repetition(traj_of({"a", "b", "a", "c", "a", "b"}), 3) == 1.0);
  CHECK(action_repetition(traj_of({"a", "b", "a", "c", "a", "b"}), 1) == 0.5);
}

TEST_CASE("observation metrics") {
  const std::vector<std::string> acts{"x", "y", "z", "w", "v"};
  const auto rejected = traj_of(acts, std::vector<std::string>(5, "Nothing happened."));
  CHECK(observation_diversity(rejected) == doctest::Approx(1.0 / 5.0));
  CHECK(observation_repetition(rejected) == 1.0);
  const auto fresh = traj_of(acts, {"o1", "o2", "o3", "o4", "o5"});
  CHECK(observation_diversity(fresh) == 1.0);
}

TEST_CASE("comparison is on trimmed text") {
  CHECK(action_diversity(traj_of({"go to x", "  go to x\t", "go to x\n"})) == doctest::Approx(1.0 / 3.0));
  CHECK(action_diversity(traj_of({"go to x", "Go to x"})) == 1.0);
}

TEST_CASE("empty trajectories have no metrics") {
  const Trajectory empty;
  CHECK_THROWS_AS(action_diversity(empty), EmptyTrajectory);
  CHECK_THROWS_AS(action_repetition(empty), EmptyTrajectory);
  CHECK_THROWS_AS(observation_diversity(empty), EmptyTrajectory);
  CHECK_THROWS_AS(observation_repetition(empty), EmptyTrajectory);
  CHECK_THROWS_AS(compute_metrics(empty), EmptyTrajectory);
  CHECK_THROWS_AS(repetition({"a"}, 0), ContractError);
}

TEST_CASE("greedy-actor transcript on MiniHouse-1") {
  // By hand: it walks to the closed fridge, then retries the take for the
  // remaining 49 steps. Two distinct actions, two distinct observations.
  const auto traj =
      run_react(fixture::policy("greedy-actor"), fixture::task("MiniHouse-1"), fixture::config(Mode::ReAct));
  REQUIRE(traj.steps.size() == 50);
  CHECK(traj.steps[0].action == "go to fridge 1");
  CHECK(traj.steps[0].observation == "You arrive at fridge 1. The fridge 1 is closed.");
  for (std::size_t i = 1; i < 50; ++i) {
    CHECK(traj.steps[i].action == "take apple 1 from fridge 1");
    CHECK(traj.steps[i].observation == "Nothing happened.");
  }
  const auto m = compute_metrics(traj);
  CHECK(m.action_diversity == 2.0 / 50.0);
  CHECK(m.action_repetition == 1.0);
  CHECK(m.observation_diversity == 2.0 / 50.0);
  CHECK(m.observation_repetition == 1.0);
  CHECK(m.k == 3);
}

TEST_CASE("deep thoughts never enter the metrics") {
  auto t = traj_of({"a", "b", "a"}, {"o", "p", "o"});
  const auto before = compute_metrics(t);
  t.thoughts.push_back({"a", 1});
  t.thoughts.push_back({"think hard", 2});
  CHECK(compute_metrics(t) == before);
}

TEST_CASE("property: metrics agree with brute force and keep their bounds") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t len = 1 + rng() % 40;
    const std::size_t alphabet = 1 + rng() % 8;
    const int k = 1 + static_cast<int>(rng() % 5);
    std::vector<std::string> acts, obs;
    for (std::size_t i = 0; i < len; ++i) {
      acts.push_back("act " + std::to_string(rng() % alphabet));
      obs.push_back("obs " + std::to_string(rng() % alphabet));
    }
    const auto t = traj_of(acts, obs);
    const double d = action_diversity(t);
    const double r = action_repetition(t, k);
    CHECK(d == doctest::Approx(ref_diversity(acts)));
    CHECK(r == doctest::Approx(ref_repetition(acts, k)));
    CHECK(observation_diversity(t) == doctest::Approx(ref_diversity(obs)));
    CHECK(observation_repetition(t, k) == doctest::Approx(ref_repetition(obs, k)));
    CHECK(d > 0.0);
    CHECK(d <= 1.0);
    CHECK(r > 0.0);
    CHECK(r <= 1.0);
    if (len >= static_cast<std::size_t>(k)) CHECK(r >= static_cast<double>(k) / static_cast<double>(len) - 1e-12);
    const auto distinct = static_cast<std::size_t>(std::llround(d * static_cast<double>(len)));
    if (distinct <= static_cast<std::size_t>(k)) CHECK(r == 1.0);
    CHECK((d == 1.0) == (distinct == len));

    // appending a duplicate
    auto more = acts;
    more.push_back(acts[rng() % acts.size()]);
    const auto t2 = traj_of(more, std::vector<std::string>(more.size(), "o"));
    CHECK(action_diversity(t2) <= d);
    CHECK(action_repetition(t2, k) * static_cast<double>(more.size()) >= r * static_cast<double>(len) - 1e-9);
  }
}

TEST_CASE("aggregate examples") {
  SUBCASE("two episodes, one success") {
    const auto table = aggregate({result_of("A", 100.0, 1.0, std::nullopt), result_of("A", 0.0, 3.0, std::nullopt)});
    REQUIRE(table.rows.size() == 2);
    CHECK(table.rows[0].task_set == "A");
    CHECK(table.rows[1].task_set == "ALL");
    CHECK(table.rows[1].success_rate == 50.0);
    CHECK(table.rows[1].mean_process_score == 50.0);
    CHECK(table.rows[1].mean_wall_seconds == 2.0);
  }
  SUBCASE("a single episode aggregates to itself") {
    const ExplorationMetrics m{0.5, 0.75, 0.25, 1.0, 3};
    const auto table = aggregate({result_of("B", 66.67, 4.5, m)});
    const auto& row = table.rows.back();
    CHECK(row.episodes == 1);
    CHECK(row.success_rate == 0.0);
    CHECK(row.mean_process_score == 66.67);
    CHECK(row.mean_wall_seconds == 4.5);
    CHECK(row.mean_metrics == m);
  }
  SUBCASE("means round half-up to two decimals") {
    const auto table = aggregate({result_of("A", 33.33, 0, std::nullopt), result_of("B", 33.33, 0, std::nullopt),
                                  result_of("B", 33.34, 0, std::nullopt)});
    CHECK(table.rows.size() == 3);
    CHECK(table.rows[1].mean_process_score == 33.34);  // 33.335
    CHECK(table.rows[2].mean_process_score == 33.33);  // 33.3333
    CHECK(table.rows[2].success_rate == 0.0);
  }
  SUBCASE("per-task rows keep first-seen order") {
    const auto table = aggregate({result_of("Z", 0, 0, std::nullopt), result_of("A", 0, 0, std::nullopt),
                                  result_of("Z", 100, 0, std::nullopt)});
    CHECK(table.rows[0].task_set == "Z");
    CHECK(table.rows[1].task_set == "A");
    CHECK(table.rows[0].success_rate == 50.0);
    CHECK(table.rows[2].success_rate == 33.33);
  }
  CHECK_THROWS_AS(aggregate({}), ContractError);
}

TEST_CASE("aggregate of a deterministic batch is reproducible byte for byte") {
  std::vector<EpisodeSpec> eps;
  for (const char* id : {"MiniHouse-1", "MiniHouse-2", "KeyMaze-1"})
    for (std::int64_t s = 0; s < 3; ++s) eps.push_back({&fixture::task(id), s});
  const Agents agents{fixture::policy("greedy-actor"), fixture::thinker("oracle-thinker")};
  const auto a = aggregate(run_batch(eps, agents, fixture::config(Mode::TTExplore), 3, nullptr));
  const auto b = aggregate(run_batch(eps, agents, fixture::config(Mode::TTExplore), 1, nullptr));
  CHECK(a.to_jsonl() == b.to_jsonl());
  CHECK(a.to_text() == b.to_text());
  CHECK(a.rows.size() == 4);
}

TEST_CASE("hand-enumerated corpus") {
  const auto doc = nlohmann::json::parse(read_file(fixture::path("fixtures/metrics_corpus.json")));
  REQUIRE(doc["trajectories"].size() == 9);
  for (const auto& c : doc["trajectories"]) {
    CAPTURE(c["name"].get<std::string>());
    const auto t = traj_of(c["actions"].get<std::vector<std::string>>(), c["observations"].get<std::vector<std::string>>());
    const auto m = compute_metrics(t, c["k"].get<int>());
    auto frac = [&](const char* key) {
      return c["expected"][key][0].get<double>() / c["expected"][key][1].get<double>();
    };
    CHECK(std::abs(m.action_diversity - frac("action_diversity")) < 1e-9);
    CHECK(std::abs(m.action_repetition - frac("action_repetition")) < 1e-9);
    CHECK(std::abs(m.observation_diversity - frac("observation_diversity")) < 1e-9);
    CHECK(std::abs(m.observation_repetition - frac("observation_repetition")) < 1e-9);
  }
}
