#pragma once

// Experiment configuration: one JSON file, paths relative to the file's
// directory, unknown keys rejected.
//
//   {
//     "env_files": ["envs/minihouse-1.json"],
//     "scripted_fixtures": "scripted.json",
//     "tasks": [],                      // empty: every task in env_files
//     "seeds": [0, 1, 2],
//     "actor":   {"scripted": "greedy-actor"},
//     "thinker": {"remote": {"url": "...", "model": "...", "api_key_env": "KEY"},
//                 "temperature": 0.7},
//     "weak": ..., "strong": ...,
//     "run": {...}, "pipeline": {...},
//     "store_dir": "runs", "parallelism": 1, "k": 3
//   }

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ttx/orchestrator.hpp"
#include "ttx/pipeline.hpp"
#include "ttx/scripted.hpp"

namespace ttx {

struct ExperimentConfig {
  std::filesystem::path base_dir;  // relative paths resolve against this
  std::vector<std::string> env_files;
  std::string scripted_fixtures;
  std::vector<std::string> tasks;
  std::vector<std::int64_t> seeds{0};
  std::optional<PolicySpec> actor;
  std::optional<PolicySpec> thinker;
  std::optional<PolicySpec> weak;
  std::optional<PolicySpec> strong;
  RunConfig run;
  PipelineConfig pipeline;
  std::string store_dir = "runs";
  std::size_t parallelism = 1;
  int k = 3;

  std::filesystem::path resolve(const std::string& p) const;
};

/// Throws ConfigError naming the offending key.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Fully resolved config; paths are rewritten relative to `relative_to`.
nlohmann::ordered_json to_json(const ExperimentConfig& cfg, const std::filesystem::path& relative_to);

nlohmann::ordered_json to_json(const PolicySpec& spec);
PolicySpec parse_policy_spec(const nlohmann::json& j, Role role, const std::string& key);

/// Everything a command needs, loaded and checked up front.
struct Experiment {
  ExperimentConfig cfg;
  std::vector<TaskSpec> all_tasks;  // every task in env_files, file order
  std::vector<std::size_t> selected;  // indices into all_tasks
  std::map<std::string, std::string> env_digests;  // env name -> content digest
  std::shared_ptr<const ScriptedFixtures> fixtures;

  const TaskSpec& task(const std::string& id) const;
  std::vector<EpisodeSpec> episodes() const;  // selected tasks x seeds
  PolicyHandle policy(const std::optional<PolicySpec>& spec, const char* key) const;
};

/// Loads env files and fixtures and checks task selectors.
Experiment load_experiment(ExperimentConfig cfg);

/// Hex digest of a file's bytes (FNV-1a), used to notice edited env files.
std::string file_digest(const std::filesystem::path& path);

}  // namespace ttx
