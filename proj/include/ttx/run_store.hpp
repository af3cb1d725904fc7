#pragma once

// On-disk run store. One directory per batch:
//
//   <batch>/manifest.json
//   <batch>/episodes/<episode_id>.jsonl      one line per step:
//                                           {step, action, observation, score, done}
//   <batch>/episodes/<episode_id>.meta.json  task, seed, thoughts, final, metrics ...
//
// A store directory is created once and never rewritten.

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "ttx/orchestrator.hpp"

namespace ttx {

nlohmann::ordered_json transcript_line(std::size_t step_no, const TrajectoryStep& s, bool done);
std::string transcript_text(const Trajectory& traj);
nlohmann::ordered_json episode_meta(const EpisodeResult& r, const std::string& env_name);

/// Writes `content` to a new file (fails if it exists) and flushes it.
void write_new_file(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

class RunStore {
 public:
  /// Creates `dir` (must not exist yet) with an episodes/ subdirectory.
  static RunStore create(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const { return dir_; }
  void write_episode(const EpisodeResult& r, const std::string& env_name);
  void write_manifest(const nlohmann::ordered_json& manifest);

 private:
  explicit RunStore(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::filesystem::path dir_;
  std::shared_ptr<std::mutex> mutex_ = std::make_shared<std::mutex>();
};

struct StoredEpisode {
  std::string episode_id;
  std::string env_name;
  Trajectory trajectory;
  nlohmann::json meta;
};

/// Episode ids in the store, sorted.
std::vector<std::string> list_episodes(const std::filesystem::path& batch_dir);

/// Reads an episode back. Corrupt transcript lines raise IntegrityError
/// naming the file and line number.
StoredEpisode load_episode(const std::filesystem::path& batch_dir, const std::string& episode_id);

nlohmann::json load_manifest(const std::filesystem::path& batch_dir);

}  // namespace ttx
