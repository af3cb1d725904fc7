#include "ttx/run_store.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace ttx {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

ordered_json transcript_line(std::size_t step_no, const TrajectoryStep& s, bool done) {
  return {{"step", step_no}, {"action", s.action}, {"observation", s.observation}, {"score", s.score_after},
          {"done", done}};
}

std::string transcript_text(const Trajectory& traj) {
  std::string out;
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const bool done = traj.steps[i].score_after >= 100.0;
    out += transcript_line(i + 1, traj.steps[i], done).dump() + "\n";
  }
  return out;
}

ordered_json episode_meta(const EpisodeResult& r, const std::string& env_name) {
  const auto& t = r.trajectory;
  ordered_json j;
  j["episode_id"] = r.episode_id;
  j["task_id"] = t.task_id;
  j["env"] = env_name;
  j["seed"] = t.seed;
  j["mode"] = t.mode;
  j["initial_observation"] = t.initial_observation;
  j["initial_score"] = t.initial_score;
  j["thoughts"] = ordered_json::array();
  for (const auto& d : t.thoughts) j["thoughts"].push_back({{"anchor_step", d.anchor_step}, {"text", d.text}});
  j["thinker_calls"] = t.thinker_calls;
  j["final"] = {{"success", t.final.success},
                {"process_score", t.final.process_score},
                {"steps_used", t.final.steps_used},
                {"wall_ms_total", t.final.wall_ms_total}};
  std::vector<std::int64_t> wall;
  for (const auto& s : t.steps) wall.push_back(s.wall_ms);
  j["step_wall_ms"] = wall;
  j["wall_seconds"] = r.wall_seconds;
  j["incidents"] = ordered_json::array();
  for (const auto& i : t.incidents)
    j["incidents"].push_back({{"step", i.step}, {"kind", i.kind}, {"detail", i.detail}});
  j["error"] = t.error ? ordered_json(*t.error) : ordered_json(nullptr);
  j["candidate_scores"] = t.candidate_scores;
  j["selected_candidate"] = t.selected_candidate ? ordered_json(*t.selected_candidate) : ordered_json(nullptr);
  j["reflections"] = t.reflections;
  j["metrics"] = r.metrics ? to_json(*r.metrics) : ordered_json(nullptr);
  return j;
}

void write_new_file(const fs::path& path, const std::string& content) {
  if (fs::exists(path)) throw IoError("refusing to overwrite " + path.string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path.string());
  out << content;
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunStore RunStore::create(const fs::path& dir) {
  if (fs::exists(dir)) throw IoError("run store " + dir.string() + " already exists");
  std::error_code ec;
  fs::create_directories(dir / "episodes", ec);
  if (ec) throw IoError("cannot create run store " + dir.string() + ": " + ec.message());
  return RunStore(dir);
}

void RunStore::write_episode(const EpisodeResult& r, const std::string& env_name) {
  std::lock_guard lock(*mutex_);
  write_new_file(dir_ / "episodes" / (r.episode_id + ".jsonl"), transcript_text(r.trajectory));
  write_new_file(dir_ / "episodes" / (r.episode_id + ".meta.json"), episode_meta(r, env_name).dump(2) + "\n");
}

void RunStore::write_manifest(const ordered_json& manifest) {
  std::lock_guard lock(*mutex_);
  write_new_file(dir_ / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<std::string> list_episodes(const fs::path& batch_dir) {
  std::vector<std::string> ids;
  const auto dir = batch_dir / "episodes";
  if (!fs::is_directory(dir)) return ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    const std::string_view suffix = ".meta.json";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

StoredEpisode load_episode(const fs::path& batch_dir, const std::string& id) {
  const auto meta_path = batch_dir / "episodes" / (id + ".meta.json");
  const auto transcript_path = batch_dir / "episodes" / (id + ".jsonl");
  if (!fs::exists(meta_path)) throw IoError("no episode '" + id + "' in " + batch_dir.string());
  StoredEpisode out;
  out.episode_id = id;
  try {
    out.meta = json::parse(read_file(meta_path));
  } catch (const json::exception& e) {
    throw IntegrityError(meta_path.string() + ": " + e.what());
  }
  auto& t = out.trajectory;
  try {
    out.env_name = out.meta.at("env").get<std::string>();
    t.task_id = out.meta.at("task_id").get<std::string>();
    t.seed = out.meta.at("seed").get<std::int64_t>();
    t.mode = out.meta.at("mode").get<std::string>();
    t.initial_observation = out.meta.at("initial_observation").get<std::string>();
    t.initial_score = out.meta.value("initial_score", 0.0);
    for (const auto& d : out.meta.at("thoughts"))
      t.thoughts.push_back({d.at("text").get<std::string>(), d.at("anchor_step").get<std::size_t>()});
    t.thinker_calls = out.meta.value("thinker_calls", std::size_t{0});
  } catch (const json::exception& e) {
    throw IntegrityError(meta_path.string() + ": " + e.what());
  }

  std::istringstream lines(read_file(transcript_path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      if (j.at("step").get<std::size_t>() != t.steps.size() + 1)
        throw IntegrityError("step numbers are not consecutive");
      TrajectoryStep s{j.at("action").get<std::string>(), j.at("observation").get<std::string>(),
                       j.at("score").get<double>(), 0};
      t.steps.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw IntegrityError(transcript_path.string() + ":" + std::to_string(line_no) + ": corrupt transcript line (" +
                           e.what() + ")");
    }
  }
  const auto wall = out.meta.value("step_wall_ms", std::vector<std::int64_t>{});
  for (std::size_t i = 0; i < t.steps.size() && i < wall.size(); ++i) t.steps[i].wall_ms = wall[i];
  t.final.process_score = t.current_score();
  t.final.success = t.final.process_score >= 100.0;
  t.final.steps_used = t.steps.size();
  return out;
}

json load_manifest(const fs::path& batch_dir) {
  try {
    return json::parse(read_file(batch_dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IntegrityError((batch_dir / "manifest.json").string() + ": " + e.what());
  }
}

}  // namespace ttx
