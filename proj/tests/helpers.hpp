#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <unistd.h>

#include "ttx/config.hpp"
#include "ttx/env.hpp"
#include "ttx/orchestrator.hpp"
#include "ttx/run_store.hpp"
#include "ttx/scripted.hpp"

namespace fixture {

inline std::filesystem::path root() { return TTX_SOURCE_DIR; }
inline std::filesystem::path path(const std::string& rel) { return root() / rel; }

inline const ttx::TaskSpec& task(const std::string& id) {
  static const auto tasks = [] {
    std::vector<ttx::TaskSpec> all;
    for (const char* f : {"fixtures/envs/minihouse-1.json", "fixtures/envs/minihouse-2.json",
                          "fixtures/envs/keymaze-1.json"})
      for (auto& t : ttx::load_environment_file(path(f))) all.push_back(std::move(t));
    return all;
  }();
  for (const auto& t : tasks)
    if (t.id == id) return t;
  throw std::runtime_error("no fixture task " + id);
}

inline std::shared_ptr<const ttx::ScriptedFixtures> tables() {
  static const auto f =
      std::make_shared<const ttx::ScriptedFixtures>(ttx::load_scripted_fixtures(path("fixtures/scripted.json")));
  return f;
}

inline ttx::PolicyHandle policy(const std::string& name, ttx::Role role = ttx::Role::Actor,
                                double temperature = 0.0) {
  ttx::PolicySpec spec;
  spec.role = role;
  spec.backend = ttx::ScriptedRef{name};
  spec.decode.temperature = temperature;
  return ttx::make_policy(spec, tables());
}

inline ttx::PolicyHandle thinker(const std::string& name, double temperature = 0.0) {
  return policy(name, ttx::Role::Thinker, temperature);
}

inline ttx::RunConfig config(ttx::Mode mode, std::int64_t seed = 0) {
  ttx::RunConfig c;
  c.mode = mode;
  c.seed = seed;
  c.record_wall_time = false;
  return c;
}

// Fresh scratch directory under the build tree, removed on destruction.
struct ScratchDir {
  std::filesystem::path dir;
  explicit ScratchDir(const std::string& name)
      : dir(std::filesystem::temp_directory_path() / ("ttx-test-" + name + "-" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
  }
  ~ScratchDir() { std::filesystem::remove_all(dir); }
};

}  // namespace fixture
