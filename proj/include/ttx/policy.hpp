#pragma once

// Prompt rendering, tagged-output parsing and policy backends.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ttx/common.hpp"
#include "ttx/env.hpp"

namespace ttx {

enum class Role { Actor, Thinker };

std::string_view role_name(Role r);

/// A thinker output anchored after step `anchor_step` of its trajectory.
struct DeepThought {
  std::string text;
  std::size_t anchor_step = 0;

  bool operator==(const DeepThought&) const = default;
};

struct HistoryStep {
  std::string action;
  std::string observation;
};

/// What a prompt renderer needs to know about a trajectory so far.
struct HistoryView {
  std::string task_id;
  std::string initial_observation;
  std::vector<HistoryStep> steps;     // step i+1 is steps[i]
  std::vector<DeepThought> thoughts;  // anchor_step strictly increasing
};

struct PromptOptions {
  std::size_t max_chars = 0;          // 0: unlimited
  bool include_thoughts = true;       // thinker prompt only
  std::vector<std::string> reflections;  // actor prompt only (Reflexion)
};

std::string render_actor_prompt(const TaskSpec& task, const HistoryView& history,
                                const PromptOptions& options = {});
std::string render_thinker_prompt(const TaskSpec& task, const HistoryView& history,
                                  const PromptOptions& options = {});
/// Asks the actor backend to reflect on a failed attempt.
std::string render_reflection_prompt(const TaskSpec& task, const HistoryView& history,
                                     double final_score);

/// Which template a rendered prompt came from, recovered from its text.
enum class PromptKind { Actor, Thinker, Reflection, Unknown };

/// Structured content recovered from a rendered prompt. Scripted policies
/// work from this, so they see exactly what a remote model would.
struct PromptDigest {
  PromptKind kind = PromptKind::Unknown;
  std::string instruction;
  std::vector<std::pair<std::size_t, HistoryStep>> steps;  // (step number, step)
  std::vector<DeepThought> thoughts;
};

PromptDigest read_prompt(std::string_view prompt);

// --- output parsing --------------------------------------------------------

enum class ParseErrorKind {
  MissingAnswer,
  EmptyAction,
  MissingThought,
  MalformedAction,
  MissingDeepthink,
  EmptyDeepthink,
};

std::string_view parse_error_name(ParseErrorKind k);

class ParseError : public Error {
 public:
  explicit ParseError(ParseErrorKind kind)
      : Error("parse error: " + std::string(parse_error_name(kind))), kind_(kind) {}
  ParseErrorKind kind() const noexcept { return kind_; }

 private:
  ParseErrorKind kind_;
};

struct ActorOutput {
  std::string thought;
  std::string action;

  bool operator==(const ActorOutput&) const = default;
};

ActorOutput parse_actor_output(std::string_view raw);
/// Canonical "<think>..</think>\n<answer>..</answer>" form.
std::string format_actor_output(const ActorOutput& out);

std::string parse_thinker_output(std::string_view raw);
std::string format_thinker_output(std::string_view thought);

/// Content of the first <reflection> block, or the trimmed raw text.
std::string parse_reflection(std::string_view raw);

/// Lines of a deep thought's "Plan:" section ("- action" items).
std::vector<std::string> plan_lines(std::string_view thought);

// --- backends --------------------------------------------------------------

struct DecodeParams {
  double temperature = 0.0;
  int max_output_tokens = 512;
};

struct RemoteEndpoint {
  std::string url;          // e.g. http://localhost:8000/v1/chat/completions
  std::string model;
  std::string api_key_env;  // name of the environment variable holding the key
  int max_concurrent = 4;
  int max_attempts = 3;
  int backoff_ms = 500;
  int timeout_s = 120;
};

struct ScriptedRef {
  std::string name;
};

struct PolicySpec {
  Role role = Role::Actor;
  std::variant<ScriptedRef, RemoteEndpoint> backend;
  DecodeParams decode;
  bool trainable = false;
};

/// Backend failure after retries. Carries retry metadata.
class RemoteError : public Error {
 public:
  RemoteError(const std::string& what, int attempts, int status, bool retryable)
      : Error(what), attempts_(attempts), status_(status), retryable_(retryable) {}
  int attempts() const noexcept { return attempts_; }
  int status() const noexcept { return status_; }
  bool retryable() const noexcept { return retryable_; }

 private:
  int attempts_;
  int status_;
  bool retryable_;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(std::string_view prompt, const DecodeParams& decode, std::uint64_t seed) = 0;
  virtual std::string describe() const = 0;
};

struct PolicyHandle {
  PolicySpec spec;
  std::shared_ptr<Backend> backend;

  Role role() const { return spec.role; }
};

/// One completion. Scripted backends are pure in (prompt, seed); remote
/// backends make a single chat-completion call (with transport retries)
/// and give no determinism guarantee even at temperature 0.
std::string complete(const PolicyHandle& policy, std::string_view prompt, std::uint64_t seed);

}  // namespace ttx
