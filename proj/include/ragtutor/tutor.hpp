#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragtutor/catalog.hpp"
#include "ragtutor/embeddings.hpp"
#include "ragtutor/generation.hpp"
#include "ragtutor/index.hpp"
#include "ragtutor/progress.hpp"

namespace ragtutor::tutor {

enum class Mode { quick, deep_understanding, exam_coach };

std::string_view to_string(Mode mode);
/// Throws InvalidArgument.
Mode parse_mode(std::string_view name);

inline constexpr std::string_view kGroundingInstruction =
    "Answer only from the provided context; if absent, say you don't know.";
inline constexpr std::string_view kQuickDirective = "Answer directly and concisely.";
inline constexpr std::string_view kDeepDirective =
    "Do NOT give the answer. Respond with 1-3 guiding questions that reference the context.";
inline constexpr std::string_view kExamCoachDirective =
    "Produce numbered step-by-step reasoning, then a final answer.";
inline constexpr std::string_view kDefaultRefusal =
    "I don't know. The course materials provided do not cover this question.";
inline constexpr int kHistoryTurns = 6;
inline constexpr std::size_t kMaxFragment = 300;
inline constexpr std::size_t kMinSharedSpan = 40;

std::string_view directive_for(Mode mode);
double default_temperature(Discipline discipline);

/// Style guidance per (mode, discipline), loaded from "<mode>.<discipline>.txt".
class TemplateSet {
 public:
  static TemplateSet defaults();
  /// Missing files fall back to the built-in defaults. Throws ValidationFailed when a template
  /// is blank or two modes of one discipline share the same text.
  static TemplateSet load(const std::filesystem::path& dir);

  const std::string& get(Mode mode, Discipline discipline) const;
  void set(Mode mode, Discipline discipline, std::string text);
  void validate() const;

 private:
  std::map<std::pair<Mode, Discipline>, std::string> templates_;
};

struct ModeProfile {
  Mode mode = Mode::quick;
  double temperature = 0.3;
  int top_k = index::kDefaultTopK;
  std::string system_template;
  Discipline discipline = Discipline::stem;
};

ModeProfile default_profile(Mode mode, Discipline discipline, const TemplateSet& templates);

/// A retrieved chunk with what the prompt and citations need.
struct ContextPassage {
  index::RetrievalHit hit;
  std::string text;
  std::string title;
};

struct Citation {
  std::string chunk_id;
  std::string document_id;
  std::string document_title;
  int page_number = 0;
  std::string fragment;
  double score = 0.0;

  nlohmann::json to_json() const;
};

struct HistoryTurn {
  std::string prompt;
  std::string answer;
};

struct ComposedPrompt {
  std::string system;
  std::string user;
};

/// "[S1] title, page 3" headers followed by the chunk text; passages separated by blank lines.
std::string render_context_block(const std::vector<ContextPassage>& passages);

ComposedPrompt compose_prompt(std::string_view prompt, const std::vector<ContextPassage>& passages,
                              const ModeProfile& profile, const std::vector<HistoryTurn>& history,
                              std::string_view refusal_text = kDefaultRefusal);

/// Cuts to at most `max_codepoints`, backing up to a word boundary when possible. The result is
/// always a substring of `text`.
std::string truncate_fragment(std::string_view text, std::size_t max_codepoints = kMaxFragment);

/// A passage is cited when its [Si] marker appears in the answer, or when the answer shares an
/// exact span of at least 40 code points with the passage text.
std::vector<Citation> extract_citations(std::string_view answer, const std::vector<ContextPassage>& passages);

enum class TurnStatus { completed, failed };

struct ChatTurn {
  std::string turn_id;
  std::string session_id;
  std::string course_id;
  std::string user_id;
  std::string prompt;
  Mode mode = Mode::quick;
  int top_k = index::kDefaultTopK;
  double temperature = 0.3;
  std::vector<index::RetrievalHit> retrieved;
  std::string answer;
  std::vector<Citation> citations;
  TurnStatus status = TurnStatus::completed;
  bool refused = false;
  std::string error;
  int sequence = 0;
  std::int64_t created_at = 0;
  std::int64_t completed_at = 0;
  int tokens_in = 0;
  int tokens_out = 0;

  nlohmann::json to_json() const;
  static ChatTurn from_json(const nlohmann::json& j);
};

struct TutorOptions {
  std::string refusal_text = std::string(kDefaultRefusal);
  int history_turns = kHistoryTurns;
  int max_output_tokens = 1024;
  /// Override the profile values when set; evaluation sweeps use them.
  std::optional<int> top_k;
  std::optional<double> temperature;
};

class Tutor {
 public:
  Tutor(Catalog& catalog, index::VectorIndex& index, embeddings::EmbeddingProvider& embedder,
        generation::GenerationProvider& generator, progress::ProgressTracker* progress,
        TemplateSet templates = TemplateSet::defaults(), TutorOptions options = {});

  /// Throws UnknownCourse.
  std::string open_session(const std::string& course_id, const std::string& user_id);

  /// Throws EmptyPrompt, UnknownCourse, NotFound (session), Forbidden (session of another user)
  /// and ProviderUnavailable (after persisting the turn as failed).
  ChatTurn answer_question(const std::string& course_id, const std::string& session_id,
                           const std::string& user_id, std::string_view prompt, Mode mode);

  /// Turns of a session in order. Throws NotFound.
  std::vector<ChatTurn> turns(const std::string& course_id, const std::string& session_id) const;
  /// Owner of a session in the course. Throws NotFound.
  std::string session_owner(const std::string& course_id, const std::string& session_id) const;

  ModeProfile profile(Mode mode, Discipline discipline) const;
  void set_templates(TemplateSet templates);
  const TutorOptions& options() const { return options_; }

  /// Retrieves passages for a prompt; an unindexed course has none.
  std::vector<ContextPassage> retrieve(const std::string& course_id, std::string_view query, int top_k) const;

 private:
  std::mutex& session_lock(const std::string& session_id);
  void persist_turn(const ChatTurn& turn);

  Catalog& catalog_;
  index::VectorIndex& index_;
  embeddings::EmbeddingProvider& embedder_;
  generation::GenerationProvider& generator_;
  progress::ProgressTracker* progress_;
  mutable std::shared_mutex templates_mu_;
  TemplateSet templates_;
  TutorOptions options_;
  std::mutex sessions_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> session_locks_;
};

}  // namespace ragtutor::tutor
