#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragtutor/catalog.hpp"
#include "ragtutor/embeddings.hpp"
#include "ragtutor/generation.hpp"
#include "ragtutor/index.hpp"
#include "ragtutor/progress.hpp"
#include "ragtutor/tutor.hpp"

namespace ragtutor::quiz {

enum class QuestionKind { multichoice, truefalse, shortanswer };
enum class BloomLevel { remember, understand, apply, analyze, evaluate, create };
enum class ReviewState { unreviewed, approved, rejected, published };
enum class ReviewAction { approve, reject, edit, publish };

std::string_view to_string(QuestionKind kind);
std::string_view to_string(BloomLevel level);
std::string_view to_string(ReviewState state);
std::string_view to_string(ReviewAction action);
/// All parsers throw InvalidArgument.
QuestionKind parse_question_kind(std::string_view name);
BloomLevel parse_bloom_level(std::string_view name);
ReviewState parse_review_state(std::string_view name);
ReviewAction parse_review_action(std::string_view name);

inline constexpr int kMaxQuestions = 50;
inline constexpr int kBatchSize = 5;
inline constexpr int kBatchRetries = 2;
inline constexpr int kSampleFactor = 3;

struct Option {
  std::string text;
  bool correct = false;
};

struct Question {
  std::string question_id;
  std::string stem;
  QuestionKind kind = QuestionKind::multichoice;
  /// Shortanswer options are the accepted answers, all marked correct.
  std::vector<Option> options;
  std::string explanation;
  std::vector<tutor::Citation> citations;
  BloomLevel bloom_level = BloomLevel::remember;

  /// Throws ValidationFailed.
  void validate() const;
  nlohmann::json to_json() const;
  /// Throws ValidationFailed on missing or mistyped fields.
  static Question from_json(const nlohmann::json& j);
};

struct QuizScope {
  enum class Kind { whole_course, topic, documents };
  Kind kind = Kind::whole_course;
  std::string topic;
  std::vector<std::string> document_ids;

  nlohmann::json to_json() const;
  /// Accepts "whole_course", {"topic": text} or {"document_ids": [...]}. Throws InvalidArgument.
  static QuizScope from_json(const nlohmann::json& j);
};

struct Quiz {
  std::string quiz_id;
  std::string course_id;
  QuizScope scope;
  std::vector<Question> questions;
  ReviewState review_state = ReviewState::unreviewed;
  std::string created_by;
  std::optional<std::string> reviewed_by;
  int revision = 0;
  int requested = 0;
  std::vector<std::string> warnings;
  std::int64_t created_at = 0;

  nlohmann::json to_json() const;
  static Quiz from_json(const nlohmann::json& j);
};

/// Students only ever see published quizzes.
bool visible_to_students(ReviewState state);
bool exportable(ReviewState state);
/// The target state of a legal transition; nullopt otherwise.
std::optional<ReviewState> next_review_state(ReviewState from, ReviewAction action);

using BloomMix = std::map<BloomLevel, double>;
BloomMix default_bloom_mix();
/// Splits n slots over the mix by largest remainder (ties to the lower level) and lists them in
/// level order. Throws InvalidArgument for negative weights or an all-zero mix.
std::vector<BloomLevel> apportion_bloom(int n, const BloomMix& mix);

struct ParseOutcome {
  std::vector<Question> questions;
  int discarded = 0;
};

/// Parses every ```quiz fenced block of generator output. Items that break the line grammar, the
/// question invariants, or cite a marker outside the passages are discarded.
ParseOutcome parse_generator_output(std::string_view text, const std::vector<tutor::ContextPassage>& passages);

/// Instructions for the line grammar, embedded in every quiz prompt.
std::string grammar_instructions();

/// Throws NotApproved unless the quiz is approved or published.
std::string export_moodle_xml(const Quiz& quiz);

struct QuestionFeedback {
  bool correct = false;
  bool skipped = false;
  std::string explanation;
  std::vector<tutor::Citation> citations;
};

struct QuizAttempt {
  std::string attempt_id;
  std::string quiz_id;
  std::string course_id;
  std::string user_id;
  nlohmann::json answers = nlohmann::json::object();
  double score = 0.0;
  int correct_count = 0;
  int question_count = 0;
  std::map<std::string, QuestionFeedback> per_question;
  std::int64_t submitted_at = 0;

  nlohmann::json to_json() const;
};

/// Scores answers against a quiz without persisting. Answers map question ids to an option index
/// (multichoice, truefalse) or text (shortanswer); null marks an explicit skip. Throws
/// InvalidArgument when a question is neither answered nor skipped.
QuizAttempt score_answers(const Quiz& quiz, const nlohmann::json& answers);

struct GenerateRequest {
  std::string course_id;
  QuizScope scope;
  int n_questions = 5;
  std::vector<QuestionKind> kinds = {QuestionKind::multichoice};
  BloomMix bloom_mix = default_bloom_mix();
  int top_k = index::kDefaultTopK;
  std::string requested_by;
};

class QuizService {
 public:
  QuizService(Catalog& catalog, index::VectorIndex& index, embeddings::EmbeddingProvider& embedder,
              generation::GenerationProvider& generator, progress::ProgressTracker* progress);

  /// Throws InvalidArgument (n outside [1, 50], no indexed material, bad scope), UnknownCourse,
  /// ProviderUnavailable and GenerationParseError (fewer than half the requested questions).
  Quiz generate_quiz(const GenerateRequest& request);

  /// Validates and stores a new quiz in the unreviewed state. Throws UnknownCourse, ValidationFailed.
  Quiz create_quiz(Quiz draft);

  /// Throws UnknownQuiz.
  Quiz get(const std::string& quiz_id) const;
  /// Students get UnknownQuiz for anything not published.
  Quiz view(const std::string& quiz_id, Role role) const;
  std::vector<Quiz> quizzes(const std::string& course_id, Role role) const;

  /// Throws ForbiddenRole, UnknownQuiz, IllegalTransition, VersionConflict (stale revision) and
  /// ValidationFailed (edit payload breaks the question invariants).
  Quiz transition_review_state(const std::string& quiz_id, ReviewAction action, const std::string& actor_id,
                               Role role, std::optional<int> expected_revision = std::nullopt,
                               const nlohmann::json& edited_payload = nullptr);

  /// Throws UnknownQuiz, QuizNotPublished, InvalidArgument.
  QuizAttempt grade_attempt(const std::string& quiz_id, const nlohmann::json& answers, const std::string& user_id);

  /// Throws UnknownQuiz, NotApproved.
  std::string export_moodle_xml(const std::string& quiz_id) const;

  /// Context used for a scope: topic retrieval or document-stratified sampling.
  std::vector<tutor::ContextPassage> scope_passages(const std::string& course_id, const QuizScope& scope,
                                                    int top_k) const;

 private:
  void check_grounded(const std::string& course_id, const std::vector<Question>& questions) const;
  Quiz persist(const Quiz& quiz, int expected_version);

  Catalog& catalog_;
  index::VectorIndex& index_;
  embeddings::EmbeddingProvider& embedder_;
  generation::GenerationProvider& generator_;
  progress::ProgressTracker* progress_;
};

/// Picks up to `limit` chunks spread across documents: documents take turns, and within a
/// document the picks are evenly spaced over its ordinals.
std::vector<ingest::Chunk> stratified_sample(const std::vector<ingest::Chunk>& chunks, std::size_t limit);

}  // namespace ragtutor::quiz
