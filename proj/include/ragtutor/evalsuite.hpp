#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragtutor/catalog.hpp"
#include "ragtutor/embeddings.hpp"
#include "ragtutor/generation.hpp"
#include "ragtutor/ingest.hpp"
#include "ragtutor/tutor.hpp"

namespace ragtutor::eval {

struct EvalCase {
  std::string case_id;
  std::string question;
  std::string ground_truth;
  /// Rank order matters for context precision.
  std::vector<std::string> retrieved_contexts;
  std::string answer;
  Discipline discipline = Discipline::stem;
  tutor::Mode mode = tutor::Mode::quick;

  nlohmann::json to_json() const;
  /// Throws InvalidArgument.
  static EvalCase from_json(const nlohmann::json& j);
};

/// Throws InvalidArgument on a malformed file.
std::vector<EvalCase> load_dataset(const std::filesystem::path& path);

struct MetricScores {
  std::optional<double> faithfulness;
  std::optional<double> answer_relevancy;
  std::optional<double> context_recall;
  std::optional<double> context_precision;

  nlohmann::json to_json() const;
};

inline constexpr const char* kMetricNames[] = {"faithfulness", "answer_relevancy", "context_recall",
                                               "context_precision"};
std::optional<double> metric(const MetricScores& s, std::string_view name);

/// Every judge call throws JudgeUnavailable when the judge cannot answer, including replies whose
/// length does not match the request.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual const std::string& id() const = 0;
  /// Atomic claims made by the answer.
  virtual std::vector<std::string> decompose_claims(const EvalCase& c) = 0;
  /// One verdict per claim: supported by the contexts or not.
  virtual std::vector<bool> verdict_claims(const EvalCase& c, const std::vector<std::string>& claims) = 0;
  /// Questions the answer would address.
  virtual std::vector<std::string> generate_questions(const EvalCase& c, int n) = 0;
  /// One verdict per ground-truth sentence: attributable to the contexts or not.
  virtual std::vector<bool> attribute_sentences(const EvalCase& c, const std::vector<std::string>& sentences) = 0;
  /// One verdict per retrieved context, in rank order.
  virtual std::vector<bool> context_relevance(const EvalCase& c) = 0;
};

/// Replays fixed judge outputs per case id.
class ScriptedJudge final : public Judge {
 public:
  struct Script {
    std::vector<std::string> claims;
    std::vector<bool> claim_verdicts;
    std::vector<std::string> questions;
    std::vector<bool> recall_verdicts;
    std::vector<bool> context_verdicts;

    static Script from_json(const nlohmann::json& j);
  };

  explicit ScriptedJudge(std::map<std::string, Script> scripts, std::string id = "scripted");
  const std::string& id() const override { return id_; }
  std::vector<std::string> decompose_claims(const EvalCase& c) override;
  std::vector<bool> verdict_claims(const EvalCase& c, const std::vector<std::string>& claims) override;
  std::vector<std::string> generate_questions(const EvalCase& c, int n) override;
  std::vector<bool> attribute_sentences(const EvalCase& c, const std::vector<std::string>& sentences) override;
  std::vector<bool> context_relevance(const EvalCase& c) override;

 private:
  const Script& script(const EvalCase& c) const;
  std::map<std::string, Script> scripts_;
  std::string id_;
};

/// Offline judge built on token overlap. A statement is supported when at least `threshold` of its
/// content tokens occur in the contexts; a context is relevant when it covers at least
/// `relevance_threshold` of the ground-truth content tokens. Generated questions are the answer's
/// sentences, cycled.
class LexicalJudge final : public Judge {
 public:
  explicit LexicalJudge(double threshold = 0.6, double relevance_threshold = 0.3);
  const std::string& id() const override { return id_; }
  std::vector<std::string> decompose_claims(const EvalCase& c) override;
  std::vector<bool> verdict_claims(const EvalCase& c, const std::vector<std::string>& claims) override;
  std::vector<std::string> generate_questions(const EvalCase& c, int n) override;
  std::vector<bool> attribute_sentences(const EvalCase& c, const std::vector<std::string>& sentences) override;
  std::vector<bool> context_relevance(const EvalCase& c) override;

 private:
  double threshold_;
  double relevance_threshold_;
  std::string id_ = "lexical";
};

/// Prompt templates for the LLM judge, one file per task in a directory:
/// claims.txt, claim_verdicts.txt, questions.txt, attribution.txt, context_relevance.txt.
/// Placeholders: {question} {answer} {ground_truth} {contexts} {items} {n}.
struct JudgePrompts {
  std::string claims;
  std::string claim_verdicts;
  std::string questions;
  std::string attribution;
  std::string context_relevance;

  /// Throws NotFound when a file is missing.
  static JudgePrompts load(const std::filesystem::path& dir);
};

/// Judge backed by a generation provider; expects a JSON array in every reply.
class LlmJudge final : public Judge {
 public:
  LlmJudge(generation::GenerationProvider& provider, JudgePrompts prompts);
  const std::string& id() const override { return provider_.id(); }
  std::vector<std::string> decompose_claims(const EvalCase& c) override;
  std::vector<bool> verdict_claims(const EvalCase& c, const std::vector<std::string>& claims) override;
  std::vector<std::string> generate_questions(const EvalCase& c, int n) override;
  std::vector<bool> attribute_sentences(const EvalCase& c, const std::vector<std::string>& sentences) override;
  std::vector<bool> context_relevance(const EvalCase& c) override;

 private:
  nlohmann::json ask(const std::string& prompt);
  generation::GenerationProvider& provider_;
  JudgePrompts prompts_;
};

/// Wraps a judge and marks every context ranked beyond `cutoff` irrelevant.
class DistractionJudge final : public Judge {
 public:
  DistractionJudge(std::shared_ptr<Judge> inner, int cutoff = 10);
  const std::string& id() const override { return id_; }
  std::vector<std::string> decompose_claims(const EvalCase& c) override { return inner_->decompose_claims(c); }
  std::vector<bool> verdict_claims(const EvalCase& c, const std::vector<std::string>& claims) override {
    return inner_->verdict_claims(c, claims);
  }
  std::vector<std::string> generate_questions(const EvalCase& c, int n) override {
    return inner_->generate_questions(c, n);
  }
  std::vector<bool> attribute_sentences(const EvalCase& c, const std::vector<std::string>& sentences) override {
    return inner_->attribute_sentences(c, sentences);
  }
  std::vector<bool> context_relevance(const EvalCase& c) override;

 private:
  std::shared_ptr<Judge> inner_;
  int cutoff_;
  std::string id_;
};

/// Builds a judge from {"kind": "lexical" | "scripted" | "llm" | "distraction", ...}.
/// scripted: {"scripts": path or object}; llm: {"provider": generation config, "prompts": dir};
/// distraction: {"inner": judge spec, "cutoff": 10}. Throws InvalidArgument.
std::shared_ptr<Judge> make_judge(const nlohmann::json& spec, const std::filesystem::path& base_dir = {});

/// Σ_k precision@k · v_k / Σ_k v_k; zero when nothing is relevant. Throws InvalidArgument when empty.
double context_precision_score(const std::vector<bool>& verdicts);

/// Throws EmptyText (no answer) and JudgeUnavailable. Absent when the answer yields no claims.
std::optional<double> faithfulness(const EvalCase& c, Judge& judge);
/// Mean cosine between the question and each generated question, clamped to [0,1].
std::optional<double> answer_relevancy(const EvalCase& c, Judge& judge, embeddings::EmbeddingProvider& embedder,
                                       int n_questions = 3);
/// Throws EmptyText when the ground truth is blank.
std::optional<double> context_recall(const EvalCase& c, Judge& judge);
/// Throws InvalidArgument without contexts.
std::optional<double> context_precision(const EvalCase& c, Judge& judge);

/// All four metrics; a metric whose precondition fails is left absent.
MetricScores evaluate_case(const EvalCase& c, Judge& judge, embeddings::EmbeddingProvider& embedder,
                           int n_questions = 3);

struct Aggregate {
  int count = 0;
  double mean = 0.0;
  /// Sample standard deviation; zero below two values.
  double stddev = 0.0;
};

Aggregate aggregate(const std::vector<double>& values);

struct CaseResult {
  std::string case_id;
  MetricScores scores;
  std::string error;
};

struct DatasetReport {
  std::vector<CaseResult> cases;
  std::map<std::string, Aggregate> metrics;

  /// One row per case and a final "mean" row; "%.6f", absent values left empty.
  std::string to_csv() const;
};

DatasetReport run_dataset(const std::vector<EvalCase>& cases, Judge& judge, embeddings::EmbeddingProvider& embedder,
                          int workers = 4, int n_questions = 3);

/// Metrics whose mean falls below the given minimum.
std::vector<std::string> threshold_failures(const DatasetReport& report, const std::map<std::string, double>& minimums);

struct CourseDocument {
  std::string title;
  std::string raw;
  ingest::SourceFormat format = ingest::SourceFormat::plain_text;
};

struct CourseBundle {
  std::string course_id;
  std::string name;
  Discipline discipline = Discipline::stem;
  std::vector<CourseDocument> documents;
  /// (question, ground truth)
  std::vector<std::pair<std::string, std::string>> questions;

  /// Reads <dir>/course.json and the document files it lists. Throws InvalidArgument, NotFound.
  static CourseBundle load(const std::filesystem::path& dir);
};

struct SweepConfig {
  std::vector<int> chunk_sizes = {512, 1000};
  std::vector<double> temperatures = {0.1, 0.3};
  std::vector<int> top_ks = {5, 10, 15};
  tutor::Mode mode = tutor::Mode::quick;
  int workers = 4;
  int n_questions = 3;

  /// Throws InvalidArgument on an empty axis or out-of-range values.
  void validate() const;
  std::size_t grid_size() const { return chunk_sizes.size() * temperatures.size() * top_ks.size(); }
  static SweepConfig from_json(const nlohmann::json& j);
};

struct SweepCell {
  std::string course_id;
  Discipline discipline = Discipline::stem;
  int chunk_size = 0;
  double temperature = 0.0;
  int top_k = 0;
  bool ok = true;
  std::string error;
  int cases = 0;
  std::map<std::string, Aggregate> metrics;
};

struct SweepReport {
  std::vector<SweepCell> cells;

  std::string to_csv() const;
  /// One comparison table per discipline: chunk size × temperature × K.
  std::string to_markdown() const;
  /// Mean of a metric over the cells of one course with the given K; nullopt if none.
  std::optional<double> mean_metric(const std::string& course_id, int top_k, const std::string& name) const;
};

/// Factories let each cell run with fresh providers; both must return thread-safe objects.
struct SweepProviders {
  std::function<std::shared_ptr<embeddings::EmbeddingProvider>()> embedder;
  std::function<std::shared_ptr<generation::GenerationProvider>()> generator;
  std::shared_ptr<Judge> judge;
};

/// Re-chunks, re-indexes and answers every question per grid cell, then scores the answers.
/// Cell failures are recorded and the sweep continues. Throws InvalidArgument for fewer than five
/// questions in a course.
SweepReport run_config_sweep(const SweepConfig& config, const std::vector<CourseBundle>& courses,
                             const SweepProviders& providers);

/// A sweep described by one JSON document: the axes plus "courses" (bundle directories), "judge",
/// "embedding" and "generation" provider configs. Relative paths resolve against `base_dir`.
struct SweepPlan {
  SweepConfig config;
  std::vector<CourseBundle> courses;
  SweepProviders providers;

  /// Throws InvalidArgument, NotFound.
  static SweepPlan from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static SweepPlan load(const std::filesystem::path& file);
};

/// The answered cases of one cell, exposed for inspection and tests.
std::vector<EvalCase> answer_cell(const CourseBundle& course, int chunk_size, double temperature, int top_k,
                                  tutor::Mode mode, embeddings::EmbeddingProvider& embedder,
                                  generation::GenerationProvider& generator);

}  // namespace ragtutor::eval
