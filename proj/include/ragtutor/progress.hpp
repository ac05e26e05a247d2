#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragtutor/catalog.hpp"
#include "ragtutor/store.hpp"

namespace ragtutor::progress {

enum class InteractionKind { chat_citation, quiz_explanation_view, quiz_attempt };
enum class Status { not_started, in_progress, completed };

std::string_view to_string(InteractionKind kind);
std::string_view to_string(Status status);
/// Throws InvalidArgument.
InteractionKind parse_interaction_kind(std::string_view name);

struct InteractionEvent {
  std::string user_id;
  std::string course_id;
  InteractionKind kind = InteractionKind::chat_citation;
  std::vector<std::string> chunk_ids;
  /// Milliseconds since epoch.
  std::int64_t timestamp = 0;

  nlohmann::json to_json() const;
};

struct ProgressOptions {
  double completion_threshold = 0.8;
  int min_interactions = 3;
};

struct MaterialStatus {
  std::string document_id;
  std::string title;
  Status status = Status::not_started;
  double coverage = 0.0;
  int interaction_count = 0;
  int touched_chunks = 0;
  int total_chunks = 0;
};

struct CoverageReport {
  std::string user_id;
  std::string course_id;
  std::vector<MaterialStatus> materials;
  int touched_chunks = 0;
  int total_chunks = 0;
  double aggregate = 0.0;

  nlohmann::json to_json() const;
};

/// Pure status rule over the counts.
Status derive_status(double coverage, int interaction_count, const ProgressOptions& options);

struct LogPage {
  std::string ndjson;
  int page = 0;
  int page_size = 50;
  bool has_more = false;
};

/// Set-based coverage: re-reading a chunk does not add progress. Safe for concurrent writers.
class ProgressTracker {
 public:
  ProgressTracker(store::Store& store, Catalog& catalog, ProgressOptions options = {});

  /// Returns false when every (user, chunk, kind, timestamp) key was already recorded.
  /// Throws CourseMismatch for chunks outside the event's course, InvalidArgument for an
  /// empty chunk list on citation or explanation events.
  bool record_interaction(const InteractionEvent& event);

  /// Throws UnknownCourse.
  CoverageReport course_coverage(const std::string& user_id, const std::string& course_id) const;
  /// Per-student reports for every user with at least one event in the course.
  std::vector<CoverageReport> course_overview(const std::string& course_id) const;

  /// Interaction events and chat turns of the course in time order, newline-delimited JSON.
  LogPage export_logs(const std::string& course_id, int page, int page_size = 50,
                      const std::optional<std::string>& user_id = std::nullopt) const;

  const ProgressOptions& options() const { return options_; }

 private:
  struct UserState {
    // document -> touched chunk ids
    std::map<std::string, std::set<std::string>> touched;
    // document -> distinct (kind, timestamp) interactions
    std::map<std::string, std::set<std::pair<int, std::int64_t>>> interactions;
    std::set<std::tuple<std::string, int, std::int64_t>> keys;
  };

  void apply_locked(const InteractionEvent& event, const std::map<std::string, std::string>& doc_of);

  store::Store& store_;
  Catalog& catalog_;
  ProgressOptions options_;
  mutable std::shared_mutex mu_;
  // (course, user) -> state
  std::map<std::pair<std::string, std::string>, UserState> state_;
};

}  // namespace ragtutor::progress
