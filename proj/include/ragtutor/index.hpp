#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "ragtutor/embeddings.hpp"

namespace ragtutor::index {

struct EntryPayload {
  std::string document_id;
  int page_number = 1;
  int ordinal = 0;
};

struct IndexEntry {
  std::string chunk_id;
  std::string course_id;
  embeddings::EmbeddingVector vector;
  EntryPayload payload;
};

struct RetrievalHit {
  std::string chunk_id;
  double score = 0.0;
  EntryPayload payload;
};

struct UpsertReceipt {
  int inserted = 0;
  int replaced = 0;
};

enum class SearchMode { exact, approximate };

struct HnswParams {
  int max_neighbors = 16;      // M; layer 0 keeps 2*M
  int ef_construction = 200;
  int ef_search = 128;
  unsigned seed = 42;
};

struct IndexOptions {
  SearchMode mode = SearchMode::exact;
  HnswParams hnsw;
};

inline constexpr int kDefaultTopK = 10;
inline constexpr double kUnitNormTolerance = 1e-6;

/// Hit ordering: score descending, then (document_id, ordinal, chunk_id) ascending.
bool ranks_before(const RetrievalHit& a, const RetrievalHit& b);

/// Per-course vector collections. Readers run concurrently; writes to one course are exclusive.
class VectorIndex {
 public:
  explicit VectorIndex(IndexOptions options = {});
  ~VectorIndex();

  VectorIndex(const VectorIndex&) = delete;
  VectorIndex& operator=(const VectorIndex&) = delete;

  /// Idempotent. A created-but-empty collection answers queries with no hits.
  void create_collection(const std::string& course_id);
  bool has_collection(const std::string& course_id) const;

  /// All-or-nothing. Throws CourseMismatch, DimensionMismatch or InvalidArgument (non-unit vector).
  UpsertReceipt upsert_chunks(const std::string& course_id, std::span<const IndexEntry> entries);

  /// Throws UnknownCourse. `document_ids`, when given, restricts candidates to those documents.
  std::vector<RetrievalHit> query_top_k(
      const std::string& course_id, const embeddings::EmbeddingVector& query, int k,
      const std::optional<std::set<std::string>>& document_ids = std::nullopt) const;

  /// Returns the number of entries removed. Throws UnknownCourse.
  std::size_t delete_course_collection(const std::string& course_id);

  /// Removes every entry of one document; returns the count removed.
  std::size_t remove_document(const std::string& course_id, const std::string& document_id);

  std::size_t size(const std::string& course_id) const;
  std::vector<std::string> courses() const;

  void save_snapshot(const std::string& course_id, const std::filesystem::path& path) const;
  /// Replaces (or creates) the course collection stored in the file; returns its course id.
  std::string load_snapshot(const std::filesystem::path& path);

  SearchMode mode() const { return options_.mode; }

 private:
  struct Collection;
  std::shared_ptr<Collection> find(const std::string& course_id) const;

  IndexOptions options_;
  mutable std::shared_mutex registry_mu_;
  std::map<std::string, std::shared_ptr<Collection>> collections_;
};

}  // namespace ragtutor::index
