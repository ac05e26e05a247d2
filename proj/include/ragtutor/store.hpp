#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace ragtutor::store {

enum class EntityKind { course, user, document, chunk, session, turn, quiz, attempt, event, job };

std::string_view to_string(EntityKind kind);
EntityKind parse_entity_kind(std::string_view name);
/// Course-scoped kinds must carry a course_id and are filtered by it.
bool is_course_scoped(EntityKind kind);

struct EntityRecord {
  EntityKind kind = EntityKind::course;
  std::string entity_id;
  std::string course_id;
  nlohmann::json body = nlohmann::json::object();
  /// On write: the version the caller last saw (0 to create). On read: the stored version.
  std::int64_t version = 0;
  /// Milliseconds since epoch. A zero created_at is stamped with the current time on create.
  std::int64_t created_at = 0;
  std::int64_t updated_at = 0;
  int schema_version = 1;
};

struct EntityFilter {
  std::optional<std::string> course_id;
  std::optional<std::vector<std::string>> ids;
  /// Half-open range over created_at.
  std::optional<std::int64_t> created_from;
  std::optional<std::int64_t> created_before;
};

struct BlobRef {
  std::string blob_id;
  std::string course_id;
  std::string content_type;
  std::uint64_t size_bytes = 0;
  std::string checksum;
};

struct StoreOptions {
  /// Unset keeps everything in memory.
  std::optional<std::filesystem::path> root;
  bool sync_writes = true;
  std::uint64_t max_blob_bytes = 100ull * 1024 * 1024;
  std::size_t compact_after = 4096;
};

using Migration = std::function<nlohmann::json(nlohmann::json)>;

/// Entity and blob persistence. On disk: <root>/<kind>/{snapshot.json,log.jsonl} and
/// <root>/blobs/<course>/<blob_id>. Every acknowledged write is in the log before return.
class Store {
 public:
  explicit Store(StoreOptions options = {});
  ~Store();

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  /// Returns the new version. Throws VersionConflict or SchemaViolation.
  std::int64_t persist_entity(EntityRecord record);
  /// Writes several records under one lock and one sync; all validated before any is written.
  std::vector<std::int64_t> persist_entities(std::vector<EntityRecord> records);

  std::vector<EntityRecord> fetch_entities(EntityKind kind, const EntityFilter& filter = {}) const;
  std::optional<EntityRecord> get(EntityKind kind, const std::string& entity_id) const;

  /// Throws TooLarge.
  BlobRef put_blob(const std::string& course_id, std::string_view bytes,
                   const std::string& content_type);
  /// Throws NotFound or IntegrityError.
  std::string get_blob(const BlobRef& ref) const;
  std::optional<std::filesystem::path> blob_path(const BlobRef& ref) const;

  /// Rewrites every kind's snapshot and truncates its log.
  void compact();

  /// Applied at load time to records whose schema_version equals `from_version`.
  static void register_migration(EntityKind kind, int from_version, Migration migration);
  static int current_schema_version(EntityKind kind);

  bool persistent() const { return options_.root.has_value(); }

 private:
  struct KindTable;
  void validate(const EntityRecord& record) const;
  std::int64_t write_locked(EntityRecord record, bool sync);
  void load();
  void compact_locked(EntityKind kind);
  KindTable& table(EntityKind kind) const;

  StoreOptions options_;
  mutable std::shared_mutex mu_;
  std::vector<std::unique_ptr<KindTable>> tables_;
  std::map<std::string, std::string> memory_blobs_;
};

}  // namespace ragtutor::store
