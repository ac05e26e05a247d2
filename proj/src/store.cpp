#include "ragtutor/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <fstream>
#include <mutex>
#include <sstream>
#include <unordered_map>

#include "ragtutor/error.hpp"
#include "ragtutor/text.hpp"

namespace ragtutor::store {

namespace {

constexpr EntityKind kAllKinds[] = {EntityKind::course, EntityKind::user,    EntityKind::document,
                                    EntityKind::chunk,  EntityKind::session, EntityKind::turn,
                                    EntityKind::quiz,   EntityKind::attempt, EntityKind::event,
                                    EntityKind::job};

enum class FieldType { string, number, array, object, boolean };

struct FieldRule {
  const char* name;
  FieldType type;
};

const std::vector<FieldRule>& schema_for(EntityKind kind) {
  static const std::map<EntityKind, std::vector<FieldRule>> schemas = {
      {EntityKind::course, {{"name", FieldType::string}, {"discipline", FieldType::string}}},
      {EntityKind::user, {{"role", FieldType::string}}},
      {EntityKind::document,
       {{"title", FieldType::string},
        {"checksum", FieldType::string},
        {"source_format", FieldType::string},
        {"page_count", FieldType::number}}},
      {EntityKind::chunk,
       {{"document_id", FieldType::string},
        {"page_number", FieldType::number},
        {"char_start", FieldType::number},
        {"char_end", FieldType::number},
        {"text", FieldType::string},
        {"ordinal", FieldType::number}}},
      {EntityKind::session, {{"user_id", FieldType::string}}},
      {EntityKind::turn,
       {{"session_id", FieldType::string},
        {"user_id", FieldType::string},
        {"prompt", FieldType::string},
        {"mode", FieldType::string},
        {"status", FieldType::string}}},
      {EntityKind::quiz,
       {{"review_state", FieldType::string},
        {"revision", FieldType::number},
        {"questions", FieldType::array}}},
      {EntityKind::attempt,
       {{"quiz_id", FieldType::string}, {"user_id", FieldType::string}, {"score", FieldType::number}}},
      {EntityKind::event,
       {{"user_id", FieldType::string},
        {"kind", FieldType::string},
        {"chunk_ids", FieldType::array},
        {"timestamp", FieldType::number}}},
      {EntityKind::job, {{"kind", FieldType::string}, {"state", FieldType::string}}},
  };
  return schemas.at(kind);
}

bool has_type(const nlohmann::json& v, FieldType t) {
  switch (t) {
    case FieldType::string: return v.is_string();
    case FieldType::number: return v.is_number();
    case FieldType::array: return v.is_array();
    case FieldType::object: return v.is_object();
    case FieldType::boolean: return v.is_boolean();
  }
  return false;
}

std::map<std::pair<EntityKind, int>, Migration>& migrations() {
  static std::map<std::pair<EntityKind, int>, Migration> m;
  return m;
}
std::mutex& migrations_mu() {
  static std::mutex mu;
  return mu;
}

nlohmann::json to_json(const EntityRecord& r) {
  return {{"kind", to_string(r.kind)}, {"id", r.entity_id},       {"course_id", r.course_id},
          {"body", r.body},            {"version", r.version},    {"created_at", r.created_at},
          {"updated_at", r.updated_at}, {"schema_version", r.schema_version}};
}

EntityRecord from_json(const nlohmann::json& j) {
  EntityRecord r;
  r.kind = parse_entity_kind(j.at("kind").get<std::string>());
  r.entity_id = j.at("id").get<std::string>();
  r.course_id = j.value("course_id", std::string());
  r.body = j.at("body");
  r.version = j.at("version").get<std::int64_t>();
  r.created_at = j.value("created_at", std::int64_t{0});
  r.updated_at = j.value("updated_at", std::int64_t{0});
  r.schema_version = j.value("schema_version", 1);
  return r;
}

void write_all(int fd, const std::string& data, const std::string& what) {
  std::size_t done = 0;
  while (done < data.size()) {
    const auto n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::Internal, "write failed", what);
    }
    done += static_cast<std::size_t>(n);
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& data, bool sync) {
  const auto tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::Internal, "cannot create file", tmp);
  try {
    write_all(fd, data, tmp);
    if (sync) ::fsync(fd);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::string_view to_string(EntityKind kind) {
  switch (kind) {
    case EntityKind::course: return "course";
    case EntityKind::user: return "user";
    case EntityKind::document: return "document";
    case EntityKind::chunk: return "chunk";
    case EntityKind::session: return "session";
    case EntityKind::turn: return "turn";
    case EntityKind::quiz: return "quiz";
    case EntityKind::attempt: return "attempt";
    case EntityKind::event: return "event";
    case EntityKind::job: return "job";
  }
  return "course";
}

EntityKind parse_entity_kind(std::string_view name) {
  for (auto k : kAllKinds) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::SchemaViolation, "unknown entity kind", std::string(name));
}

bool is_course_scoped(EntityKind kind) {
  switch (kind) {
    case EntityKind::user:
    case EntityKind::job: return false;
    default: return true;
  }
}

struct Store::KindTable {
  std::unordered_map<std::string, EntityRecord> records;
  int log_fd = -1;
  std::size_t log_lines = 0;
  std::filesystem::path dir;

  ~KindTable() {
    if (log_fd >= 0) ::close(log_fd);
  }
};

void Store::register_migration(EntityKind kind, int from_version, Migration migration) {
  std::lock_guard lock(migrations_mu());
  migrations()[{kind, from_version}] = std::move(migration);
}

int Store::current_schema_version(EntityKind) { return 1; }

Store::Store(StoreOptions options) : options_(std::move(options)) {
  for (std::size_t i = 0; i < std::size(kAllKinds); ++i) tables_.push_back(std::make_unique<KindTable>());
  if (options_.root) load();
}

Store::~Store() = default;

Store::KindTable& Store::table(EntityKind kind) const { return *tables_[static_cast<std::size_t>(kind)]; }

void Store::load() {
  const auto& root = *options_.root;
  std::filesystem::create_directories(root / "blobs");
  for (auto kind : kAllKinds) {
    auto& t = table(kind);
    t.dir = root / std::string(to_string(kind));
    std::filesystem::create_directories(t.dir);

    auto absorb = [&](const nlohmann::json& j) {
      auto r = from_json(j);
      while (r.schema_version < current_schema_version(kind)) {
        Migration m;
        {
          std::lock_guard lock(migrations_mu());
          auto it = migrations().find({kind, r.schema_version});
          if (it == migrations().end())
            throw Error(ErrorCode::SchemaViolation, "no migration for stored schema version",
                        std::string(to_string(kind)) + " v" + std::to_string(r.schema_version));
          m = it->second;
        }
        r.body = m(std::move(r.body));
        ++r.schema_version;
      }
      auto it = t.records.find(r.entity_id);
      if (it == t.records.end() || it->second.version <= r.version) t.records[r.entity_id] = std::move(r);
    };

    const auto snapshot = t.dir / "snapshot.json";
    if (std::filesystem::exists(snapshot)) {
      std::ifstream in(snapshot);
      nlohmann::json all;
      try {
        all = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::IntegrityError, "store snapshot is corrupt", snapshot.string());
      }
      for (const auto& j : all) absorb(j);
    }

    const auto log = t.dir / "log.jsonl";
    if (std::filesystem::exists(log)) {
      std::ifstream in(log);
      std::string line;
      std::vector<std::string> lines;
      while (std::getline(in, line)) lines.push_back(line);
      for (std::size_t i = 0; i < lines.size(); ++i) {
        if (is_blank(lines[i])) continue;
        try {
          absorb(nlohmann::json::parse(lines[i]));
        } catch (const nlohmann::json::exception&) {
          // A torn final line is an unacknowledged write from an abrupt stop.
          if (i + 1 == lines.size()) break;
          throw Error(ErrorCode::IntegrityError, "store log is corrupt", log.string());
        }
      }
      t.log_lines = lines.size();
    }

    t.log_fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (t.log_fd < 0) throw Error(ErrorCode::Internal, "cannot open store log", log.string());
  }
}

void Store::validate(const EntityRecord& record) const {
  if (record.entity_id.empty()) throw Error(ErrorCode::SchemaViolation, "entity id is required");
  if (!record.body.is_object())
    throw Error(ErrorCode::SchemaViolation, "entity body must be an object", record.entity_id);
  if (is_course_scoped(record.kind) && record.course_id.empty())
    throw Error(ErrorCode::SchemaViolation, "course-scoped entity needs a course_id",
                std::string(to_string(record.kind)) + "/" + record.entity_id);
  if (record.kind == EntityKind::course && record.course_id != record.entity_id)
    throw Error(ErrorCode::SchemaViolation, "course records are scoped to themselves", record.entity_id);
  for (const auto& rule : schema_for(record.kind)) {
    if (!record.body.contains(rule.name) || !has_type(record.body[rule.name], rule.type))
      throw Error(ErrorCode::SchemaViolation, "body field missing or mistyped",
                  std::string(to_string(record.kind)) + "." + rule.name);
  }
}

std::int64_t Store::write_locked(EntityRecord record, bool sync) {
  auto& t = table(record.kind);
  auto it = t.records.find(record.entity_id);
  const std::int64_t current = it == t.records.end() ? 0 : it->second.version;
  if (record.version != current)
    throw Error(ErrorCode::VersionConflict, "stale entity version",
                std::string(to_string(record.kind)) + "/" + record.entity_id +
                    " expected=" + std::to_string(current) + " got=" + std::to_string(record.version));
  if (it != t.records.end() && it->second.course_id != record.course_id)
    throw Error(ErrorCode::CourseMismatch, "entity belongs to another course", record.entity_id);

  const auto now = now_millis();
  if (it != t.records.end()) {
    record.created_at = it->second.created_at;
  } else if (record.created_at == 0) {
    record.created_at = now;
  }
  record.updated_at = now;
  record.version = current + 1;
  record.schema_version = current_schema_version(record.kind);

  if (t.log_fd >= 0) {
    write_all(t.log_fd, to_json(record).dump() + "\n", (t.dir / "log.jsonl").string());
    if (sync && options_.sync_writes) ::fdatasync(t.log_fd);
    ++t.log_lines;
  }
  const auto version = record.version;
  const auto kind = record.kind;
  t.records[record.entity_id] = std::move(record);
  if (t.log_fd >= 0 && t.log_lines >= options_.compact_after) compact_locked(kind);
  return version;
}

std::int64_t Store::persist_entity(EntityRecord record) {
  validate(record);
  std::unique_lock lock(mu_);
  return write_locked(std::move(record), true);
}

std::vector<std::int64_t> Store::persist_entities(std::vector<EntityRecord> records) {
  for (const auto& r : records) validate(r);
  std::unique_lock lock(mu_);
  for (const auto& r : records) {
    const auto& t = table(r.kind);
    auto it = t.records.find(r.entity_id);
    const std::int64_t current = it == t.records.end() ? 0 : it->second.version;
    if (r.version != current)
      throw Error(ErrorCode::VersionConflict, "stale entity version", r.entity_id);
  }
  std::vector<std::int64_t> versions;
  std::vector<EntityKind> touched;
  for (auto& r : records) {
    touched.push_back(r.kind);
    versions.push_back(write_locked(std::move(r), false));
  }
  if (options_.sync_writes) {
    for (auto kind : touched) {
      const auto& t = table(kind);
      if (t.log_fd >= 0) ::fdatasync(t.log_fd);
    }
  }
  return versions;
}

std::vector<EntityRecord> Store::fetch_entities(EntityKind kind, const EntityFilter& filter) const {
  std::shared_lock lock(mu_);
  const auto& t = table(kind);
  std::vector<EntityRecord> out;
  auto matches = [&](const EntityRecord& r) {
    if (filter.course_id && r.course_id != *filter.course_id) return false;
    if (filter.created_from && r.created_at < *filter.created_from) return false;
    if (filter.created_before && r.created_at >= *filter.created_before) return false;
    return true;
  };
  if (filter.ids) {
    for (const auto& id : *filter.ids) {
      auto it = t.records.find(id);
      if (it != t.records.end() && matches(it->second)) out.push_back(it->second);
    }
  } else {
    for (const auto& [_, r] : t.records) {
      if (matches(r)) out.push_back(r);
    }
  }
  std::sort(out.begin(), out.end(), [](const EntityRecord& a, const EntityRecord& b) {
    if (a.created_at != b.created_at) return a.created_at < b.created_at;
    return a.entity_id < b.entity_id;
  });
  return out;
}

std::optional<EntityRecord> Store::get(EntityKind kind, const std::string& entity_id) const {
  std::shared_lock lock(mu_);
  const auto& t = table(kind);
  auto it = t.records.find(entity_id);
  if (it == t.records.end()) return std::nullopt;
  return it->second;
}

void Store::compact_locked(EntityKind kind) {
  auto& t = table(kind);
  if (t.log_fd < 0) return;
  nlohmann::json all = nlohmann::json::array();
  for (const auto& [_, r] : t.records) all.push_back(to_json(r));
  write_file_atomic(t.dir / "snapshot.json", all.dump(), options_.sync_writes);
  if (::ftruncate(t.log_fd, 0) != 0) throw Error(ErrorCode::Internal, "cannot truncate store log");
  if (options_.sync_writes) ::fdatasync(t.log_fd);
  t.log_lines = 0;
}

void Store::compact() {
  std::unique_lock lock(mu_);
  for (auto kind : kAllKinds) compact_locked(kind);
}

BlobRef Store::put_blob(const std::string& course_id, std::string_view bytes,
                        const std::string& content_type) {
  if (bytes.size() > options_.max_blob_bytes)
    throw Error(ErrorCode::TooLarge, "blob exceeds the configured maximum",
                std::to_string(bytes.size()) + " > " + std::to_string(options_.max_blob_bytes));
  if (course_id.empty()) throw Error(ErrorCode::SchemaViolation, "blob needs a course_id");

  BlobRef ref;
  ref.course_id = course_id;
  ref.content_type = content_type;
  ref.size_bytes = bytes.size();
  ref.checksum = sha256_hex(bytes);
  ref.blob_id = "blob-" + ref.checksum.substr(0, 24);

  std::unique_lock lock(mu_);
  if (options_.root) {
    const auto dir = *options_.root / "blobs" / course_id;
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / ref.blob_id, std::string(bytes), options_.sync_writes);
  } else {
    memory_blobs_[course_id + "/" + ref.blob_id] = std::string(bytes);
  }
  return ref;
}

std::optional<std::filesystem::path> Store::blob_path(const BlobRef& ref) const {
  if (!options_.root) return std::nullopt;
  return *options_.root / "blobs" / ref.course_id / ref.blob_id;
}

std::string Store::get_blob(const BlobRef& ref) const {
  std::string bytes;
  {
    std::shared_lock lock(mu_);
    if (options_.root) {
      const auto path = *blob_path(ref);
      std::ifstream in(path, std::ios::binary);
      if (!in) throw Error(ErrorCode::NotFound, "blob not found", ref.blob_id);
      std::ostringstream ss;
      ss << in.rdbuf();
      bytes = ss.str();
    } else {
      auto it = memory_blobs_.find(ref.course_id + "/" + ref.blob_id);
      if (it == memory_blobs_.end()) throw Error(ErrorCode::NotFound, "blob not found", ref.blob_id);
      bytes = it->second;
    }
  }
  if (sha256_hex(bytes) != ref.checksum)
    throw Error(ErrorCode::IntegrityError, "blob checksum mismatch", ref.blob_id);
  return bytes;
}

}  // namespace ragtutor::store
