#include "ragtutor/catalog.hpp"

#include <algorithm>

#include "ragtutor/error.hpp"
#include "ragtutor/text.hpp"

namespace ragtutor {

using store::EntityKind;
using store::EntityRecord;

std::string_view to_string(Discipline d) { return d == Discipline::stem ? "stem" : "humanities"; }

Discipline parse_discipline(std::string_view name) {
  if (name == "stem") return Discipline::stem;
  if (name == "humanities") return Discipline::humanities;
  throw Error(ErrorCode::InvalidArgument, "unknown discipline", std::string(name));
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::student: return "student";
    case Role::teacher: return "teacher";
    case Role::admin: return "admin";
  }
  return "student";
}

Role parse_role(std::string_view name) {
  for (auto r : {Role::student, Role::teacher, Role::admin}) {
    if (to_string(r) == name) return r;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown role", std::string(name));
}

namespace {

CourseInfo course_from(const EntityRecord& r) {
  CourseInfo c;
  c.course_id = r.entity_id;
  c.name = r.body.at("name").get<std::string>();
  c.discipline = parse_discipline(r.body.at("discipline").get<std::string>());
  c.students_may_generate_quizzes = r.body.value("students_may_generate_quizzes", true);
  return c;
}

DocumentInfo document_from(const EntityRecord& r) {
  DocumentInfo d;
  d.document_id = r.entity_id;
  d.course_id = r.course_id;
  d.title = r.body.at("title").get<std::string>();
  d.checksum = r.body.at("checksum").get<std::string>();
  d.source_format = ingest::parse_source_format(r.body.at("source_format").get<std::string>());
  d.page_count = r.body.at("page_count").get<int>();
  d.chunk_count = r.body.value("chunk_count", 0);
  return d;
}

ingest::Chunk chunk_from(const EntityRecord& r) {
  ingest::Chunk c;
  c.chunk_id = r.entity_id;
  c.course_id = r.course_id;
  c.document_id = r.body.at("document_id").get<std::string>();
  c.page_number = r.body.at("page_number").get<int>();
  c.char_start = r.body.at("char_start").get<int>();
  c.char_end = r.body.at("char_end").get<int>();
  c.text = r.body.at("text").get<std::string>();
  c.ordinal = r.body.at("ordinal").get<int>();
  return c;
}

}  // namespace

CourseInfo Catalog::create_course(CourseInfo course) {
  if (course.course_id.empty()) course.course_id = make_id("course");
  if (course.name.empty()) throw Error(ErrorCode::InvalidArgument, "course name is required");
  EntityRecord r;
  r.kind = EntityKind::course;
  r.entity_id = course.course_id;
  r.course_id = course.course_id;
  r.body = {{"name", course.name},
            {"discipline", to_string(course.discipline)},
            {"students_may_generate_quizzes", course.students_may_generate_quizzes}};
  store_.persist_entity(std::move(r));
  return course;
}

CourseInfo Catalog::course(const std::string& course_id) const {
  auto r = store_.get(EntityKind::course, course_id);
  if (!r) throw Error(ErrorCode::UnknownCourse, "unknown course", course_id);
  return course_from(*r);
}

bool Catalog::has_course(const std::string& course_id) const {
  return store_.get(EntityKind::course, course_id).has_value();
}

std::vector<CourseInfo> Catalog::courses() const {
  std::vector<CourseInfo> out;
  for (const auto& r : store_.fetch_entities(EntityKind::course)) out.push_back(course_from(r));
  return out;
}

std::optional<DocumentInfo> Catalog::find_by_checksum(const std::string& course_id,
                                                      const std::string& checksum) const {
  for (const auto& d : documents(course_id)) {
    if (d.checksum == checksum) return d;
  }
  return std::nullopt;
}

std::optional<DocumentInfo> Catalog::document(const std::string& course_id,
                                              const std::string& document_id) const {
  auto r = store_.get(EntityKind::document, document_id);
  if (!r || r->course_id != course_id) return std::nullopt;
  return document_from(*r);
}

std::vector<DocumentInfo> Catalog::documents(const std::string& course_id) const {
  store::EntityFilter f;
  f.course_id = course_id;
  std::vector<DocumentInfo> out;
  for (const auto& r : store_.fetch_entities(EntityKind::document, f)) out.push_back(document_from(r));
  std::sort(out.begin(), out.end(),
            [](const DocumentInfo& a, const DocumentInfo& b) { return a.document_id < b.document_id; });
  return out;
}

DocumentInfo Catalog::add_document(const ingest::ExtractedDocument& doc,
                                   const std::vector<ingest::Chunk>& chunks) {
  std::vector<EntityRecord> batch;
  EntityRecord d;
  d.kind = EntityKind::document;
  d.entity_id = doc.document_id;
  d.course_id = doc.course_id;
  d.body = {{"title", doc.title},
            {"checksum", doc.checksum},
            {"source_format", ingest::to_string(doc.source_format)},
            {"page_count", static_cast<int>(doc.pages.size())},
            {"chunk_count", static_cast<int>(chunks.size())}};
  batch.push_back(std::move(d));
  for (const auto& c : chunks) {
    EntityRecord r;
    r.kind = EntityKind::chunk;
    r.entity_id = c.chunk_id;
    r.course_id = c.course_id;
    r.body = {{"document_id", c.document_id}, {"page_number", c.page_number},
              {"char_start", c.char_start},   {"char_end", c.char_end},
              {"text", c.text},               {"ordinal", c.ordinal}};
    batch.push_back(std::move(r));
  }
  store_.persist_entities(std::move(batch));
  return *document(doc.course_id, doc.document_id);
}

std::optional<ingest::Chunk> Catalog::chunk(const std::string& course_id,
                                            const std::string& chunk_id) const {
  auto r = store_.get(EntityKind::chunk, chunk_id);
  if (!r || r->course_id != course_id) return std::nullopt;
  return chunk_from(*r);
}

std::vector<ingest::Chunk> Catalog::chunks(const std::string& course_id,
                                           const std::optional<std::string>& document_id) const {
  store::EntityFilter f;
  f.course_id = course_id;
  std::vector<ingest::Chunk> out;
  for (const auto& r : store_.fetch_entities(EntityKind::chunk, f)) {
    if (document_id && r.body.at("document_id").get<std::string>() != *document_id) continue;
    out.push_back(chunk_from(r));
  }
  std::sort(out.begin(), out.end(), [](const ingest::Chunk& a, const ingest::Chunk& b) {
    if (a.document_id != b.document_id) return a.document_id < b.document_id;
    return a.ordinal < b.ordinal;
  });
  return out;
}

}  // namespace ragtutor
