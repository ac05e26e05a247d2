#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ragtutor/ingest.hpp"
#include "ragtutor/store.hpp"

namespace ragtutor {

enum class Discipline { stem, humanities };

std::string_view to_string(Discipline d);
/// Throws InvalidArgument.
Discipline parse_discipline(std::string_view name);

enum class Role { student, teacher, admin };

std::string_view to_string(Role role);
/// Throws InvalidArgument.
Role parse_role(std::string_view name);

struct CourseInfo {
  std::string course_id;
  std::string name;
  Discipline discipline = Discipline::stem;
  bool students_may_generate_quizzes = true;
};

struct DocumentInfo {
  std::string document_id;
  std::string course_id;
  std::string title;
  std::string checksum;
  ingest::SourceFormat source_format = ingest::SourceFormat::plain_text;
  int page_count = 0;
  int chunk_count = 0;
};

/// Course, document and chunk records on top of the entity store.
class Catalog {
 public:
  explicit Catalog(store::Store& store) : store_(store) {}

  CourseInfo create_course(CourseInfo course);
  /// Throws UnknownCourse.
  CourseInfo course(const std::string& course_id) const;
  bool has_course(const std::string& course_id) const;
  std::vector<CourseInfo> courses() const;

  std::optional<DocumentInfo> find_by_checksum(const std::string& course_id,
                                               const std::string& checksum) const;
  std::optional<DocumentInfo> document(const std::string& course_id,
                                       const std::string& document_id) const;
  std::vector<DocumentInfo> documents(const std::string& course_id) const;

  /// Persists the document and its chunks in one batch.
  DocumentInfo add_document(const ingest::ExtractedDocument& doc,
                            const std::vector<ingest::Chunk>& chunks);

  /// Chunk lookups never cross courses: a chunk of another course reads as absent.
  std::optional<ingest::Chunk> chunk(const std::string& course_id, const std::string& chunk_id) const;
  std::vector<ingest::Chunk> chunks(const std::string& course_id,
                                    const std::optional<std::string>& document_id = std::nullopt) const;

  store::Store& store() { return store_; }

 private:
  store::Store& store_;
};

}  // namespace ragtutor
