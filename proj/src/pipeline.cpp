#include "ragtutor/pipeline.hpp"

#include "ragtutor/error.hpp"

namespace ragtutor {

nlohmann::json IngestResult::summary() const {
  return {{"document_id", document.document_id},
          {"title", document.title},
          {"page_count", document.pages.size()},
          {"chunk_count", chunks.size()},
          {"inserted", receipt.inserted},
          {"replaced", receipt.replaced},
          {"duplicate", duplicate}};
}

std::mutex& IngestPipeline::course_lock(const std::string& course_id) {
  std::lock_guard lock(locks_mu_);
  auto& slot = locks_[course_id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

IngestResult IngestPipeline::ingest(const IngestRequest& request) {
  catalog_.course(request.course_id);
  request.profile.validate();
  std::lock_guard course_guard(course_lock(request.course_id));

  if (before_parse) before_parse(request.course_id);
  IngestResult result;
  result.document = ingest::parse_document(request.raw, request.format, request.course_id, request.title);

  if (auto existing = catalog_.find_by_checksum(request.course_id, result.document.checksum)) {
    result.duplicate = true;
    result.document.document_id = existing->document_id;
    result.document.title = existing->title;
    result.chunks = catalog_.chunks(request.course_id, existing->document_id);
    return result;
  }

  result.chunks = ingest::chunk_text(result.document, request.profile);
  std::vector<std::string> texts;
  texts.reserve(result.chunks.size());
  for (const auto& c : result.chunks) texts.push_back(c.text);

  std::vector<index::IndexEntry> entries;
  if (!texts.empty()) {
    auto vectors = embeddings::embed_texts(texts, embedder_);
    entries.reserve(vectors.size());
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      const auto& c = result.chunks[i];
      entries.push_back({c.chunk_id, c.course_id, std::move(vectors[i]),
                         {c.document_id, c.page_number, c.ordinal}});
    }
  }

  index_.create_collection(request.course_id);
  result.receipt = index_.upsert_chunks(request.course_id, entries);
  try {
    catalog_.add_document(result.document, result.chunks);
  } catch (...) {
    index_.remove_document(request.course_id, result.document.document_id);
    throw;
  }
  return result;
}

}  // namespace ragtutor
