#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragtutor/catalog.hpp"
#include "ragtutor/embeddings.hpp"
#include "ragtutor/index.hpp"
#include "ragtutor/ingest.hpp"

namespace ragtutor {

struct IngestRequest {
  std::string course_id;
  std::string raw;
  ingest::SourceFormat format = ingest::SourceFormat::plain_text;
  ingest::ChunkProfile profile = ingest::ChunkProfile::stem();
  std::string title;
};

struct IngestResult {
  ingest::ExtractedDocument document;
  std::vector<ingest::Chunk> chunks;
  index::UpsertReceipt receipt;
  bool duplicate = false;

  nlohmann::json summary() const;
};

/// parse -> chunk -> embed -> index -> catalog. Ingests for one course are serialized.
class IngestPipeline {
 public:
  IngestPipeline(Catalog& catalog, index::VectorIndex& index, embeddings::EmbeddingProvider& embedder)
      : catalog_(catalog), index_(index), embedder_(embedder) {}

  /// Throws UnknownCourse and any parse, embedding or index error; nothing is written on failure.
  IngestResult ingest(const IngestRequest& request);

  /// Called with the course id just before parsing; tests use it to slow the parser down.
  std::function<void(const std::string&)> before_parse;

 private:
  std::mutex& course_lock(const std::string& course_id);

  Catalog& catalog_;
  index::VectorIndex& index_;
  embeddings::EmbeddingProvider& embedder_;
  std::mutex locks_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

}  // namespace ragtutor
