#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ragtutor::ingest {

enum class SourceFormat { plain_text, markdown, external_extracted };

/// Throws UnsupportedFormat for unknown tags.
SourceFormat parse_source_format(std::string_view tag);
std::string_view to_string(SourceFormat format);

struct PageText {
  int page_number = 1;
  std::string text;
};

struct ExtractedDocument {
  std::string document_id;
  std::string course_id;
  std::string title;
  std::vector<PageText> pages;
  SourceFormat source_format = SourceFormat::plain_text;
  std::string checksum;
};

enum class ProfileName { stem, humanities, custom };

struct ChunkProfile {
  ProfileName name = ProfileName::stem;
  int chunk_size = 512;
  int overlap = 64;
  bool snap_to_whitespace = true;

  static ChunkProfile stem();
  static ChunkProfile humanities();
  /// Custom profile with overlap defaulting to 12.5% of chunk_size.
  static ChunkProfile custom(int chunk_size, std::optional<int> overlap = std::nullopt,
                             bool snap = true);

  /// Throws InvalidArgument unless chunk_size >= 64 and 0 <= overlap < chunk_size.
  void validate() const;
};

ChunkProfile parse_profile_name(std::string_view name);

/// Offsets are in Unicode code points into the page text.
struct Chunk {
  std::string chunk_id;
  std::string document_id;
  std::string course_id;
  int page_number = 1;
  int char_start = 0;
  int char_end = 0;
  std::string text;
  int ordinal = 0;
};

/// Maximum distance a chunk start may move backward to land after whitespace.
inline constexpr int kMaxSnapBack = 32;

/// Checksum over the concatenated page text (pages joined by form feed).
std::string document_checksum(const std::vector<PageText>& pages);

/// Deterministic: identical (raw, format, course_id, title) yields an identical document.
/// An empty title is derived from the content (first heading or first line).
ExtractedDocument parse_document(std::string_view raw, SourceFormat format,
                                 const std::string& course_id, std::string_view title = {});

std::vector<Chunk> chunk_text(const ExtractedDocument& doc, const ChunkProfile& profile);

/// Re-slices the page text by code-point offsets.
std::string slice_page(const std::string& page_text, int char_start, int char_end);

}  // namespace ragtutor::ingest
