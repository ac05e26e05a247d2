#include "ragtutor/ingest.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "ragtutor/error.hpp"
#include "ragtutor/text.hpp"

namespace ragtutor::ingest {

namespace {

constexpr std::size_t kMaxTitleLength = 120;

std::string derive_title(const std::vector<PageText>& pages, SourceFormat format) {
  for (const auto& page : pages) {
    std::string_view rest = page.text;
    while (!rest.empty()) {
      const auto nl = rest.find('\n');
      auto line = trim(rest.substr(0, nl));
      rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
      if (line.empty()) continue;
      if (format == SourceFormat::markdown) {
        while (!line.empty() && line.front() == '#') line.remove_prefix(1);
        line = trim(line);
        if (line.empty()) continue;
      }
      auto cps = utf8_decode(line);
      if (cps.size() > kMaxTitleLength) cps.resize(kMaxTitleLength);
      return utf8_encode(cps);
    }
  }
  return "Untitled";
}

std::vector<PageText> split_form_feeds(std::string_view raw) {
  std::vector<PageText> pages;
  int number = 1;
  std::size_t start = 0;
  while (true) {
    const auto ff = raw.find('\f', start);
    const auto piece = raw.substr(start, ff == std::string_view::npos ? raw.size() - start : ff - start);
    pages.push_back(PageText{number++, std::string(piece)});
    if (ff == std::string_view::npos) break;
    start = ff + 1;
  }
  return pages;
}

struct ExtractorPayload {
  std::string title;
  std::vector<PageText> pages;
};

ExtractorPayload parse_extractor_payload(std::string_view raw) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedPayload, "extractor payload is not valid JSON", e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::MalformedPayload, "extractor payload must be an object");
  if (!j.contains("title") || !j["title"].is_string())
    throw Error(ErrorCode::MalformedPayload, "extractor payload requires a string \"title\"");
  if (!j.contains("pages") || !j["pages"].is_array())
    throw Error(ErrorCode::MalformedPayload, "extractor payload requires a \"pages\" array");

  ExtractorPayload out;
  out.title = j["title"].get<std::string>();
  std::set<int> seen;
  for (const auto& p : j["pages"]) {
    if (!p.is_object() || !p.contains("page_number") || !p["page_number"].is_number_integer() ||
        !p.contains("text") || !p["text"].is_string()) {
      throw Error(ErrorCode::MalformedPayload, "each page needs integer page_number and string text");
    }
    const auto number = p["page_number"].get<long long>();
    if (number <= 0 || number > 1'000'000)
      throw Error(ErrorCode::MalformedPayload, "page_number must be positive",
                  std::to_string(number));
    if (!seen.insert(static_cast<int>(number)).second)
      throw Error(ErrorCode::MalformedPayload, "duplicate page_number", std::to_string(number));
    out.pages.push_back(PageText{static_cast<int>(number), p["text"].get<std::string>()});
  }
  std::sort(out.pages.begin(), out.pages.end(),
            [](const PageText& a, const PageText& b) { return a.page_number < b.page_number; });
  return out;
}

}  // namespace

SourceFormat parse_source_format(std::string_view tag) {
  if (tag == "plain_text" || tag == "text" || tag == "txt") return SourceFormat::plain_text;
  if (tag == "markdown" || tag == "md") return SourceFormat::markdown;
  if (tag == "external_extracted") return SourceFormat::external_extracted;
  throw Error(ErrorCode::UnsupportedFormat, "unsupported source format", std::string(tag));
}

std::string_view to_string(SourceFormat format) {
  switch (format) {
    case SourceFormat::plain_text: return "plain_text";
    case SourceFormat::markdown: return "markdown";
    case SourceFormat::external_extracted: return "external_extracted";
  }
  return "plain_text";
}

ChunkProfile ChunkProfile::stem() { return ChunkProfile{ProfileName::stem, 512, 64, true}; }

ChunkProfile ChunkProfile::humanities() {
  return ChunkProfile{ProfileName::humanities, 1000, 125, true};
}

ChunkProfile ChunkProfile::custom(int chunk_size, std::optional<int> overlap, bool snap) {
  ChunkProfile p{ProfileName::custom, chunk_size, overlap.value_or(chunk_size / 8), snap};
  p.validate();
  return p;
}

void ChunkProfile::validate() const {
  if (chunk_size < 64)
    throw Error(ErrorCode::InvalidArgument, "chunk_size must be at least 64",
                std::to_string(chunk_size));
  if (overlap < 0 || overlap >= chunk_size)
    throw Error(ErrorCode::InvalidArgument, "overlap must be in [0, chunk_size)",
                std::to_string(overlap));
}

ChunkProfile parse_profile_name(std::string_view name) {
  if (name == "stem") return ChunkProfile::stem();
  if (name == "humanities") return ChunkProfile::humanities();
  throw Error(ErrorCode::InvalidArgument, "unknown chunk profile", std::string(name));
}

std::string document_checksum(const std::vector<PageText>& pages) {
  std::string joined;
  for (std::size_t i = 0; i < pages.size(); ++i) {
    if (i > 0) joined.push_back('\f');
    joined += pages[i].text;
  }
  return sha256_hex(joined);
}

ExtractedDocument parse_document(std::string_view raw, SourceFormat format,
                                 const std::string& course_id, std::string_view title) {
  ExtractedDocument doc;
  doc.course_id = course_id;
  doc.source_format = format;

  std::string payload_title;
  switch (format) {
    case SourceFormat::plain_text:
    case SourceFormat::markdown:
      doc.pages = split_form_feeds(raw);
      break;
    case SourceFormat::external_extracted: {
      auto payload = parse_extractor_payload(raw);
      doc.pages = std::move(payload.pages);
      payload_title = std::move(payload.title);
      break;
    }
  }

  const bool any_text = std::any_of(doc.pages.begin(), doc.pages.end(),
                                    [](const PageText& p) { return !is_blank(p.text); });
  if (doc.pages.empty() || !any_text)
    throw Error(ErrorCode::EmptyDocument, "document has no extractable text");

  if (!is_blank(title)) {
    doc.title = std::string(trim(title));
  } else if (!is_blank(payload_title)) {
    doc.title = std::string(trim(payload_title));
  } else {
    doc.title = derive_title(doc.pages, format);
  }

  doc.checksum = document_checksum(doc.pages);
  doc.document_id = "doc-" + sha256_hex(course_id + '\n' + doc.checksum).substr(0, 16);
  return doc;
}

std::vector<Chunk> chunk_text(const ExtractedDocument& doc, const ChunkProfile& profile) {
  profile.validate();
  std::vector<Chunk> chunks;
  int ordinal = 0;

  for (const auto& page : doc.pages) {
    const auto offsets = codepoint_offsets(page.text);
    const auto codepoints = utf8_decode(page.text);
    const int n = static_cast<int>(codepoints.size());
    if (n == 0) continue;

    auto emit = [&](int start, int end) {
      Chunk c;
      c.chunk_id = doc.document_id + "-" + std::to_string(ordinal);
      c.document_id = doc.document_id;
      c.course_id = doc.course_id;
      c.page_number = page.page_number;
      c.char_start = start;
      c.char_end = end;
      c.text = page.text.substr(offsets[start], offsets[end] - offsets[start]);
      c.ordinal = ordinal++;
      chunks.push_back(std::move(c));
    };

    int start = 0;
    while (true) {
      const int end = std::min(start + profile.chunk_size, n);
      emit(start, end);
      if (end == n) break;

      int next = end - profile.overlap;
      if (profile.snap_to_whitespace && !is_unicode_space(codepoints[next - 1])) {
        const int floor = std::max(next - kMaxSnapBack, start + 1);
        for (int s = next - 1; s >= floor; --s) {
          if (is_unicode_space(codepoints[s - 1])) {
            next = s;
            break;
          }
        }
      }
      start = next;
    }
  }
  return chunks;
}

std::string slice_page(const std::string& page_text, int char_start, int char_end) {
  const auto offsets = codepoint_offsets(page_text);
  const int n = static_cast<int>(offsets.size()) - 1;
  if (char_start < 0 || char_end > n || char_start > char_end)
    throw Error(ErrorCode::InvalidArgument, "slice out of range");
  return page_text.substr(offsets[char_start], offsets[char_end] - offsets[char_start]);
}

}  // namespace ragtutor::ingest
