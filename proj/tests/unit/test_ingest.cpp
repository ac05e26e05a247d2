#include <doctest.h>

#include <chrono>
#include <random>
#include <set>

#include "oracles.hpp"
#include "test_support.hpp"
#include "ragtutor/error.hpp"
#include "ragtutor/ingest.hpp"
#include "ragtutor/text.hpp"

using namespace ragtutor;
using testsupport::code_of;
using namespace ragtutor::ingest;

namespace {

ExtractedDocument one_page(const std::string& text) {
  return parse_document(text, SourceFormat::plain_text, "course-1");
}

// Invariants every chunking must satisfy.
void check_chunking(const ExtractedDocument& doc, const ChunkProfile& profile,
                    const std::vector<Chunk>& chunks) {
  int expected_ordinal = 0;
  std::map<int, std::vector<const Chunk*>> by_page;
  for (const auto& c : chunks) {
    REQUIRE(c.ordinal == expected_ordinal++);
    REQUIRE(c.char_start < c.char_end);
    REQUIRE(c.char_end - c.char_start <= profile.chunk_size);
    by_page[c.page_number].push_back(&c);
  }
  for (const auto& page : doc.pages) {
    const int n = static_cast<int>(utf8_decode(page.text).size());
    const auto& list = by_page[page.page_number];
    if (n == 0) {
      REQUIRE(list.empty());
      continue;
    }
    // Page fidelity and coverage via a covered-prefix sweep (chunks are in order).
    int covered = 0;
    const Chunk* prev = nullptr;
    for (const auto* c : list) {
      REQUIRE(slice_page(page.text, c->char_start, c->char_end) == c->text);
      REQUIRE(c->char_start <= covered);
      if (prev != nullptr) {
        const int overlap = prev->char_end - c->char_start;
        REQUIRE(overlap >= profile.overlap);
        REQUIRE(overlap <= profile.overlap + kMaxSnapBack);
        if (!profile.snap_to_whitespace) REQUIRE(overlap == profile.overlap);
      }
      covered = std::max(covered, c->char_end);
      prev = c;
    }
    REQUIRE(covered == n);
  }
}

std::string random_text(std::mt19937& rng, int length) {
  static const std::vector<std::string> pieces = {"a", "b", "e", "z", "Q", "7", " ", " ", "\n",
                                                  "\t", ".", "é", "ß", "日", "😀", "-"};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::string s;
  for (int i = 0; i < length; ++i) s += pieces[pick(rng)];
  return s;
}

}  // namespace

TEST_CASE("plain text parses to a single page") {
  const auto doc = one_page("hello world");
  REQUIRE(doc.pages.size() == 1);
  CHECK(doc.pages[0].page_number == 1);
  CHECK(doc.pages[0].text == "hello world");
  CHECK(doc.title == "hello world");
  CHECK(doc.checksum.size() == 64);
  CHECK(doc.source_format == SourceFormat::plain_text);
}

TEST_CASE("form feeds split pages") {
  const auto doc = one_page("p1\x0Cp2");
  REQUIRE(doc.pages.size() == 2);
  CHECK(doc.pages[0].text == "p1");
  CHECK(doc.pages[1].text == "p2");
  CHECK(doc.pages[1].page_number == 2);

  // An explicit blank page keeps its number.
  const auto blanks = one_page("a\f\fb");
  REQUIRE(blanks.pages.size() == 3);
  CHECK(blanks.pages[1].text.empty());
  CHECK(blanks.pages[2].page_number == 3);
}

TEST_CASE("markdown keeps structural markers and takes the first heading as title") {
  const std::string md = "# Sorting\n\n- **bubble** sort\n- $O(n^2)$\n";
  const auto doc = parse_document(md, SourceFormat::markdown, "c");
  CHECK(doc.pages[0].text == md);
  CHECK(doc.title == "Sorting");
}

TEST_CASE("extractor payload passes pages through") {
  const auto doc = parse_document(
      R"({"title":"Slides","pages":[{"page_number":1,"text":"a"},{"page_number":2,"text":"b"}]})",
      SourceFormat::external_extracted, "c");
  REQUIRE(doc.pages.size() == 2);
  CHECK(doc.pages[0].text == "a");
  CHECK(doc.pages[1].text == "b");
  CHECK(doc.title == "Slides");
  CHECK(doc.source_format == SourceFormat::external_extracted);
}

TEST_CASE("parse errors") {
  CHECK(code_of([] { parse_source_format("pdf"); }) == ErrorCode::UnsupportedFormat);
  auto payload = [](const std::string& raw) {
    return code_of([&] { parse_document(raw, SourceFormat::external_extracted, "c"); });
  };
  CHECK(payload("not json") == ErrorCode::MalformedPayload);
  CHECK(payload(R"({"title":"t"})") == ErrorCode::MalformedPayload);
  CHECK(payload(R"({"pages":[]})") == ErrorCode::MalformedPayload);
  CHECK(payload(R"({"title":"t","pages":[{"page_number":0,"text":"x"}]})") ==
        ErrorCode::MalformedPayload);
  CHECK(payload(R"({"title":"t","pages":[{"page_number":-3,"text":"x"}]})") ==
        ErrorCode::MalformedPayload);
  CHECK(payload(R"({"title":"t","pages":[{"page_number":1,"text":"x"},{"page_number":1,"text":"y"}]})") ==
        ErrorCode::MalformedPayload);
  CHECK(payload(R"({"title":"t","pages":[{"page_number":1,"text":7}]})") ==
        ErrorCode::MalformedPayload);
  CHECK(payload(R"({"title":"t","pages":[]})") == ErrorCode::EmptyDocument);
  CHECK(code_of([] { one_page("   \n\t"); }) == ErrorCode::EmptyDocument);
  CHECK(code_of([] { one_page("\f"); }) == ErrorCode::EmptyDocument);
}

TEST_CASE("parsing is deterministic and checksum tracks content") {
  const auto a = one_page("same bytes");
  const auto b = one_page("same bytes");
  CHECK(a.document_id == b.document_id);
  CHECK(a.checksum == b.checksum);
  const auto other_course = parse_document("same bytes", SourceFormat::plain_text, "course-2");
  CHECK(other_course.checksum == a.checksum);
  CHECK(other_course.document_id != a.document_id);
  CHECK(one_page("same bytes!").checksum != a.checksum);
}

TEST_CASE("profile defaults and validation") {
  CHECK(ChunkProfile::stem().chunk_size == 512);
  CHECK(ChunkProfile::stem().overlap == 64);
  CHECK(ChunkProfile::humanities().chunk_size == 1000);
  CHECK(ChunkProfile::humanities().overlap == 125);
  CHECK(ChunkProfile::custom(800).overlap == 100);
  CHECK(code_of([] { ChunkProfile::custom(63); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { ChunkProfile::custom(100, 100); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { ChunkProfile::custom(100, -1); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("a page that fits yields one chunk") {
  const auto doc = one_page(std::string(400, 'x'));
  const auto chunks = chunk_text(doc, ChunkProfile::stem());
  REQUIRE(chunks.size() == 1);
  CHECK(chunks[0].char_start == 0);
  CHECK(chunks[0].char_end == 400);
  CHECK(chunks[0].ordinal == 0);
}

TEST_CASE("no-whitespace page follows the sliding-window oracle") {
  const auto doc = one_page(std::string(1000, 'a'));
  const auto chunks = chunk_text(doc, ChunkProfile::stem());
  const auto expected = oracle::sliding_windows(1000, 512, 64);
  REQUIRE(expected == std::vector<std::pair<int, int>>{{0, 512}, {448, 960}, {896, 1000}});
  REQUIRE(chunks.size() == expected.size());
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    CHECK(chunks[i].char_start == expected[i].first);
    CHECK(chunks[i].char_end == expected[i].second);
  }
}

TEST_CASE("snapping moves a start back to the beginning of a word") {
  // Words of 9 letters + space; a 64/8 profile puts the raw next start mid-word.
  std::string text;
  for (int i = 0; i < 20; ++i) text += "abcdefghi ";
  const auto doc = one_page(text);
  const auto profile = ChunkProfile::custom(64, 8, true);
  const auto chunks = chunk_text(doc, profile);
  check_chunking(doc, profile, chunks);
  for (std::size_t i = 1; i < chunks.size(); ++i) {
    CHECK(text[static_cast<std::size_t>(chunks[i].char_start) - 1] == ' ');
  }
  const auto hard = chunk_text(doc, ChunkProfile::custom(64, 8, false));
  CHECK(hard[1].char_start == 56);
}

TEST_CASE("chunks never cross pages and carry page numbers") {
  const auto doc = one_page(std::string(700, 'a') + "\f" + std::string(100, 'b'));
  const auto chunks = chunk_text(doc, ChunkProfile::stem());
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0].page_number == 1);
  CHECK(chunks[1].page_number == 1);
  CHECK(chunks[1].char_end == 700);
  CHECK(chunks[2].page_number == 2);
  CHECK(chunks[2].char_start == 0);
  CHECK(chunks[2].text == std::string(100, 'b'));
  CHECK(chunks[2].ordinal == 2);
}

TEST_CASE("offsets count code points, not bytes") {
  std::string text;
  for (int i = 0; i < 100; ++i) text += "日";
  const auto doc = one_page(text);
  const auto chunks = chunk_text(doc, ChunkProfile::custom(64, 8, false));
  REQUIRE(chunks.size() == 2);
  CHECK(chunks[0].char_end == 64);
  CHECK(chunks[0].text.size() == 64 * 3);
  CHECK(chunks[1].char_start == 56);
  CHECK(chunks[1].char_end == 100);
}

TEST_CASE("randomized chunking invariants") {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> len(0, 3000);
  std::uniform_int_distribution<int> pages(1, 4);
  const std::vector<ChunkProfile> profiles = {ChunkProfile::stem(), ChunkProfile::humanities(),
                                              ChunkProfile::custom(64, 0, true),
                                              ChunkProfile::custom(64, 56, true),
                                              ChunkProfile::custom(100, 40, false)};
  for (int trial = 0; trial < 150; ++trial) {
    std::string raw;
    const int n_pages = pages(rng);
    for (int p = 0; p < n_pages; ++p) {
      if (p > 0) raw += '\f';
      raw += random_text(rng, len(rng));
    }
    raw += "x";  // never empty
    const auto doc = one_page(raw);
    for (const auto& profile : profiles) {
      const auto chunks = chunk_text(doc, profile);
      check_chunking(doc, profile, chunks);
      CHECK(chunk_text(doc, profile).size() == chunks.size());
    }
  }
}
