#include <doctest.h>

#include <random>
#include <sstream>
#include <thread>

#include "ragtutor/error.hpp"
#include "ragtutor/progress.hpp"
#include "test_support.hpp"

using namespace ragtutor;
using namespace ragtutor::progress;
using testsupport::code_of;

namespace {

// Adds a document with `n` chunks named <doc>-0 .. <doc>-(n-1).
void add_doc(Catalog& catalog, const std::string& course, const std::string& doc, int n) {
  ingest::ExtractedDocument d;
  d.document_id = doc;
  d.course_id = course;
  d.title = "Title " + doc;
  d.checksum = doc + "-sum";
  d.pages = {{1, "x"}};
  std::vector<ingest::Chunk> chunks;
  for (int i = 0; i < n; ++i) chunks.push_back({doc + "-" + std::to_string(i), doc, course, 1, 0, 1, "x", i});
  catalog.add_document(d, chunks);
}

struct Fixture {
  store::Store store;
  Catalog catalog{store};
  Fixture() {
    catalog.create_course({"A", "Course A", Discipline::stem, true});
    catalog.create_course({"B", "Course B", Discipline::humanities, true});
    add_doc(catalog, "A", "d1", 10);
    add_doc(catalog, "A", "d2", 5);
    add_doc(catalog, "B", "b1", 4);
  }
};

InteractionEvent ev(std::vector<std::string> chunks, std::int64_t ts,
                    InteractionKind kind = InteractionKind::chat_citation, const std::string& user = "u1") {
  return {user, "A", kind, std::move(chunks), ts};
}

const MaterialStatus& status_of(const CoverageReport& r, const std::string& doc) {
  for (const auto& m : r.materials) {
    if (m.document_id == doc) return m;
  }
  FAIL("missing document " << doc);
  return r.materials.front();
}

}  // namespace

TEST_CASE("no events means everything is not started") {
  Fixture f;
  ProgressTracker tracker(f.store, f.catalog);
  const auto r = tracker.course_coverage("u1", "A");
  CHECK(r.materials.size() == 2);
  for (const auto& m : r.materials) CHECK(m.status == Status::not_started);
  CHECK(r.aggregate == 0.0);
  CHECK(code_of([&] { tracker.course_coverage("u1", "nope"); }) == ErrorCode::UnknownCourse);
}

TEST_CASE("first citation moves a document to in progress; duplicates change nothing") {
  Fixture f;
  ProgressTracker tracker(f.store, f.catalog);
  CHECK(tracker.record_interaction(ev({"d1-0"}, 100)));
  auto m = status_of(tracker.course_coverage("u1", "A"), "d1");
  CHECK(m.status == Status::in_progress);
  CHECK(m.interaction_count == 1);
  CHECK_FALSE(tracker.record_interaction(ev({"d1-0"}, 100)));
  const auto again = status_of(tracker.course_coverage("u1", "A"), "d1");
  CHECK(again.interaction_count == 1);
  CHECK(again.touched_chunks == 1);
}

TEST_CASE("an event citing two documents updates both") {
  Fixture f;
  ProgressTracker tracker(f.store, f.catalog);
  tracker.record_interaction(ev({"d1-0", "d1-1", "d2-4"}, 5));
  const auto r = tracker.course_coverage("u1", "A");
  CHECK(status_of(r, "d1").coverage == doctest::Approx(0.2));
  CHECK(status_of(r, "d2").coverage == doctest::Approx(0.2));
  CHECK(r.touched_chunks == 3);
  CHECK(r.aggregate == doctest::Approx(3.0 / 15.0));
}

TEST_CASE("status thresholds") {
  Fixture f;
  ProgressTracker tracker(f.store, f.catalog);
  tracker.record_interaction(ev({"d1-0", "d1-1", "d1-2", "d1-3"}, 1));
  auto m = status_of(tracker.course_coverage("u1", "A"), "d1");
  CHECK(m.coverage == doctest::Approx(0.4));
  CHECK(m.status == Status::in_progress);

  // Every chunk touched, but in only two events: not yet completed.
  tracker.record_interaction(ev({"d1-4", "d1-5", "d1-6", "d1-7", "d1-8", "d1-9"}, 2));
  m = status_of(tracker.course_coverage("u1", "A"), "d1");
  CHECK(m.coverage == doctest::Approx(1.0));
  CHECK(m.status == Status::in_progress);
  tracker.record_interaction(ev({"d1-0"}, 3, InteractionKind::quiz_explanation_view));
  CHECK(status_of(tracker.course_coverage("u1", "A"), "d1").status == Status::completed);

  CHECK(derive_status(0.0, 0, {}) == Status::not_started);
  CHECK(derive_status(0.79, 10, {}) == Status::in_progress);
  CHECK(derive_status(0.8, 3, {}) == Status::completed);
  CHECK(derive_status(1.0, 2, {}) == Status::in_progress);
}

TEST_CASE("foreign chunks are rejected") {
  Fixture f;
  ProgressTracker tracker(f.store, f.catalog);
  CHECK(code_of([&] { tracker.record_interaction(ev({"b1-0"}, 1)); }) == ErrorCode::CourseMismatch);
  CHECK(code_of([&] { tracker.record_interaction(ev({}, 1)); }) == ErrorCode::InvalidArgument);
  CHECK(tracker.record_interaction(ev({}, 1, InteractionKind::quiz_attempt)));
}

TEST_CASE("coverage is monotone and matches the set-union oracle under random events") {
  Fixture f;
  ProgressTracker tracker(f.store, f.catalog);
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> pick(0, 14), count(1, 4), ts(0, 40), kind(0, 2);
  std::set<std::string> oracle;
  double last = 0.0;
  for (int i = 0; i < 300; ++i) {
    std::vector<std::string> chunks;
    for (int c = count(rng); c > 0; --c) {
      const int k = pick(rng);
      chunks.push_back(k < 10 ? "d1-" + std::to_string(k) : "d2-" + std::to_string(k - 10));
    }
    tracker.record_interaction(ev(chunks, ts(rng), static_cast<InteractionKind>(kind(rng))));
    oracle.insert(chunks.begin(), chunks.end());
    const auto r = tracker.course_coverage("u1", "A");
    CHECK(r.aggregate >= last);
    last = r.aggregate;
    CHECK(r.touched_chunks == static_cast<int>(oracle.size()));
    int sum = 0;
    for (const auto& m : r.materials) sum += m.touched_chunks;
    CHECK(sum == r.touched_chunks);
  }
}

TEST_CASE("state survives a reopen of the store") {
  testsupport::TempDir dir;
  store::StoreOptions options;
  options.root = dir.path();
  {
    store::Store store(options);
    Catalog catalog(store);
    catalog.create_course({"A", "Course A", Discipline::stem, true});
    add_doc(catalog, "A", "d1", 10);
    ProgressTracker tracker(store, catalog);
    tracker.record_interaction(ev({"d1-0", "d1-1"}, 1));
    tracker.record_interaction(ev({"d1-2"}, 2));
  }
  store::Store store(options);
  Catalog catalog(store);
  ProgressTracker tracker(store, catalog);
  const auto m = status_of(tracker.course_coverage("u1", "A"), "d1");
  CHECK(m.touched_chunks == 3);
  CHECK(m.interaction_count == 2);
  CHECK_FALSE(tracker.record_interaction(ev({"d1-2"}, 2)));
}

TEST_CASE("concurrent writers and per-student overview") {
  Fixture f;
  ProgressTracker tracker(f.store, f.catalog);
  std::vector<std::thread> threads;
  for (int u = 0; u < 4; ++u) {
    threads.emplace_back([&, u] {
      for (int i = 0; i < 10; ++i) tracker.record_interaction(ev({"d1-" + std::to_string(i)}, i, InteractionKind::chat_citation, "u" + std::to_string(u)));
    });
  }
  for (auto& t : threads) t.join();
  const auto overview = tracker.course_overview("A");
  CHECK(overview.size() == 4);
  for (const auto& r : overview) CHECK(status_of(r, "d1").status == Status::completed);
}

TEST_CASE("log export pages newline-delimited records") {
  Fixture f;
  ProgressTracker tracker(f.store, f.catalog);
  for (int i = 0; i < 120; ++i) tracker.record_interaction(ev({"d1-" + std::to_string(i % 10)}, 1000 + i));
  const auto p0 = tracker.export_logs("A", 0);
  const auto p2 = tracker.export_logs("A", 2);
  CHECK(p0.has_more);
  CHECK_FALSE(p2.has_more);
  std::istringstream lines(p0.ndjson);
  std::string line;
  int n = 0;
  std::int64_t prev = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["type"] == "interaction");
    CHECK(j["at"].get<std::int64_t>() >= prev);
    prev = j["at"].get<std::int64_t>();
    ++n;
  }
  CHECK(n == 50);
  CHECK(std::count(p2.ndjson.begin(), p2.ndjson.end(), '\n') == 20);
  CHECK(tracker.export_logs("A", 0, 50, std::string("nobody")).ndjson.empty());
}
