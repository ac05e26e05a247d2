#include <doctest.h>

#include <fstream>
#include <thread>

#include "ragtutor/error.hpp"
#include "ragtutor/store.hpp"
#include "test_support.hpp"

using namespace ragtutor;
using namespace ragtutor::store;
using testsupport::code_of;

namespace {

EntityRecord turn(const std::string& id, const std::string& course, std::int64_t created_at = 0) {
  EntityRecord r;
  r.kind = EntityKind::turn;
  r.entity_id = id;
  r.course_id = course;
  r.created_at = created_at;
  r.body = {{"session_id", "s1"}, {"user_id", "u1"}, {"prompt", "why?"}, {"mode", "quick"},
            {"status", "completed"}};
  return r;
}

StoreOptions on_disk(const std::filesystem::path& root) {
  StoreOptions o;
  o.root = root;
  return o;
}

}  // namespace

TEST_CASE("create then update bumps the version; stale writes conflict") {
  Store store;
  CHECK(store.persist_entity(turn("t1", "A")) == 1);
  auto r = *store.get(EntityKind::turn, "t1");
  CHECK(r.version == 1);
  r.body["status"] = "failed";
  CHECK(store.persist_entity(r) == 2);
  CHECK(store.get(EntityKind::turn, "t1")->body["status"] == "failed");
  CHECK(code_of([&] { store.persist_entity(r); }) == ErrorCode::VersionConflict);
  CHECK(code_of([&] { store.persist_entity(turn("t1", "A")); }) == ErrorCode::VersionConflict);
}

TEST_CASE("schema violations are rejected") {
  Store store;
  auto missing = turn("t1", "A");
  missing.body.erase("prompt");
  CHECK(code_of([&] { store.persist_entity(missing); }) == ErrorCode::SchemaViolation);
  auto mistyped = turn("t2", "A");
  mistyped.body["prompt"] = 3;
  CHECK(code_of([&] { store.persist_entity(mistyped); }) == ErrorCode::SchemaViolation);
  CHECK(code_of([&] { store.persist_entity(turn("t3", "")); }) == ErrorCode::SchemaViolation);
  CHECK(code_of([] { parse_entity_kind("widget"); }) == ErrorCode::SchemaViolation);

  // A batch with one bad record writes nothing.
  std::vector<EntityRecord> batch = {turn("ok", "A"), missing};
  CHECK(code_of([&] { store.persist_entities(batch); }) == ErrorCode::SchemaViolation);
  CHECK(!store.get(EntityKind::turn, "ok"));
}

TEST_CASE("fetch isolates courses and filters by id") {
  Store store;
  for (int i = 0; i < 10; ++i) store.persist_entity(turn("t" + std::to_string(i), i % 2 ? "A" : "B"));
  EntityFilter f;
  f.course_id = "A";
  const auto a = store.fetch_entities(EntityKind::turn, f);
  CHECK(a.size() == 5);
  for (const auto& r : a) CHECK(r.course_id == "A");
  f.ids = std::vector<std::string>{"t1", "t2", "missing"};
  const auto some = store.fetch_entities(EntityKind::turn, f);
  REQUIRE(some.size() == 1);
  CHECK(some[0].entity_id == "t1");
  CHECK(store.fetch_entities(EntityKind::quiz).empty());
}

TEST_CASE("half-open time filter over 100 turns") {
  Store store;
  const std::int64_t t0 = 1'700'000'000'000;
  for (int i = 0; i < 100; ++i) store.persist_entity(turn("t" + std::to_string(i), "A", t0 + i * 1000));
  EntityFilter f;
  f.course_id = "A";
  f.created_from = t0 + 25 * 1000;
  f.created_before = t0 + 75 * 1000;
  const auto half = store.fetch_entities(EntityKind::turn, f);
  CHECK(half.size() == 50);
  CHECK(half.front().entity_id == "t25");
  CHECK(half.back().entity_id == "t74");
}

TEST_CASE("reopen restores every acknowledged write, tolerating a torn tail") {
  testsupport::TempDir dir;
  {
    Store store(on_disk(dir.path()));
    for (int i = 0; i < 20; ++i) store.persist_entity(turn("t" + std::to_string(i), "A"));
    auto r = *store.get(EntityKind::turn, "t3");
    r.body["status"] = "failed";
    store.persist_entity(r);
  }
  // Simulate an abrupt stop mid-append.
  {
    std::ofstream log(dir.path() / "turn" / "log.jsonl", std::ios::app);
    log << R"({"kind":"turn","id":"t99","body":{"sess)";
  }
  Store reopened(on_disk(dir.path()));
  CHECK(reopened.fetch_entities(EntityKind::turn).size() == 20);
  CHECK(!reopened.get(EntityKind::turn, "t99"));
  const auto r = *reopened.get(EntityKind::turn, "t3");
  CHECK(r.version == 2);
  CHECK(r.body["status"] == "failed");
  reopened.persist_entity(turn("t20", "A"));
}

TEST_CASE("compaction preserves state across reopen") {
  testsupport::TempDir dir;
  auto options = on_disk(dir.path());
  options.compact_after = 7;
  {
    Store store(options);
    for (int i = 0; i < 30; ++i) store.persist_entity(turn("t" + std::to_string(i), "A"));
    store.compact();
    store.persist_entity(turn("late", "A"));
  }
  CHECK(std::filesystem::exists(dir.path() / "turn" / "snapshot.json"));
  Store reopened(options);
  CHECK(reopened.fetch_entities(EntityKind::turn).size() == 31);
}

TEST_CASE("concurrent writers to distinct ids all land") {
  Store store;
  std::vector<std::thread> threads;
  for (int w = 0; w < 4; ++w) {
    threads.emplace_back([&, w] {
      for (int i = 0; i < 50; ++i) store.persist_entity(turn(std::to_string(w) + "-" + std::to_string(i), "A"));
    });
  }
  for (auto& t : threads) t.join();
  CHECK(store.fetch_entities(EntityKind::turn).size() == 200);
}

TEST_CASE("blobs round trip and detect corruption") {
  testsupport::TempDir dir;
  Store store(on_disk(dir.path()));
  const std::string bytes = "page one\fpage two";
  const auto ref = store.put_blob("A", bytes, "text/plain");
  CHECK(ref.size_bytes == bytes.size());
  CHECK(store.get_blob(ref) == bytes);

  {
    std::fstream f(*store.blob_path(ref), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('P');
  }
  CHECK(code_of([&] { store.get_blob(ref); }) == ErrorCode::IntegrityError);

  auto missing = ref;
  missing.blob_id = "blob-nothing";
  CHECK(code_of([&] { store.get_blob(missing); }) == ErrorCode::NotFound);

  StoreOptions tiny;
  tiny.max_blob_bytes = 4;
  Store small(tiny);
  CHECK(code_of([&] { small.put_blob("A", "12345", "text/plain"); }) == ErrorCode::TooLarge);
  const auto mem = small.put_blob("A", "1234", "text/plain");
  CHECK(small.get_blob(mem) == "1234");
}

TEST_CASE("migrations upgrade old records at load") {
  testsupport::TempDir dir;
  std::filesystem::create_directories(dir.path() / "session");
  {
    std::ofstream log(dir.path() / "session" / "log.jsonl");
    log << R"({"kind":"session","id":"s1","course_id":"A","body":{"owner":"u7"},"version":1,"created_at":5,"updated_at":5,"schema_version":0})"
        << "\n";
  }
  CHECK(code_of([&] { Store s(on_disk(dir.path())); }) == ErrorCode::SchemaViolation);
  Store::register_migration(EntityKind::session, 0, [](nlohmann::json body) {
    body["user_id"] = body["owner"];
    body.erase("owner");
    return body;
  });
  Store store(on_disk(dir.path()));
  const auto s = *store.get(EntityKind::session, "s1");
  CHECK(s.body["user_id"] == "u7");
  CHECK(s.schema_version == 1);
}
