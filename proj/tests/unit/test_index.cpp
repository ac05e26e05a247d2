#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "ragtutor/index.hpp"
#include "test_support.hpp"

using namespace ragtutor;
using namespace ragtutor::index;
using testsupport::code_of;
using testsupport::random_unit;

namespace {

IndexEntry entry(const std::string& course, int i, embeddings::EmbeddingVector v,
                 const std::string& doc = "doc-a") {
  return IndexEntry{"chunk-" + std::to_string(i), course, std::move(v), {doc, 1 + i % 5, i}};
}

// Full sort of every candidate; the independent reference for exact retrieval.
std::vector<std::string> linear_scan(const std::vector<IndexEntry>& all,
                                     const embeddings::EmbeddingVector& q, int k) {
  struct Scored {
    double score;
    const IndexEntry* e;
  };
  std::vector<Scored> scored;
  for (const auto& e : all) {
    double s = 0;
    for (std::size_t d = 0; d < q.values.size(); ++d) s += e.vector.values[d] * q.values[d];
    scored.push_back({s, &e});
  }
  std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.e->payload.document_id != b.e->payload.document_id)
      return a.e->payload.document_id < b.e->payload.document_id;
    return a.e->payload.ordinal < b.e->payload.ordinal;
  });
  std::vector<std::string> ids;
  for (int i = 0; i < k && i < static_cast<int>(scored.size()); ++i) ids.push_back(scored[i].e->chunk_id);
  return ids;
}

std::vector<std::string> ids_of(const std::vector<RetrievalHit>& hits) {
  std::vector<std::string> ids;
  for (const auto& h : hits) ids.push_back(h.chunk_id);
  return ids;
}

}  // namespace

TEST_CASE("upsert is idempotent per chunk id") {
  VectorIndex idx;
  std::mt19937_64 rng(1);
  const auto e = entry("A", 0, random_unit(rng, 16));
  const auto first = idx.upsert_chunks("A", std::span(&e, 1));
  const auto second = idx.upsert_chunks("A", std::span(&e, 1));
  CHECK(first.inserted + second.inserted == 1);
  CHECK(first.replaced + second.replaced == 1);
  CHECK(idx.size("A") == 1);
}

TEST_CASE("foreign course entries are rejected atomically") {
  VectorIndex idx;
  std::mt19937_64 rng(2);
  std::vector<IndexEntry> batch = {entry("A", 0, random_unit(rng, 16)),
                                   entry("B", 1, random_unit(rng, 16))};
  idx.create_collection("A");
  CHECK(code_of([&] { idx.upsert_chunks("A", batch); }) == ErrorCode::CourseMismatch);
  CHECK(idx.size("A") == 0);
}

TEST_CASE("vectors must be unit norm with a consistent dimension") {
  VectorIndex idx;
  auto e = entry("A", 0, {{1.0, 1.0, 0, 0, 0, 0, 0, 0}, "x"});
  CHECK(code_of([&] { idx.upsert_chunks("A", std::span(&e, 1)); }) == ErrorCode::InvalidArgument);
  std::mt19937_64 rng(3);
  auto a = entry("A", 1, random_unit(rng, 8));
  auto b = entry("A", 2, random_unit(rng, 16));
  idx.upsert_chunks("A", std::span(&a, 1));
  CHECK(code_of([&] { idx.upsert_chunks("A", std::span(&b, 1)); }) == ErrorCode::DimensionMismatch);
  CHECK(code_of([&] { idx.query_top_k("A", random_unit(rng, 16), 3); }) ==
        ErrorCode::DimensionMismatch);
}

TEST_CASE("count, truncation and self retrieval") {
  VectorIndex idx;
  std::mt19937_64 rng(4);
  std::vector<IndexEntry> all;
  for (int i = 0; i < 1000; ++i) all.push_back(entry("A", i, random_unit(rng, 32)));
  idx.upsert_chunks("A", all);
  CHECK(idx.size("A") == 1000);

  VectorIndex small;
  small.upsert_chunks("S", std::span(all).first(0));
  std::vector<IndexEntry> three;
  for (int i = 0; i < 3; ++i) three.push_back(entry("S", i, all[i].vector));
  small.upsert_chunks("S", three);
  CHECK(small.query_top_k("S", all[0].vector, 10).size() == 3);

  const auto hits = idx.query_top_k("A", all[417].vector, 5);
  REQUIRE(!hits.empty());
  CHECK(hits[0].chunk_id == "chunk-417");
  CHECK(hits[0].score == doctest::Approx(1.0));
  CHECK(hits[0].payload.ordinal == 417);
}

TEST_CASE("ties break by document then ordinal") {
  VectorIndex idx;
  std::mt19937_64 rng(5);
  const auto v = random_unit(rng, 8);
  std::vector<IndexEntry> entries = {
      IndexEntry{"c3", "A", v, {"doc-b", 1, 0}},
      IndexEntry{"c2", "A", v, {"doc-a", 1, 7}},
      IndexEntry{"c1", "A", v, {"doc-a", 1, 2}},
  };
  idx.upsert_chunks("A", entries);
  CHECK(ids_of(idx.query_top_k("A", v, 3)) == std::vector<std::string>{"c1", "c2", "c3"});
}

TEST_CASE("exact retrieval equals the linear-scan oracle") {
  VectorIndex idx;
  std::mt19937_64 rng(6);
  std::vector<IndexEntry> all;
  for (int i = 0; i < 10'000; ++i)
    all.push_back(entry("A", i, random_unit(rng, 32), i % 3 == 0 ? "doc-x" : "doc-y"));
  idx.upsert_chunks("A", all);
  for (int q = 0; q < 30; ++q) {
    const auto query = random_unit(rng, 32);
    const auto hits = idx.query_top_k("A", query, 10);
    CHECK(ids_of(hits) == linear_scan(all, query, 10));
    for (std::size_t i = 1; i < hits.size(); ++i) CHECK(hits[i - 1].score >= hits[i].score);
  }
}

TEST_CASE("document allow-list restricts candidates") {
  VectorIndex idx;
  std::mt19937_64 rng(7);
  std::vector<IndexEntry> all;
  for (int i = 0; i < 50; ++i) all.push_back(entry("A", i, random_unit(rng, 16), i < 10 ? "keep" : "drop"));
  idx.upsert_chunks("A", all);
  const auto hits = idx.query_top_k("A", random_unit(rng, 16), 20, std::set<std::string>{"keep"});
  CHECK(hits.size() == 10);
  for (const auto& h : hits) CHECK(h.payload.document_id == "keep");
}

TEST_CASE("course isolation under interleaved inserts") {
  VectorIndex idx;
  std::mt19937_64 rng(8);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < 2000; ++i) {
    const std::string course = coin(rng) ? "A" : "B";
    auto e = entry(course, i, random_unit(rng, 16));
    e.chunk_id = course + "-" + std::to_string(i);
    idx.upsert_chunks(course, std::span(&e, 1));
  }
  for (int q = 0; q < 50; ++q) {
    const auto query = random_unit(rng, 16);
    for (const auto& h : idx.query_top_k("A", query, 15)) CHECK(h.chunk_id.rfind("A-", 0) == 0);
    for (const auto& h : idx.query_top_k("B", query, 15)) CHECK(h.chunk_id.rfind("B-", 0) == 0);
  }
}

TEST_CASE("deleting a course collection") {
  VectorIndex idx;
  std::mt19937_64 rng(9);
  std::vector<IndexEntry> a, b;
  for (int i = 0; i < 37; ++i) a.push_back(entry("A", i, random_unit(rng, 8)));
  for (int i = 0; i < 11; ++i) b.push_back(entry("B", i, random_unit(rng, 8)));
  idx.upsert_chunks("A", a);
  idx.upsert_chunks("B", b);
  CHECK(idx.delete_course_collection("A") == 37);
  CHECK(code_of([&] { idx.query_top_k("A", a[0].vector, 3); }) == ErrorCode::UnknownCourse);
  CHECK(code_of([&] { idx.delete_course_collection("A"); }) == ErrorCode::UnknownCourse);
  CHECK(idx.size("B") == 11);
  CHECK(code_of([&] { idx.query_top_k("never", a[0].vector, 3); }) == ErrorCode::UnknownCourse);
}

TEST_CASE("empty collections answer with no hits") {
  VectorIndex idx;
  idx.create_collection("A");
  std::mt19937_64 rng(10);
  CHECK(idx.query_top_k("A", random_unit(rng, 8), 10).empty());
  CHECK(code_of([&] { idx.query_top_k("A", random_unit(rng, 8), 0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("remove_document drops only that document") {
  VectorIndex idx;
  std::mt19937_64 rng(11);
  std::vector<IndexEntry> all;
  for (int i = 0; i < 20; ++i) all.push_back(entry("A", i, random_unit(rng, 8), i % 2 ? "odd" : "even"));
  idx.upsert_chunks("A", all);
  CHECK(idx.remove_document("A", "odd") == 10);
  CHECK(idx.size("A") == 10);
  for (const auto& h : idx.query_top_k("A", all[1].vector, 20)) CHECK(h.payload.document_id == "even");
}

TEST_CASE("snapshot round trip and validation") {
  testsupport::TempDir dir;
  VectorIndex idx;
  std::mt19937_64 rng(12);
  std::vector<IndexEntry> all;
  for (int i = 0; i < 40; ++i) all.push_back(entry("A", i, random_unit(rng, 16)));
  idx.upsert_chunks("A", all);
  const auto path = dir.path() / "A.idx";
  idx.save_snapshot("A", path);

  VectorIndex restored;
  CHECK(restored.load_snapshot(path) == "A");
  CHECK(restored.size("A") == 40);
  const auto q = random_unit(rng, 16);
  CHECK(ids_of(restored.query_top_k("A", q, 7)) == ids_of(idx.query_top_k("A", q, 7)));

  // Overwrite the exponent byte of the last component: the norm check catches it.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-1, std::ios::end);
    char c = 0x7f;
    f.write(&c, 1);
  }
  CHECK(code_of([&] { VectorIndex().load_snapshot(path); }) == ErrorCode::CorruptSnapshot);

  std::filesystem::resize_file(path, 30);
  CHECK(code_of([&] { VectorIndex().load_snapshot(path); }) == ErrorCode::CorruptSnapshot);
  CHECK(code_of([&] { VectorIndex().load_snapshot(dir.path() / "missing"); }) == ErrorCode::NotFound);
}

TEST_CASE("approximate mode keeps recall@10 above 0.95") {
  IndexOptions options;
  options.mode = SearchMode::approximate;
  VectorIndex approx(options);
  VectorIndex exact;
  std::mt19937_64 rng(13);
  std::vector<IndexEntry> all;
  for (int i = 0; i < 10'000; ++i) all.push_back(entry("A", i, random_unit(rng, 32)));
  approx.upsert_chunks("A", all);
  exact.upsert_chunks("A", all);

  int found = 0;
  const int queries = 100;
  for (int q = 0; q < queries; ++q) {
    const auto query = random_unit(rng, 32);
    const auto truth = ids_of(exact.query_top_k("A", query, 10));
    const auto got = ids_of(approx.query_top_k("A", query, 10));
    for (const auto& id : got) found += std::count(truth.begin(), truth.end(), id) > 0;
  }
  const double recall = found / (10.0 * queries);
  MESSAGE("hnsw recall@10 = " << recall);
  CHECK(recall >= 0.95);
}
