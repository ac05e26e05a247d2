#include "ragtutor/index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <queue>
#include <unordered_map>

#include "hnsw.hpp"
#include "ragtutor/error.hpp"

namespace ragtutor::index {

namespace {

constexpr char kSnapshotMagic[4] = {'R', 'G', 'T', 'X'};
constexpr std::uint32_t kSnapshotVersion = 1;

struct Stored {
  std::string chunk_id;
  EntryPayload payload;
};

void check_unit(const embeddings::EmbeddingVector& v, const std::string& chunk_id) {
  const double norm = embeddings::l2_norm(v.values);
  if (std::abs(norm - 1.0) > kUnitNormTolerance)
    throw Error(ErrorCode::InvalidArgument, "index vectors must be unit-norm",
                chunk_id + " norm=" + std::to_string(norm));
}

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error(ErrorCode::CorruptSnapshot, "snapshot truncated");
  return value;
}

std::string read_string(std::istream& in) {
  const auto len = read_pod<std::uint32_t>(in);
  if (len > (1u << 24)) throw Error(ErrorCode::CorruptSnapshot, "snapshot string too long");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw Error(ErrorCode::CorruptSnapshot, "snapshot truncated");
  return s;
}

}  // namespace

bool ranks_before(const RetrievalHit& a, const RetrievalHit& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.payload.document_id != b.payload.document_id)
    return a.payload.document_id < b.payload.document_id;
  if (a.payload.ordinal != b.payload.ordinal) return a.payload.ordinal < b.payload.ordinal;
  return a.chunk_id < b.chunk_id;
}

struct VectorIndex::Collection {
  mutable std::shared_mutex mu;
  int dimension = 0;
  std::string provider_id;
  std::vector<Stored> entries;
  std::vector<double> matrix;  // row-major, entries.size() x dimension
  std::unordered_map<std::string, std::size_t> position;
  std::unique_ptr<detail::HnswGraph> graph;

  const double* row(std::size_t i) const { return &matrix[i * static_cast<std::size_t>(dimension)]; }

  void rebuild_graph(const HnswParams& p) {
    graph = std::make_unique<detail::HnswGraph>(dimension, p.max_neighbors, p.ef_construction, p.seed);
    for (std::size_t i = 0; i < entries.size(); ++i) graph->insert(static_cast<int>(i), matrix);
  }

  RetrievalHit hit_for(std::size_t i, const double* query) const {
    double score = 0.0;
    const double* r = row(i);
    for (int d = 0; d < dimension; ++d) score += r[d] * query[d];
    return RetrievalHit{entries[i].chunk_id, std::clamp(score, -1.0, 1.0), entries[i].payload};
  }
};

VectorIndex::VectorIndex(IndexOptions options) : options_(options) {}
VectorIndex::~VectorIndex() = default;

std::shared_ptr<VectorIndex::Collection> VectorIndex::find(const std::string& course_id) const {
  std::shared_lock lock(registry_mu_);
  auto it = collections_.find(course_id);
  return it == collections_.end() ? nullptr : it->second;
}

void VectorIndex::create_collection(const std::string& course_id) {
  std::unique_lock lock(registry_mu_);
  if (!collections_.contains(course_id)) collections_[course_id] = std::make_shared<Collection>();
}

bool VectorIndex::has_collection(const std::string& course_id) const {
  return find(course_id) != nullptr;
}

UpsertReceipt VectorIndex::upsert_chunks(const std::string& course_id,
                                         std::span<const IndexEntry> entries) {
  for (const auto& e : entries) {
    if (e.course_id != course_id)
      throw Error(ErrorCode::CourseMismatch, "entry belongs to a different course",
                  e.chunk_id + " course=" + e.course_id);
    check_unit(e.vector, e.chunk_id);
  }
  if (!entries.empty()) {
    const auto dim = entries.front().vector.dimension();
    for (const auto& e : entries) {
      if (e.vector.dimension() != dim)
        throw Error(ErrorCode::DimensionMismatch, "entries have mixed dimensions", e.chunk_id);
    }
  }

  create_collection(course_id);
  auto coll = find(course_id);
  std::unique_lock lock(coll->mu);

  if (!entries.empty()) {
    const auto dim = entries.front().vector.dimension();
    if (coll->dimension != 0 && coll->dimension != dim)
      throw Error(ErrorCode::DimensionMismatch, "collection dimension differs",
                  "collection=" + std::to_string(coll->dimension) + " entry=" + std::to_string(dim));
    coll->dimension = dim;
    if (coll->provider_id.empty()) coll->provider_id = entries.front().vector.provider_id;
  }

  UpsertReceipt receipt;
  bool moved_existing = false;
  const auto first_new = coll->entries.size();
  for (const auto& e : entries) {
    auto it = coll->position.find(e.chunk_id);
    if (it != coll->position.end()) {
      const auto i = it->second;
      coll->entries[i].payload = e.payload;
      std::copy(e.vector.values.begin(), e.vector.values.end(),
                coll->matrix.begin() + static_cast<std::ptrdiff_t>(i * coll->dimension));
      ++receipt.replaced;
      moved_existing = moved_existing || i < first_new;
    } else {
      coll->position.emplace(e.chunk_id, coll->entries.size());
      coll->entries.push_back(Stored{e.chunk_id, e.payload});
      coll->matrix.insert(coll->matrix.end(), e.vector.values.begin(), e.vector.values.end());
      ++receipt.inserted;
    }
  }

  if (options_.mode == SearchMode::approximate) {
    if (!coll->graph || moved_existing) {
      coll->rebuild_graph(options_.hnsw);
    } else {
      for (auto i = first_new; i < coll->entries.size(); ++i)
        coll->graph->insert(static_cast<int>(i), coll->matrix);
    }
  }
  return receipt;
}

std::vector<RetrievalHit> VectorIndex::query_top_k(
    const std::string& course_id, const embeddings::EmbeddingVector& query, int k,
    const std::optional<std::set<std::string>>& document_ids) const {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  auto coll = find(course_id);
  if (!coll) throw Error(ErrorCode::UnknownCourse, "no collection for course", course_id);
  check_unit(query, "query");

  std::shared_lock lock(coll->mu);
  if (coll->entries.empty()) return {};
  if (query.dimension() != coll->dimension)
    throw Error(ErrorCode::DimensionMismatch, "query dimension differs from collection",
                std::to_string(query.dimension()) + " vs " + std::to_string(coll->dimension));

  const double* q = query.values.data();
  const auto limit = static_cast<std::size_t>(k);
  auto worse = [](const RetrievalHit& a, const RetrievalHit& b) { return ranks_before(a, b); };

  std::vector<RetrievalHit> hits;
  if (options_.mode == SearchMode::approximate && coll->graph && !document_ids) {
    const int ef = std::max(options_.hnsw.ef_search, k);
    for (int node : coll->graph->search(q, coll->matrix, ef))
      hits.push_back(coll->hit_for(static_cast<std::size_t>(node), q));
    std::sort(hits.begin(), hits.end(), ranks_before);
    if (hits.size() > limit) hits.resize(limit);
    return hits;
  }

  // Bounded heap whose top is the current worst of the best-k.
  std::priority_queue<RetrievalHit, std::vector<RetrievalHit>, decltype(worse)> heap(worse);
  for (std::size_t i = 0; i < coll->entries.size(); ++i) {
    if (document_ids && !document_ids->contains(coll->entries[i].payload.document_id)) continue;
    auto hit = coll->hit_for(i, q);
    if (heap.size() < limit) {
      heap.push(std::move(hit));
    } else if (ranks_before(hit, heap.top())) {
      heap.pop();
      heap.push(std::move(hit));
    }
  }
  hits.reserve(heap.size());
  while (!heap.empty()) {
    hits.push_back(heap.top());
    heap.pop();
  }
  std::reverse(hits.begin(), hits.end());
  return hits;
}

std::size_t VectorIndex::delete_course_collection(const std::string& course_id) {
  std::shared_ptr<Collection> coll;
  {
    std::unique_lock lock(registry_mu_);
    auto it = collections_.find(course_id);
    if (it == collections_.end())
      throw Error(ErrorCode::UnknownCourse, "no collection for course", course_id);
    coll = it->second;
    collections_.erase(it);
  }
  std::shared_lock lock(coll->mu);
  return coll->entries.size();
}

std::size_t VectorIndex::remove_document(const std::string& course_id,
                                         const std::string& document_id) {
  auto coll = find(course_id);
  if (!coll) throw Error(ErrorCode::UnknownCourse, "no collection for course", course_id);
  std::unique_lock lock(coll->mu);

  std::vector<Stored> kept;
  std::vector<double> matrix;
  const auto dim = static_cast<std::size_t>(coll->dimension);
  for (std::size_t i = 0; i < coll->entries.size(); ++i) {
    if (coll->entries[i].payload.document_id == document_id) continue;
    kept.push_back(coll->entries[i]);
    matrix.insert(matrix.end(), coll->row(i), coll->row(i) + dim);
  }
  const auto removed = coll->entries.size() - kept.size();
  if (removed == 0) return 0;
  coll->entries = std::move(kept);
  coll->matrix = std::move(matrix);
  coll->position.clear();
  for (std::size_t i = 0; i < coll->entries.size(); ++i)
    coll->position.emplace(coll->entries[i].chunk_id, i);
  if (options_.mode == SearchMode::approximate) coll->rebuild_graph(options_.hnsw);
  return removed;
}

std::size_t VectorIndex::size(const std::string& course_id) const {
  auto coll = find(course_id);
  if (!coll) throw Error(ErrorCode::UnknownCourse, "no collection for course", course_id);
  std::shared_lock lock(coll->mu);
  return coll->entries.size();
}

std::vector<std::string> VectorIndex::courses() const {
  std::shared_lock lock(registry_mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : collections_) out.push_back(id);
  return out;
}

void VectorIndex::save_snapshot(const std::string& course_id,
                                const std::filesystem::path& path) const {
  auto coll = find(course_id);
  if (!coll) throw Error(ErrorCode::UnknownCourse, "no collection for course", course_id);
  std::shared_lock lock(coll->mu);

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Internal, "cannot open snapshot for writing", tmp);
    out.write(kSnapshotMagic, sizeof kSnapshotMagic);
    write_pod(out, kSnapshotVersion);
    write_pod(out, static_cast<std::uint32_t>(coll->dimension));
    write_pod(out, static_cast<std::uint64_t>(coll->entries.size()));
    write_string(out, course_id);
    write_string(out, coll->provider_id);
    for (std::size_t i = 0; i < coll->entries.size(); ++i) {
      const auto& e = coll->entries[i];
      write_string(out, e.chunk_id);
      write_string(out, e.payload.document_id);
      write_pod(out, static_cast<std::int32_t>(e.payload.page_number));
      write_pod(out, static_cast<std::int32_t>(e.payload.ordinal));
      out.write(reinterpret_cast<const char*>(coll->row(i)),
                static_cast<std::streamsize>(sizeof(double) * coll->dimension));
    }
    if (!out) throw Error(ErrorCode::Internal, "snapshot write failed", tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string VectorIndex::load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, "snapshot not found", path.string());

  char magic[4];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kSnapshotMagic, sizeof magic) != 0)
    throw Error(ErrorCode::CorruptSnapshot, "not an index snapshot", path.string());
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kSnapshotVersion)
    throw Error(ErrorCode::CorruptSnapshot, "unsupported snapshot version", std::to_string(version));
  const auto dimension = static_cast<int>(read_pod<std::uint32_t>(in));
  const auto count = read_pod<std::uint64_t>(in);
  const auto course_id = read_string(in);
  const auto provider_id = read_string(in);
  if (count > 0 && dimension < 1)
    throw Error(ErrorCode::DimensionMismatch, "snapshot has entries but no dimension");

  std::vector<IndexEntry> entries;
  entries.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    IndexEntry e;
    e.course_id = course_id;
    e.chunk_id = read_string(in);
    e.payload.document_id = read_string(in);
    e.payload.page_number = read_pod<std::int32_t>(in);
    e.payload.ordinal = read_pod<std::int32_t>(in);
    e.vector.provider_id = provider_id;
    e.vector.values.resize(static_cast<std::size_t>(dimension));
    in.read(reinterpret_cast<char*>(e.vector.values.data()),
            static_cast<std::streamsize>(sizeof(double) * dimension));
    if (!in) throw Error(ErrorCode::CorruptSnapshot, "snapshot truncated");
    const double norm = embeddings::l2_norm(e.vector.values);
    if (std::abs(norm - 1.0) > kUnitNormTolerance)
      throw Error(ErrorCode::CorruptSnapshot, "snapshot vector is not unit-norm", e.chunk_id);
    entries.push_back(std::move(e));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw Error(ErrorCode::CorruptSnapshot, "trailing bytes after snapshot entries");

  {
    std::unique_lock lock(registry_mu_);
    collections_[course_id] = std::make_shared<Collection>();
  }
  upsert_chunks(course_id, entries);
  auto coll = find(course_id);
  std::unique_lock lock(coll->mu);
  if (coll->dimension == 0) coll->dimension = dimension;
  if (coll->provider_id.empty()) coll->provider_id = provider_id;
  return course_id;
}

}  // namespace ragtutor::index
