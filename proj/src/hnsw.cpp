#include "hnsw.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

namespace ragtutor::index::detail {

namespace {

struct Closer {
  bool operator()(const auto& a, const auto& b) const { return a.sim < b.sim; }  // max-heap on sim
};
struct Farther {
  bool operator()(const auto& a, const auto& b) const { return a.sim > b.sim; }  // min-heap on sim
};

}  // namespace

HnswGraph::HnswGraph(int dimension, int max_neighbors, int ef_construction, unsigned seed)
    : dim_(dimension),
      m_(std::max(2, max_neighbors)),
      ef_construction_(std::max(ef_construction, max_neighbors)),
      level_mult_(1.0 / std::log(static_cast<double>(std::max(2, max_neighbors)))),
      rng_(seed) {}

void HnswGraph::clear() {
  entry_ = -1;
  top_level_ = -1;
  levels_.clear();
  links_.clear();
}

double HnswGraph::similarity(const double* a, const double* b) const {
  double s = 0.0;
  for (int i = 0; i < dim_; ++i) s += a[i] * b[i];
  return s;
}

std::vector<HnswGraph::Candidate> HnswGraph::search_layer(const double* query,
                                                          const std::vector<double>& data,
                                                          int entry, int ef, int layer) const {
  std::vector<char> visited(levels_.size(), 0);
  std::priority_queue<Candidate, std::vector<Candidate>, Closer> frontier;
  std::priority_queue<Candidate, std::vector<Candidate>, Farther> best;

  const Candidate start{similarity(query, &data[static_cast<std::size_t>(entry) * dim_]), entry};
  visited[entry] = 1;
  frontier.push(start);
  best.push(start);

  while (!frontier.empty()) {
    const auto current = frontier.top();
    frontier.pop();
    if (current.sim < best.top().sim && static_cast<int>(best.size()) >= ef) break;
    for (int nb : links_[current.node][layer]) {
      if (visited[nb]) continue;
      visited[nb] = 1;
      const double sim = similarity(query, &data[static_cast<std::size_t>(nb) * dim_]);
      if (static_cast<int>(best.size()) < ef || sim > best.top().sim) {
        frontier.push({sim, nb});
        best.push({sim, nb});
        if (static_cast<int>(best.size()) > ef) best.pop();
      }
    }
  }

  std::vector<Candidate> out;
  out.reserve(best.size());
  while (!best.empty()) {
    out.push_back(best.top());
    best.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

// Diversity heuristic: keep a candidate only if it is closer to the base than to any kept neighbor.
std::vector<int> HnswGraph::select_neighbors(const std::vector<double>& data,
                                             std::vector<Candidate> candidates, int limit) const {
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) { return a.sim > b.sim; });
  std::vector<int> kept;
  std::vector<int> pruned;
  for (const auto& c : candidates) {
    if (static_cast<int>(kept.size()) >= limit) break;
    bool diverse = true;
    for (int k : kept) {
      const double between = similarity(&data[static_cast<std::size_t>(c.node) * dim_],
                                        &data[static_cast<std::size_t>(k) * dim_]);
      if (between > c.sim) {
        diverse = false;
        break;
      }
    }
    (diverse ? kept : pruned).push_back(c.node);
  }
  for (int p : pruned) {
    if (static_cast<int>(kept.size()) >= limit) break;
    kept.push_back(p);
  }
  return kept;
}

void HnswGraph::insert(int node, const std::vector<double>& data) {
  std::uniform_real_distribution<double> unit(std::nextafter(0.0, 1.0), 1.0);
  const int level = static_cast<int>(std::floor(-std::log(unit(rng_)) * level_mult_));

  if (static_cast<int>(levels_.size()) <= node) {
    levels_.resize(node + 1, -1);
    links_.resize(node + 1);
  }
  levels_[node] = level;
  links_[node].assign(level + 1, {});

  const double* q = &data[static_cast<std::size_t>(node) * dim_];
  if (entry_ < 0) {
    entry_ = node;
    top_level_ = level;
    return;
  }

  int ep = entry_;
  for (int layer = top_level_; layer > level; --layer) {
    ep = search_layer(q, data, ep, 1, layer).front().node;
  }

  for (int layer = std::min(level, top_level_); layer >= 0; --layer) {
    auto candidates = search_layer(q, data, ep, ef_construction_, layer);
    ep = candidates.front().node;
    auto neighbors = select_neighbors(data, candidates, m_);
    links_[node][layer] = neighbors;
    for (int nb : neighbors) {
      auto& back = links_[nb][layer];
      back.push_back(node);
      if (static_cast<int>(back.size()) > max_for_layer(layer)) {
        const double* nb_vec = &data[static_cast<std::size_t>(nb) * dim_];
        std::vector<Candidate> pool;
        pool.reserve(back.size());
        for (int x : back)
          pool.push_back({similarity(nb_vec, &data[static_cast<std::size_t>(x) * dim_]), x});
        back = select_neighbors(data, std::move(pool), max_for_layer(layer));
      }
    }
  }

  if (level > top_level_) {
    top_level_ = level;
    entry_ = node;
  }
}

std::vector<int> HnswGraph::search(const double* query, const std::vector<double>& data,
                                   int ef) const {
  if (entry_ < 0) return {};
  int ep = entry_;
  for (int layer = top_level_; layer > 0; --layer) {
    ep = search_layer(query, data, ep, 1, layer).front().node;
  }
  auto found = search_layer(query, data, ep, ef, 0);
  std::vector<int> out;
  out.reserve(found.size());
  for (const auto& c : found) out.push_back(c.node);
  return out;
}

}  // namespace ragtutor::index::detail
