#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ragtutor::index::detail {

/// Hierarchical navigable small-world graph over rows of an external row-major matrix.
/// Similarity is the inner product (rows are unit-norm). Nodes are row numbers.
class HnswGraph {
 public:
  HnswGraph(int dimension, int max_neighbors, int ef_construction, unsigned seed);

  /// `data` must hold at least (node + 1) rows; nodes are inserted in increasing order.
  void insert(int node, const std::vector<double>& data);
  void clear();

  /// Returns up to `ef` candidate rows, best first.
  std::vector<int> search(const double* query, const std::vector<double>& data, int ef) const;

  int size() const { return static_cast<int>(levels_.size()); }

 private:
  struct Candidate {
    double sim;
    int node;
  };

  double similarity(const double* a, const double* b) const;
  std::vector<Candidate> search_layer(const double* query, const std::vector<double>& data,
                                      int entry, int ef, int layer) const;
  std::vector<int> select_neighbors(const std::vector<double>& data,
                                    std::vector<Candidate> candidates, int limit) const;
  int max_for_layer(int layer) const { return layer == 0 ? 2 * m_ : m_; }

  int dim_;
  int m_;
  int ef_construction_;
  double level_mult_;
  std::mt19937 rng_;
  int entry_ = -1;
  int top_level_ = -1;
  std::vector<int> levels_;
  // links_[node][layer] -> neighbor rows
  std::vector<std::vector<std::vector<int>>> links_;
};

}  // namespace ragtutor::index::detail
