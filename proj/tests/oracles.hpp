#pragma once

// Independent reference computations used to freeze expected values in tests.
// Deliberately written without calling into the library code they check.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

// Sliding windows with stride = size - overlap over n characters (no snapping).
inline std::vector<std::pair<int, int>> sliding_windows(int n, int size, int overlap) {
  std::vector<std::pair<int, int>> spans;
  if (n == 0) return spans;
  const int stride = size - overlap;
  for (int s = 0;; s += stride) {
    const int e = s + size < n ? s + size : n;
    spans.emplace_back(s, e);
    if (e == n) break;
  }
  return spans;
}

// Feature-hashing embedder: tokens are maximal [A-Za-z0-9] runs, lowercased;
// 64-bit FNV-1a; +1 when the top bit is clear, -1 otherwise; L2-normalized.
inline std::vector<double> hash_embed(const std::string& text, int dim) {
  std::map<std::string, int> counts;
  std::string tok;
  auto flush = [&] {
    if (!tok.empty()) ++counts[tok];
    tok.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      tok += static_cast<char>(std::tolower(c));
    } else {
      flush();
    }
  }
  flush();
  std::vector<double> v(dim, 0.0);
  for (const auto& [t, count] : counts) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : t) {
      h = (h ^ c) * 0x100000001b3ULL;
    }
    v[h % static_cast<std::uint64_t>(dim)] += (h & 0x8000000000000000ULL) ? -count : count;
  }
  double n2 = 0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  if (n > 0)
    for (double& x : v) x /= n;
  return v;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return 0;
  return ab / std::sqrt(aa * bb);
}

// Average of (j / position_j) over the relevant items, j counting relevant items so far.
inline double average_precision(const std::vector<int>& verdicts) {
  int relevant = 0;
  double total = 0;
  for (std::size_t pos = 1; pos <= verdicts.size(); ++pos) {
    if (verdicts[pos - 1]) {
      ++relevant;
      total += static_cast<double>(relevant) / static_cast<double>(pos);
    }
  }
  return relevant == 0 ? 0.0 : total / relevant;
}

}  // namespace oracle
