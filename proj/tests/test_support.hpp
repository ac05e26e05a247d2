#pragma once

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ragtutor/embeddings.hpp"
#include "ragtutor/error.hpp"

namespace testsupport {

template <typename Fn>
ragtutor::ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const ragtutor::Error& e) {
    return e.code();
  }
  FAIL("expected a ragtutor::Error");
  return ragtutor::ErrorCode::Internal;
}

inline ragtutor::embeddings::EmbeddingVector random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  double n2 = 0;
  for (auto& x : v) {
    x = gauss(rng);
    n2 += x * x;
  }
  const double n = std::sqrt(n2);
  for (auto& x : v) x /= n;
  return {std::move(v), "random"};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("ragtutor-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testsupport
