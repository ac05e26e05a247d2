#pragma once

#include <chrono>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace ragtutor::embeddings {

/// Unit-norm vector tagged with the provider that produced it.
struct EmbeddingVector {
  std::vector<double> values;
  std::string provider_id;

  int dimension() const { return static_cast<int>(values.size()); }
};

enum class ProviderKind { remote_http, deterministic_test };

struct EmbeddingProviderConfig {
  std::string provider_id = "hash-256";
  ProviderKind kind = ProviderKind::deterministic_test;
  std::string endpoint;
  int dimension = 256;
  std::chrono::milliseconds timeout{10'000};
  int max_batch = 64;
  int max_in_flight = 8;
  int retries = 2;
  std::chrono::milliseconds backoff_base{250};

  void validate() const;
  static EmbeddingProviderConfig from_json(const nlohmann::json& j);
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual const std::string& id() const = 0;
  virtual int dimension() const = 0;

  /// Output length and order match the input. Every output is unit-norm.
  virtual std::vector<EmbeddingVector> embed(std::span<const std::string> texts) = 0;
};

/// Signed feature hashing over lowercased alphanumeric tokens (64-bit FNV-1a).
class DeterministicProvider final : public EmbeddingProvider {
 public:
  explicit DeterministicProvider(int dimension = 256, std::string id = "hash-256");

  const std::string& id() const override { return id_; }
  int dimension() const override { return dimension_; }
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;

  EmbeddingVector embed_one(std::string_view text) const;

 private:
  int dimension_;
  std::string id_;
};

/// POST {"texts": [...]} -> {"vectors": [[...]]}; retries timeouts and 5xx with exponential backoff.
class RemoteHttpProvider final : public EmbeddingProvider {
 public:
  explicit RemoteHttpProvider(EmbeddingProviderConfig config);
  ~RemoteHttpProvider() override;

  const std::string& id() const override { return config_.provider_id; }
  int dimension() const override { return config_.dimension; }
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;

 private:
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts);

  struct Gate;
  EmbeddingProviderConfig config_;
  std::unique_ptr<Gate> gate_;
};

std::shared_ptr<EmbeddingProvider> make_provider(const EmbeddingProviderConfig& config);

/// Validates inputs (non-empty list, no blank text) and delegates to the provider.
std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts,
                                         EmbeddingProvider& provider);

EmbeddingVector embed_text(std::string_view text, EmbeddingProvider& provider);

/// Cosine similarity clamped to [-1, 1]. Throws DimensionMismatch.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
/// No-op on the zero vector.
void normalize(std::vector<double>& v);

}  // namespace ragtutor::embeddings
