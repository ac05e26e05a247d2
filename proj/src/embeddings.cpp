#include "ragtutor/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <semaphore>
#include <thread>

#include "http_util.hpp"
#include "ragtutor/error.hpp"
#include "ragtutor/text.hpp"

namespace ragtutor::embeddings {

double dot(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void normalize(std::vector<double>& v) {
  const double norm = l2_norm(v);
  if (norm <= 0.0) return;
  for (auto& x : v) x /= norm;
}

void EmbeddingProviderConfig::validate() const {
  if (dimension < 8) throw Error(ErrorCode::InvalidArgument, "embedding dimension must be >= 8");
  if (max_batch < 1) throw Error(ErrorCode::InvalidArgument, "max_batch must be >= 1");
  if (max_in_flight < 1) throw Error(ErrorCode::InvalidArgument, "max_in_flight must be >= 1");
  if (kind == ProviderKind::remote_http && endpoint.empty())
    throw Error(ErrorCode::InvalidArgument, "remote embedding provider needs an endpoint");
}

EmbeddingProviderConfig EmbeddingProviderConfig::from_json(const nlohmann::json& j) {
  EmbeddingProviderConfig c;
  const auto kind = j.value("provider", j.value("kind", std::string("deterministic_test")));
  if (kind == "remote_http") {
    c.kind = ProviderKind::remote_http;
    c.dimension = 384;
    c.provider_id = "remote";
  } else if (kind == "deterministic_test") {
    c.kind = ProviderKind::deterministic_test;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown embedding provider", kind);
  }
  c.provider_id = j.value("provider_id", c.provider_id);
  c.endpoint = j.value("endpoint", c.endpoint);
  c.dimension = j.value("dimension", c.dimension);
  c.timeout = std::chrono::milliseconds(j.value("timeout_ms", static_cast<int>(c.timeout.count())));
  c.max_batch = j.value("max_batch", c.max_batch);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  c.retries = j.value("retries", c.retries);
  c.backoff_base =
      std::chrono::milliseconds(j.value("backoff_ms", static_cast<int>(c.backoff_base.count())));
  if (c.kind == ProviderKind::deterministic_test && !j.contains("provider_id"))
    c.provider_id = "hash-" + std::to_string(c.dimension);
  c.validate();
  return c;
}

DeterministicProvider::DeterministicProvider(int dimension, std::string id)
    : dimension_(dimension), id_(std::move(id)) {
  if (dimension_ < 8) throw Error(ErrorCode::InvalidArgument, "embedding dimension must be >= 8");
}

EmbeddingVector DeterministicProvider::embed_one(std::string_view text) const {
  std::vector<double> values(static_cast<std::size_t>(dimension_), 0.0);
  const auto d = static_cast<std::uint64_t>(dimension_);
  auto add = [&](std::string_view token) {
    const std::uint64_t h = fnv1a64(token);
    values[h % d] += (h >> 63) == 0 ? 1.0 : -1.0;
  };
  for (const auto& token : tokenize(text)) add(token);
  // Token-free text (punctuation only) or perfectly cancelling tokens: hash the whole string.
  if (l2_norm(values) == 0.0) add(trim(text));
  normalize(values);
  return EmbeddingVector{std::move(values), id_};
}

std::vector<EmbeddingVector> DeterministicProvider::embed(std::span<const std::string> texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_one(t));
  return out;
}

struct RemoteHttpProvider::Gate {
  explicit Gate(int n) : slots(n) {}
  std::counting_semaphore<1024> slots;
};

RemoteHttpProvider::RemoteHttpProvider(EmbeddingProviderConfig config)
    : config_(std::move(config)) {
  config_.validate();
  gate_ = std::make_unique<Gate>(std::min(config_.max_in_flight, 1024));
}

RemoteHttpProvider::~RemoteHttpProvider() = default;

std::vector<EmbeddingVector> RemoteHttpProvider::embed(std::span<const std::string> texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  const auto batch = static_cast<std::size_t>(config_.max_batch);
  for (std::size_t i = 0; i < texts.size(); i += batch) {
    auto part = embed_batch(texts.subspan(i, std::min(batch, texts.size() - i)));
    for (auto& v : part) out.push_back(std::move(v));
  }
  return out;
}

std::vector<EmbeddingVector> RemoteHttpProvider::embed_batch(std::span<const std::string> texts) {
  const auto endpoint = detail::split_endpoint(config_.endpoint);
  const nlohmann::json request = {{"texts", std::vector<std::string>(texts.begin(), texts.end())}};

  detail::HttpOutcome outcome;
  int attempt = 0;
  for (;; ++attempt) {
    gate_->slots.acquire();
    try {
      outcome = detail::post_json(endpoint, request, config_.timeout);
    } catch (...) {
      gate_->slots.release();
      throw;
    }
    gate_->slots.release();
    if (!outcome.retryable() || attempt >= config_.retries) break;
    std::this_thread::sleep_for(config_.backoff_base * (1 << attempt));
  }

  if (outcome.retryable()) {
    throw Error(ErrorCode::ProviderUnavailable, "embedding provider unavailable",
                "retries=" + std::to_string(attempt) + " status=" + std::to_string(outcome.status) +
                    (outcome.transport_error.empty() ? "" : " " + outcome.transport_error));
  }
  if (outcome.status != 200) {
    throw Error(ErrorCode::ProviderUnavailable, "embedding provider rejected the request",
                "status=" + std::to_string(outcome.status));
  }

  nlohmann::json body;
  try {
    body = nlohmann::json::parse(outcome.body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ProviderUnavailable, "embedding provider returned invalid JSON", e.what());
  }
  if (!body.contains("vectors") || !body["vectors"].is_array() ||
      body["vectors"].size() != texts.size()) {
    throw Error(ErrorCode::ProviderUnavailable, "embedding response has wrong vector count");
  }

  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& row : body["vectors"]) {
    if (!row.is_array() || static_cast<int>(row.size()) != config_.dimension) {
      throw Error(ErrorCode::DimensionMismatch, "remote embedding has unexpected dimension",
                  "expected=" + std::to_string(config_.dimension) +
                      " got=" + std::to_string(row.is_array() ? row.size() : 0));
    }
    std::vector<double> values = row.get<std::vector<double>>();
    if (l2_norm(values) == 0.0)
      throw Error(ErrorCode::ProviderUnavailable, "remote embedding is the zero vector");
    normalize(values);
    out.push_back(EmbeddingVector{std::move(values), config_.provider_id});
  }
  return out;
}

std::shared_ptr<EmbeddingProvider> make_provider(const EmbeddingProviderConfig& config) {
  config.validate();
  if (config.kind == ProviderKind::remote_http) return std::make_shared<RemoteHttpProvider>(config);
  return std::make_shared<DeterministicProvider>(config.dimension, config.provider_id);
}

std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts,
                                         EmbeddingProvider& provider) {
  if (texts.empty()) throw Error(ErrorCode::EmptyText, "no texts to embed");
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (is_blank(texts[i]))
      throw Error(ErrorCode::EmptyText, "text is empty after trimming", "index=" + std::to_string(i));
  }
  auto out = provider.embed(texts);
  if (out.size() != texts.size())
    throw Error(ErrorCode::Internal, "provider returned a different number of vectors");
  return out;
}

EmbeddingVector embed_text(std::string_view text, EmbeddingProvider& provider) {
  const std::string copy(text);
  return embed_texts(std::span<const std::string>(&copy, 1), provider).front();
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.values.size() != b.values.size())
    throw Error(ErrorCode::DimensionMismatch, "vectors have different dimensions",
                std::to_string(a.values.size()) + " vs " + std::to_string(b.values.size()));
  const double na = l2_norm(a.values);
  const double nb = l2_norm(b.values);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a.values, b.values) / (na * nb), -1.0, 1.0);
}

}  // namespace ragtutor::embeddings
