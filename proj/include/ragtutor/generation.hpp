#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace ragtutor::generation {

enum class GenerationKind { remote_http, deterministic_stub, extractive_stub };

struct GenerationProviderConfig {
  std::string provider_id = "stub";
  GenerationKind kind = GenerationKind::deterministic_stub;
  std::string endpoint;
  std::chrono::milliseconds timeout{30000};
  int max_output_tokens = 1024;
  int max_in_flight = 8;
  int retries = 2;
  std::chrono::milliseconds backoff_base{250};

  /// Throws InvalidArgument.
  void validate() const;
  static GenerationProviderConfig from_json(const nlohmann::json& j);
};

struct GenerationRequest {
  std::string system;
  std::string user;
  double temperature = 0.3;
  int max_tokens = 1024;
};

struct GenerationResult {
  std::string text;
  int tokens_in = 0;
  int tokens_out = 0;
};

class GenerationProvider {
 public:
  virtual ~GenerationProvider() = default;
  virtual const std::string& id() const = 0;
  /// Throws ProviderUnavailable.
  virtual GenerationResult generate(const GenerationRequest& request) = 0;
};

/// Offline provider. Reads the "Mode:" line and the [Si] context markers from the system text
/// and answers "MODE:<mode> CONTEXT:[S1][S2]... ECHO:<first 80 chars of the user text>".
/// For quiz prompts it emits one well-formed question citing a context marker instead.
/// The extractive style answers with the leading sentence of the first two contexts, each followed
/// by its marker, which gives evaluation sweeps grounded prose to score.
class StubGenerationProvider final : public GenerationProvider {
 public:
  enum class Style { echo, extractive };

  explicit StubGenerationProvider(std::string id = "stub", Style style = Style::echo)
      : id_(std::move(id)), style_(style) {}
  const std::string& id() const override { return id_; }
  GenerationResult generate(const GenerationRequest& request) override;

 private:
  std::string id_;
  Style style_;
};

/// POST {"system","user","temperature","max_tokens"} -> {"text","tokens_in","tokens_out"}.
class RemoteGenerationProvider final : public GenerationProvider {
 public:
  explicit RemoteGenerationProvider(GenerationProviderConfig config);
  ~RemoteGenerationProvider() override;
  const std::string& id() const override { return config_.provider_id; }
  GenerationResult generate(const GenerationRequest& request) override;

 private:
  struct Gate;
  GenerationProviderConfig config_;
  std::unique_ptr<Gate> gate_;
};

/// Adapter for scripted providers in tests and fixtures.
class CallbackGenerationProvider final : public GenerationProvider {
 public:
  using Fn = std::function<GenerationResult(const GenerationRequest&)>;
  CallbackGenerationProvider(std::string id, Fn fn) : id_(std::move(id)), fn_(std::move(fn)) {}
  const std::string& id() const override { return id_; }
  GenerationResult generate(const GenerationRequest& request) override { return fn_(request); }

 private:
  std::string id_;
  Fn fn_;
};

std::shared_ptr<GenerationProvider> make_generation_provider(const GenerationProviderConfig& config);

/// Whitespace-separated word count, used for usage accounting by the stub.
int count_tokens(std::string_view text);

/// Marker line the quiz prompt carries so generators (and the stub) can recognise it.
inline constexpr std::string_view kQuizFence = "```quiz";

}  // namespace ragtutor::generation
