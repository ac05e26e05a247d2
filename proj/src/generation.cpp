#include "ragtutor/generation.hpp"

#include <algorithm>
#include <regex>
#include <semaphore>
#include <sstream>
#include <thread>
#include <vector>

#include "http_util.hpp"
#include "ragtutor/error.hpp"
#include "ragtutor/text.hpp"

namespace ragtutor::generation {

void GenerationProviderConfig::validate() const {
  if (provider_id.empty()) throw Error(ErrorCode::InvalidArgument, "generation provider_id is required");
  if (kind == GenerationKind::remote_http && endpoint.empty())
    throw Error(ErrorCode::InvalidArgument, "remote generation provider needs an endpoint");
  if (max_output_tokens < 1 || max_in_flight < 1 || retries < 0)
    throw Error(ErrorCode::InvalidArgument, "invalid generation provider limits");
}

GenerationProviderConfig GenerationProviderConfig::from_json(const nlohmann::json& j) {
  GenerationProviderConfig c;
  const auto kind = j.value("provider", j.value("kind", std::string("deterministic_stub")));
  if (kind == "deterministic_stub" || kind == "stub") {
    c.kind = GenerationKind::deterministic_stub;
  } else if (kind == "deterministic_extractive") {
    c.kind = GenerationKind::extractive_stub;
    c.provider_id = "extractive";
  } else if (kind == "remote_http") {
    c.kind = GenerationKind::remote_http;
    c.provider_id = "remote";
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown generation provider", kind);
  }
  c.provider_id = j.value("provider_id", c.provider_id);
  c.endpoint = j.value("endpoint", std::string());
  c.timeout = std::chrono::milliseconds(j.value("timeout_ms", 30000));
  c.max_output_tokens = j.value("max_output_tokens", 1024);
  c.max_in_flight = j.value("max_in_flight", 8);
  c.retries = j.value("retries", 2);
  c.backoff_base = std::chrono::milliseconds(j.value("backoff_ms", 250));
  c.validate();
  return c;
}

int count_tokens(std::string_view text) {
  int n = 0;
  bool in_word = false;
  for (char ch : text) {
    const bool space = ch == ' ' || ch == '\n' || ch == '\t' || ch == '\r' || ch == '\f';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

namespace {

struct StubContext {
  int marker = 0;
  std::string title;
  int page = 0;
  std::string first_line;
};

std::vector<StubContext> read_contexts(const std::string& system) {
  static const std::regex header(R"(^\[S(\d+)\] (.*), page (\d+)$)");
  std::vector<StubContext> out;
  std::istringstream in(system);
  std::string line;
  StubContext* pending = nullptr;
  while (std::getline(in, line)) {
    std::smatch m;
    if (std::regex_match(line, m, header)) {
      out.push_back({std::stoi(m[1]), m[2], std::stoi(m[3]), {}});
      pending = &out.back();
    } else if (pending && !is_blank(line)) {
      pending->first_line = std::string(trim(line));
      pending = nullptr;
    }
  }
  return out;
}

std::string line_value(const std::string& text, std::string_view key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key, 0) == 0) return std::string(trim(std::string_view(line).substr(key.size())));
  }
  return {};
}

std::string first_codepoints(std::string_view text, std::size_t n) {
  const auto offsets = codepoint_offsets(text);
  if (offsets.size() - 1 <= n) return std::string(text);
  return std::string(text.substr(0, offsets[n]));
}

std::string short_statement(const std::string& text) {
  auto sentences = split_sentences(text);
  std::string s = sentences.empty() ? text : sentences.front();
  const auto offsets = codepoint_offsets(s);
  if (offsets.size() - 1 > 80) {
    s = s.substr(0, offsets[80]);
    if (auto cut = s.find_last_of(' '); cut != std::string::npos && cut > 0) s = s.substr(0, cut);
  }
  return std::string(trim(s));
}

std::string stub_quiz(const GenerationRequest& request, const std::vector<StubContext>& contexts) {
  if (contexts.empty()) return "```quiz\n```";
  const std::string existing = line_value(request.user, "Existing questions:");
  const int m = existing.empty() ? 0 : std::max(0, std::atoi(existing.c_str()));
  const auto& c = contexts[static_cast<std::size_t>(m) % contexts.size()];
  std::string bloom = line_value(request.user, "Bloom levels:");
  if (auto comma = bloom.find(','); comma != std::string::npos) bloom = bloom.substr(0, comma);
  bloom = std::string(trim(bloom));
  if (bloom.empty()) bloom = "remember";

  std::string statement = short_statement(c.first_line);
  if (statement.empty()) statement = c.title;
  std::ostringstream out;
  out << kQuizFence << "\n"
      << "Q: Which statement appears in " << c.title << " (page " << c.page << ")?\n"
      << "TYPE: multichoice\n"
      << "BLOOM: " << bloom << "\n"
      << "A: " << statement << "\n"
      << "X: The material states the opposite of this.\n"
      << "X: The material does not discuss this topic.\n"
      << "EXPLAIN: The statement is taken from " << c.title << ", page " << c.page << ".\n"
      << "CITE: [S" << c.marker << "]\n"
      << "```\n";
  return out.str();
}

}  // namespace

GenerationResult StubGenerationProvider::generate(const GenerationRequest& request) {
  const auto contexts = read_contexts(request.system);
  GenerationResult r;
  if (request.system.find(kQuizFence) != std::string::npos) {
    r.text = stub_quiz(request, contexts);
  } else if (style_ == Style::extractive) {
    std::string text;
    for (std::size_t i = 0; i < contexts.size() && i < 2; ++i) {
      const auto statement = short_statement(contexts[i].first_line);
      if (statement.empty()) continue;
      if (!text.empty()) text += " ";
      text += statement + " [S" + std::to_string(contexts[i].marker) + "]";
    }
    r.text = text.empty() ? "I don't know." : text;
  } else {
    std::string mode = line_value(request.system, "Mode:");
    std::string text = "MODE:" + mode + " CONTEXT:";
    for (const auto& c : contexts) text += "[S" + std::to_string(c.marker) + "]";
    text += " ECHO:" + first_codepoints(request.user, 80);
    r.text = std::move(text);
  }
  r.tokens_in = count_tokens(request.system) + count_tokens(request.user);
  r.tokens_out = count_tokens(r.text);
  return r;
}

struct RemoteGenerationProvider::Gate {
  explicit Gate(int n) : slots(n) {}
  std::counting_semaphore<1024> slots;
};

RemoteGenerationProvider::RemoteGenerationProvider(GenerationProviderConfig config)
    : config_(std::move(config)) {
  config_.validate();
  gate_ = std::make_unique<Gate>(std::min(config_.max_in_flight, 1024));
}

RemoteGenerationProvider::~RemoteGenerationProvider() = default;

GenerationResult RemoteGenerationProvider::generate(const GenerationRequest& request) {
  const auto endpoint = detail::split_endpoint(config_.endpoint);
  const nlohmann::json body = {{"system", request.system},
                               {"user", request.user},
                               {"temperature", request.temperature},
                               {"max_tokens", std::min(request.max_tokens, config_.max_output_tokens)}};
  detail::HttpOutcome outcome;
  int attempt = 0;
  for (;; ++attempt) {
    gate_->slots.acquire();
    try {
      outcome = detail::post_json(endpoint, body, config_.timeout);
    } catch (...) {
      gate_->slots.release();
      throw;
    }
    gate_->slots.release();
    if (!outcome.retryable() || attempt >= config_.retries) break;
    std::this_thread::sleep_for(config_.backoff_base * (1 << attempt));
  }
  if (outcome.status != 200) {
    throw Error(ErrorCode::ProviderUnavailable, "generation provider unavailable",
                "retries=" + std::to_string(attempt) + " status=" + std::to_string(outcome.status) +
                    (outcome.transport_error.empty() ? "" : " " + outcome.transport_error));
  }
  try {
    const auto j = nlohmann::json::parse(outcome.body);
    GenerationResult r;
    r.text = j.at("text").get<std::string>();
    r.tokens_in = j.value("tokens_in", 0);
    r.tokens_out = j.value("tokens_out", 0);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ProviderUnavailable, "generation provider returned an invalid body", e.what());
  }
}

std::shared_ptr<GenerationProvider> make_generation_provider(const GenerationProviderConfig& config) {
  config.validate();
  if (config.kind == GenerationKind::remote_http) return std::make_shared<RemoteGenerationProvider>(config);
  if (config.kind == GenerationKind::extractive_stub)
    return std::make_shared<StubGenerationProvider>(config.provider_id, StubGenerationProvider::Style::extractive);
  return std::make_shared<StubGenerationProvider>(config.provider_id);
}

}  // namespace ragtutor::generation
