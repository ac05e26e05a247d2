#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragtutor/catalog.hpp"
#include "ragtutor/embeddings.hpp"
#include "ragtutor/generation.hpp"
#include "ragtutor/index.hpp"
#include "ragtutor/intent.hpp"
#include "ragtutor/jobs.hpp"
#include "ragtutor/pipeline.hpp"
#include "ragtutor/progress.hpp"
#include "ragtutor/quiz.hpp"
#include "ragtutor/store.hpp"
#include "ragtutor/tutor.hpp"

namespace ragtutor::gateway {

struct Principal {
  std::string user_id;
  Role role = Role::student;
  std::vector<std::string> course_memberships;
  std::string token;

  /// Admins belong to every course.
  bool member_of(const std::string& course_id) const;
  nlohmann::json to_json() const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_env();

struct GatewayConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  int workers = 4;
  std::size_t queue_capacity = 256;
  int http_threads = 16;
  std::uint64_t max_upload_bytes = 50ull * 1024 * 1024;
  int log_page_size = 50;
  /// Unset keeps all state in memory.
  std::optional<std::filesystem::path> store_root;
  std::optional<std::filesystem::path> templates_dir;
  std::optional<std::filesystem::path> exemplars_path;
  /// Base directory for sweep plans and their course bundles.
  std::optional<std::filesystem::path> eval_root;
  embeddings::EmbeddingProviderConfig embedding;
  generation::GenerationProviderConfig generation;
  index::IndexOptions index;
  std::vector<Principal> tokens;
  /// File the config came from; admin reloads re-read its tokens.
  std::optional<std::filesystem::path> source;

  /// Relative paths resolve against `base_dir`. Throws InvalidArgument.
  static GatewayConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static GatewayConfig load(const std::filesystem::path& file);

  /// RAGTUTOR_LISTEN (host:port), RAGTUTOR_PORT, RAGTUTOR_WORKERS, RAGTUTOR_STORE_ROOT,
  /// RAGTUTOR_EMBEDDING_ENDPOINT and RAGTUTOR_GENERATION_ENDPOINT (both switch to the remote provider).
  void apply_env(const EnvLookup& env);
  void validate() const;
};

/// Parses the "tokens" list: [{token, user_id, role, courses}]. Throws InvalidArgument.
std::vector<Principal> parse_tokens(const nlohmann::json& j);

struct ApiRequest {
  struct Part {
    std::string name;
    std::string filename;
    std::string content_type;
    std::string content;
  };

  std::string method;
  std::string path;
  /// Keys are lower case.
  std::map<std::string, std::string> headers;
  std::map<std::string, std::string> query;
  std::string body;
  std::vector<Part> parts;

  std::string header(const std::string& name) const;
  const Part* part(const std::string& name) const;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;

  nlohmann::json json() const;
};

/// Where a route finds the course its membership check applies to.
enum class CourseSource { none, path, quiz, job };

struct RouteSpec {
  std::string method;
  /// Segments in braces match any single path segment.
  std::string pattern;
  Role min_role = Role::student;
  CourseSource course = CourseSource::none;
};

class Gateway {
 public:
  explicit Gateway(GatewayConfig config);
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  static const std::vector<RouteSpec>& routes();

  /// Resolves the bearer token. Throws Unauthenticated (no or unknown token) and Forbidden
  /// (role below `required` or not a member of `course_id`).
  Principal authorize(const ApiRequest& request, Role required, const std::string& course_id = {}) const;

  /// In-process dispatch; errors become {code, message, detail} bodies.
  ApiResponse handle(const ApiRequest& request);

  /// Starts the job workers; pending jobs from a previous run resume.
  void start();
  /// Serves HTTP until stop(). Returns false when the address cannot be bound.
  bool listen();
  /// Binds an ephemeral port on the configured host, serves in the background and returns the port.
  int listen_in_background();
  void stop();

  /// Re-reads templates, intent exemplars and tokens.
  nlohmann::json reload();

  const GatewayConfig& config() const { return config_; }
  store::Store& store() { return *store_; }
  Catalog& catalog() { return *catalog_; }
  index::VectorIndex& vector_index() { return *index_; }
  IngestPipeline& pipeline() { return *pipeline_; }
  tutor::Tutor& tutor() { return *tutor_; }
  quiz::QuizService& quizzes() { return *quizzes_; }
  progress::ProgressTracker& progress() { return *progress_; }
  jobs::JobQueue& jobs() { return *jobs_; }

 private:
  struct Server;
  struct Match;

  void mount();
  void register_job_handlers();
  void restore_index();
  void save_index(const std::string& course_id);
  void load_tokens(const std::vector<Principal>& tokens);
  void grant_membership(const Principal& principal, const std::string& course_id);
  std::string course_of(const RouteSpec& route, const Match& match) const;
  ApiResponse dispatch(const RouteSpec& route, const Match& match, const ApiRequest& request,
                       const Principal& principal);

  GatewayConfig config_;
  std::unique_ptr<store::Store> store_;
  std::unique_ptr<Catalog> catalog_;
  std::unique_ptr<index::VectorIndex> index_;
  std::shared_ptr<embeddings::EmbeddingProvider> embedder_;
  std::shared_ptr<generation::GenerationProvider> generator_;
  std::unique_ptr<progress::ProgressTracker> progress_;
  std::unique_ptr<IngestPipeline> pipeline_;
  std::unique_ptr<tutor::Tutor> tutor_;
  std::unique_ptr<quiz::QuizService> quizzes_;
  std::unique_ptr<jobs::JobQueue> jobs_;

  mutable std::shared_mutex principals_mu_;
  std::map<std::string, Principal> principals_;
  std::map<std::string, std::vector<std::string>> granted_;

  mutable std::shared_mutex intent_mu_;
  std::optional<intent::IntentModel> intent_;

  std::mutex index_io_mu_;
  std::unique_ptr<Server> server_;
};

/// Chat mode for a prompt typed without an explicit mode: explanation and material requests get
/// quick answers, test requests the exam coach; low confidence falls back to explanation.
tutor::Mode mode_for_intent(const intent::IntentResult& result);

}  // namespace ragtutor::gateway
