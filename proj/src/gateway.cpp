#include "ragtutor/gateway.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "ragtutor/error.hpp"
#include "ragtutor/evalsuite.hpp"
#include "ragtutor/text.hpp"

namespace ragtutor::gateway {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int rank(Role r) {
  switch (r) {
    case Role::student: return 0;
    case Role::teacher: return 1;
    case Role::admin: return 2;
  }
  return 0;
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_relative() && !base.empty() ? base / p : p;
}

std::optional<fs::path> opt_path(const json& j, const char* key, const fs::path& base) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_string()) throw Error(ErrorCode::InvalidArgument, "config value must be a path", key);
  return resolve(base, j[key].get<std::string>());
}

int parse_int(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, std::string("not an integer: ") + what, s);
  }
}

bool valid_course_id(const std::string& id) {
  static const std::regex re("[A-Za-z0-9_-]{1,64}");
  return std::regex_match(id, re);
}

json error_body(ErrorCode code, const std::string& message, const std::string& detail) {
  return {{"code", to_string(code)}, {"message", message}, {"detail", detail}};
}

ApiResponse json_response(const json& body, int status = 200) {
  ApiResponse r;
  r.status = status;
  r.body = body.dump();
  return r;
}

ApiResponse error_response(const Error& e) {
  return json_response(error_body(e.code(), e.what(), e.detail()), http_status(e.code()));
}

json parse_body(const ApiRequest& req) {
  if (req.body.empty()) return json::object();
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw Error(ErrorCode::MalformedPayload, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedPayload, "request body is not valid JSON", e.what());
  }
}

std::string string_field(const json& body, const char* key, bool required) {
  if (!body.contains(key) || body[key].is_null()) {
    if (required) throw Error(ErrorCode::InvalidArgument, "missing field", key);
    return {};
  }
  if (!body[key].is_string()) throw Error(ErrorCode::InvalidArgument, "field must be a string", key);
  return body[key].get<std::string>();
}

json blob_to_json(const store::BlobRef& b) {
  return {{"blob_id", b.blob_id},
          {"course_id", b.course_id},
          {"content_type", b.content_type},
          {"size_bytes", b.size_bytes},
          {"checksum", b.checksum}};
}

store::BlobRef blob_from_json(const json& j) {
  store::BlobRef b;
  b.blob_id = j.at("blob_id").get<std::string>();
  b.course_id = j.at("course_id").get<std::string>();
  b.content_type = j.value("content_type", std::string());
  b.size_bytes = j.value("size_bytes", std::uint64_t{0});
  b.checksum = j.value("checksum", std::string());
  return b;
}

ingest::SourceFormat infer_format(const std::string& filename) {
  const auto ext = to_lower_ascii(fs::path(filename).extension().string());
  if (ext == ".md" || ext == ".markdown") return ingest::SourceFormat::markdown;
  if (ext == ".json") return ingest::SourceFormat::external_extracted;
  if (ext.empty() || ext == ".txt" || ext == ".text") return ingest::SourceFormat::plain_text;
  throw Error(ErrorCode::UnsupportedFormat, "unsupported upload type", filename);
}

ingest::ChunkProfile profile_for(Discipline d) {
  return d == Discipline::humanities ? ingest::ChunkProfile::humanities() : ingest::ChunkProfile::stem();
}

/// Parses and normalizes a quiz generation request body.
quiz::GenerateRequest generate_request(const std::string& course_id, const json& body) {
  quiz::GenerateRequest r;
  r.course_id = course_id;
  try {
    if (body.contains("scope")) r.scope = quiz::QuizScope::from_json(body["scope"]);
    if (body.contains("n_questions")) r.n_questions = body["n_questions"].get<int>();
    if (body.contains("top_k")) r.top_k = body["top_k"].get<int>();
    if (body.contains("kinds")) {
      r.kinds.clear();
      for (const auto& k : body["kinds"]) r.kinds.push_back(quiz::parse_question_kind(k.get<std::string>()));
    }
    if (body.contains("bloom_mix")) {
      r.bloom_mix.clear();
      for (const auto& [level, weight] : body["bloom_mix"].items())
        r.bloom_mix[quiz::parse_bloom_level(level)] = weight.get<double>();
    }
    r.requested_by = body.value("requested_by", std::string());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "malformed quiz request", e.what());
  }
  if (r.n_questions < 1 || r.n_questions > quiz::kMaxQuestions)
    throw Error(ErrorCode::InvalidArgument, "n_questions must be in [1, 50]", std::to_string(r.n_questions));
  if (r.kinds.empty()) throw Error(ErrorCode::InvalidArgument, "kinds must not be empty");
  if (r.top_k < 1) throw Error(ErrorCode::InvalidArgument, "top_k must be positive");
  quiz::apportion_bloom(r.n_questions, r.bloom_mix);
  return r;
}

json generate_request_json(const quiz::GenerateRequest& r) {
  json kinds = json::array();
  for (auto k : r.kinds) kinds.push_back(quiz::to_string(k));
  json mix = json::object();
  for (const auto& [level, w] : r.bloom_mix) mix[std::string(quiz::to_string(level))] = w;
  return {{"scope", r.scope.to_json()}, {"n_questions", r.n_questions}, {"kinds", kinds},
          {"bloom_mix", mix},           {"top_k", r.top_k},             {"requested_by", r.requested_by}};
}

/// Students taking a quiz must not see which option is correct.
json student_view(const quiz::Quiz& q) {
  auto j = q.to_json();
  for (auto& question : j["questions"]) {
    for (auto& o : question["options"]) o.erase("correct");
    question.erase("explanation");
    question.erase("citations");
  }
  return j;
}

}  // namespace

bool Principal::member_of(const std::string& course_id) const {
  if (role == Role::admin) return true;
  return std::find(course_memberships.begin(), course_memberships.end(), course_id) != course_memberships.end();
}

json Principal::to_json() const {
  return {{"user_id", user_id}, {"role", to_string(role)}, {"courses", course_memberships}};
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
}

std::vector<Principal> parse_tokens(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::InvalidArgument, "tokens must be a list");
  std::vector<Principal> out;
  std::set<std::string> seen;
  for (const auto& t : j) {
    Principal p;
    try {
      p.token = t.at("token").get<std::string>();
      p.user_id = t.at("user_id").get<std::string>();
      p.role = parse_role(t.at("role").get<std::string>());
      p.course_memberships = t.value("courses", std::vector<std::string>{});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, "malformed token entry", e.what());
    }
    if (p.token.empty() || p.user_id.empty()) throw Error(ErrorCode::InvalidArgument, "token and user_id are required");
    if (!seen.insert(p.token).second) throw Error(ErrorCode::InvalidArgument, "duplicate token", p.user_id);
    out.push_back(std::move(p));
  }
  return out;
}

GatewayConfig GatewayConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
  GatewayConfig c;
  try {
    if (j.contains("listen")) {
      const auto& l = j["listen"];
      c.host = l.value("host", c.host);
      c.port = l.value("port", c.port);
    }
    c.workers = j.value("workers", c.workers);
    c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
    c.http_threads = j.value("http_threads", c.http_threads);
    c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
    c.log_page_size = j.value("log_page_size", c.log_page_size);
    if (j.contains("index")) {
      const auto mode = j["index"].value("mode", std::string("exact"));
      if (mode == "approximate") c.index.mode = index::SearchMode::approximate;
      else if (mode != "exact") throw Error(ErrorCode::InvalidArgument, "unknown index mode", mode);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "malformed config", e.what());
  }
  c.store_root = opt_path(j, "store_root", base_dir);
  c.templates_dir = opt_path(j, "templates_dir", base_dir);
  c.exemplars_path = opt_path(j, "intent_exemplars", base_dir);
  c.eval_root = opt_path(j, "eval_root", base_dir);
  if (j.contains("embedding")) c.embedding = embeddings::EmbeddingProviderConfig::from_json(j["embedding"]);
  if (j.contains("generation")) c.generation = generation::GenerationProviderConfig::from_json(j["generation"]);
  if (j.contains("tokens")) c.tokens = parse_tokens(j["tokens"]);
  return c;
}

GatewayConfig GatewayConfig::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::NotFound, "cannot read config", file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "config is not valid JSON", e.what());
  }
  auto c = from_json(j, file.parent_path());
  c.source = file;
  return c;
}

void GatewayConfig::apply_env(const EnvLookup& env) {
  if (auto v = env("RAGTUTOR_LISTEN")) {
    const auto colon = v->rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "RAGTUTOR_LISTEN must be host:port", *v);
    host = v->substr(0, colon);
    port = parse_int(v->substr(colon + 1), "RAGTUTOR_LISTEN");
  }
  if (auto v = env("RAGTUTOR_PORT")) port = parse_int(*v, "RAGTUTOR_PORT");
  if (auto v = env("RAGTUTOR_WORKERS")) workers = parse_int(*v, "RAGTUTOR_WORKERS");
  if (auto v = env("RAGTUTOR_STORE_ROOT")) store_root = fs::path(*v);
  if (auto v = env("RAGTUTOR_EMBEDDING_ENDPOINT")) {
    if (embedding.kind != embeddings::ProviderKind::remote_http) {
      embedding.kind = embeddings::ProviderKind::remote_http;
      embedding.provider_id = "remote";
    }
    embedding.endpoint = *v;
  }
  if (auto v = env("RAGTUTOR_GENERATION_ENDPOINT")) {
    if (generation.kind != generation::GenerationKind::remote_http) {
      generation.kind = generation::GenerationKind::remote_http;
      generation.provider_id = "remote";
    }
    generation.endpoint = *v;
  }
}

void GatewayConfig::validate() const {
  if (host.empty()) throw Error(ErrorCode::InvalidArgument, "listen host is empty");
  if (port < 0 || port > 65535) throw Error(ErrorCode::InvalidArgument, "port out of range");
  if (workers < 1) throw Error(ErrorCode::InvalidArgument, "workers must be at least 1");
  if (queue_capacity < 1) throw Error(ErrorCode::InvalidArgument, "queue_capacity must be at least 1");
  if (http_threads < 1) throw Error(ErrorCode::InvalidArgument, "http_threads must be at least 1");
  if (log_page_size < 1) throw Error(ErrorCode::InvalidArgument, "log_page_size must be at least 1");
  embedding.validate();
  generation.validate();
}

std::string ApiRequest::header(const std::string& name) const {
  auto it = headers.find(to_lower_ascii(name));
  return it == headers.end() ? std::string() : it->second;
}

const ApiRequest::Part* ApiRequest::part(const std::string& name) const {
  for (const auto& p : parts)
    if (p.name == name) return &p;
  return nullptr;
}

json ApiResponse::json() const { return nlohmann::json::parse(body); }

tutor::Mode mode_for_intent(const intent::IntentResult& result) {
  if (result.low_confidence) return tutor::Mode::quick;
  switch (result.label) {
    case intent::IntentLabel::test_generation: return tutor::Mode::exam_coach;
    case intent::IntentLabel::explanation:
    case intent::IntentLabel::material_generation: return tutor::Mode::quick;
  }
  return tutor::Mode::quick;
}

namespace {

enum class RouteId {
  create_course,
  me,
  upload,
  poll_job,
  chat,
  session_turns,
  generate_quiz,
  list_quizzes,
  get_quiz,
  review_quiz,
  export_quiz,
  attempt_quiz,
  course_progress,
  course_logs,
  eval_sweep,
  admin_reload,
};

struct RouteEntry {
  RouteId id;
  RouteSpec spec;
};

const std::vector<RouteEntry>& route_table() {
  static const std::vector<RouteEntry> table = {
      {RouteId::create_course, {"POST", "/courses", Role::teacher, CourseSource::none}},
      {RouteId::me, {"GET", "/me", Role::student, CourseSource::none}},
      {RouteId::upload, {"POST", "/courses/{id}/materials", Role::teacher, CourseSource::path}},
      {RouteId::poll_job, {"GET", "/jobs/{id}", Role::student, CourseSource::job}},
      {RouteId::chat, {"POST", "/courses/{id}/chat", Role::student, CourseSource::path}},
      {RouteId::session_turns, {"GET", "/courses/{id}/sessions/{sid}/turns", Role::student, CourseSource::path}},
      {RouteId::generate_quiz, {"POST", "/courses/{id}/quizzes:generate", Role::student, CourseSource::path}},
      {RouteId::list_quizzes, {"GET", "/courses/{id}/quizzes", Role::student, CourseSource::path}},
      {RouteId::get_quiz, {"GET", "/quizzes/{id}", Role::student, CourseSource::quiz}},
      {RouteId::review_quiz, {"POST", "/quizzes/{id}/review", Role::teacher, CourseSource::quiz}},
      {RouteId::export_quiz, {"GET", "/quizzes/{id}/export.xml", Role::teacher, CourseSource::quiz}},
      {RouteId::attempt_quiz, {"POST", "/quizzes/{id}/attempts", Role::student, CourseSource::quiz}},
      {RouteId::course_progress, {"GET", "/courses/{id}/progress", Role::student, CourseSource::path}},
      {RouteId::course_logs, {"GET", "/courses/{id}/logs", Role::teacher, CourseSource::path}},
      {RouteId::eval_sweep, {"POST", "/eval/sweep", Role::admin, CourseSource::none}},
      {RouteId::admin_reload, {"POST", "/admin/reload", Role::admin, CourseSource::none}},
  };
  return table;
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

struct Gateway::Match {
  RouteId id;
  std::map<std::string, std::string> params;

  const std::string& param(const std::string& name) const { return params.at(name); }
};

struct Gateway::Server {
  httplib::Server http;
  std::thread thread;
};

const std::vector<RouteSpec>& Gateway::routes() {
  static const std::vector<RouteSpec> specs = [] {
    std::vector<RouteSpec> out;
    for (const auto& e : route_table()) out.push_back(e.spec);
    return out;
  }();
  return specs;
}

Gateway::Gateway(GatewayConfig config) : config_(std::move(config)) {
  config_.validate();
  store::StoreOptions so;
  so.root = config_.store_root;
  so.max_blob_bytes = std::max<std::uint64_t>(so.max_blob_bytes, config_.max_upload_bytes);
  store_ = std::make_unique<store::Store>(so);
  catalog_ = std::make_unique<Catalog>(*store_);
  index_ = std::make_unique<index::VectorIndex>(config_.index);
  embedder_ = embeddings::make_provider(config_.embedding);
  generator_ = generation::make_generation_provider(config_.generation);
  progress_ = std::make_unique<progress::ProgressTracker>(*store_, *catalog_);
  pipeline_ = std::make_unique<IngestPipeline>(*catalog_, *index_, *embedder_);
  auto templates = config_.templates_dir ? tutor::TemplateSet::load(*config_.templates_dir) : tutor::TemplateSet::defaults();
  tutor_ = std::make_unique<tutor::Tutor>(*catalog_, *index_, *embedder_, *generator_, progress_.get(), templates);
  quizzes_ = std::make_unique<quiz::QuizService>(*catalog_, *index_, *embedder_, *generator_, progress_.get());
  jobs_ = std::make_unique<jobs::JobQueue>(*store_, jobs::JobQueueOptions{config_.workers, config_.queue_capacity});

  load_tokens(config_.tokens);
  for (const auto& r : store_->fetch_entities(store::EntityKind::user))
    granted_[r.entity_id] = r.body.value("courses", std::vector<std::string>{});
  if (config_.exemplars_path) {
    try {
      intent_ = intent::fit_centroids(intent::load_exemplars(*config_.exemplars_path), *embedder_);
    } catch (const Error& e) {
      std::cerr << "intent routing disabled: " << e.what() << " " << e.detail() << "\n";
    }
  }
  restore_index();
  register_job_handlers();
}

Gateway::~Gateway() { stop(); }

void Gateway::load_tokens(const std::vector<Principal>& tokens) {
  std::map<std::string, Principal> next;
  for (const auto& p : tokens) next[p.token] = p;
  std::unique_lock lock(principals_mu_);
  principals_ = std::move(next);
}

void Gateway::grant_membership(const Principal& principal, const std::string& course_id) {
  const auto& user_id = principal.user_id;
  std::unique_lock lock(principals_mu_);
  auto& courses = granted_[user_id];
  if (std::find(courses.begin(), courses.end(), course_id) != courses.end()) return;
  courses.push_back(course_id);
  store::EntityRecord r;
  r.kind = store::EntityKind::user;
  r.entity_id = user_id;
  r.body = {{"role", to_string(principal.role)}, {"courses", courses}};
  if (auto existing = store_->get(store::EntityKind::user, user_id)) r.version = existing->version;
  store_->persist_entity(std::move(r));
}

Principal Gateway::authorize(const ApiRequest& request, Role required, const std::string& course_id) const {
  const auto header = request.header("authorization");
  static const std::string kBearer = "Bearer ";
  if (header.size() <= kBearer.size() || header.compare(0, kBearer.size(), kBearer) != 0)
    throw Error(ErrorCode::Unauthenticated, "missing bearer token");
  const auto token = trim(std::string_view(header).substr(kBearer.size()));
  Principal p;
  {
    std::shared_lock lock(principals_mu_);
    auto it = principals_.find(std::string(token));
    if (it == principals_.end()) throw Error(ErrorCode::Unauthenticated, "unknown token");
    p = it->second;
    if (auto g = granted_.find(p.user_id); g != granted_.end()) {
      for (const auto& c : g->second)
        if (!p.member_of(c)) p.course_memberships.push_back(c);
    }
  }
  if (rank(p.role) < rank(required))
    throw Error(ErrorCode::Forbidden, "route requires role " + std::string(to_string(required)), p.user_id);
  if (!course_id.empty() && !p.member_of(course_id))
    throw Error(ErrorCode::Forbidden, "not a member of the course", course_id);
  return p;
}

std::string Gateway::course_of(const RouteSpec& route, const Match& match) const {
  switch (route.course) {
    case CourseSource::none: return {};
    case CourseSource::path: return match.param("id");
    case CourseSource::quiz: return quizzes_->get(match.param("id")).course_id;
    case CourseSource::job: return jobs_->poll(match.param("id")).course_id;
  }
  return {};
}

ApiResponse Gateway::handle(const ApiRequest& request) {
  try {
    const auto segments = split_path(request.path);
    const RouteEntry* entry = nullptr;
    Match match{RouteId::me, {}};
    bool path_known = false;
    for (const auto& e : route_table()) {
      const auto pattern = split_path(e.spec.pattern);
      if (pattern.size() != segments.size()) continue;
      std::map<std::string, std::string> params;
      bool ok = true;
      for (std::size_t i = 0; i < pattern.size() && ok; ++i) {
        const auto& p = pattern[i];
        if (p.size() > 2 && p.front() == '{' && p.back() == '}') params[p.substr(1, p.size() - 2)] = segments[i];
        else ok = p == segments[i];
      }
      if (!ok) continue;
      path_known = true;
      if (e.spec.method != request.method) continue;
      entry = &e;
      match = {e.id, std::move(params)};
      break;
    }
    if (!entry) {
      auto r = json_response(error_body(ErrorCode::NotFound, path_known ? "method not allowed" : "no such route",
                                        request.method + " " + request.path),
                             path_known ? 405 : 404);
      return r;
    }
    auto principal = authorize(request, entry->spec.min_role);
    const auto course_id = course_of(entry->spec, match);
    if (!course_id.empty()) principal = authorize(request, entry->spec.min_role, course_id);
    return dispatch(entry->spec, match, request, principal);
  } catch (const Error& e) {
    return error_response(e);
  } catch (const std::exception& e) {
    return json_response(error_body(ErrorCode::Internal, "internal error", e.what()), 500);
  }
}

ApiResponse Gateway::dispatch(const RouteSpec& route, const Match& match, const ApiRequest& request,
                              const Principal& principal) {
  (void)route;
  switch (match.id) {
    case RouteId::me: {
      auto j = principal.to_json();
      json courses = json::array();
      for (const auto& c : catalog_->courses()) {
        if (!principal.member_of(c.course_id)) continue;
        courses.push_back({{"course_id", c.course_id},
                           {"name", c.name},
                           {"discipline", to_string(c.discipline)},
                           {"students_may_generate_quizzes", c.students_may_generate_quizzes}});
      }
      j["course_details"] = courses;
      return json_response(j);
    }

    case RouteId::create_course: {
      const auto body = parse_body(request);
      CourseInfo info;
      info.course_id = string_field(body, "course_id", false);
      if (!info.course_id.empty() && !valid_course_id(info.course_id))
        throw Error(ErrorCode::InvalidArgument, "course_id must match [A-Za-z0-9_-]{1,64}", info.course_id);
      if (!info.course_id.empty() && catalog_->has_course(info.course_id))
        throw Error(ErrorCode::VersionConflict, "course already exists", info.course_id);
      info.name = string_field(body, "name", true);
      const auto discipline = string_field(body, "discipline", false);
      if (!discipline.empty()) info.discipline = parse_discipline(discipline);
      if (body.contains("students_may_generate_quizzes")) {
        if (!body["students_may_generate_quizzes"].is_boolean())
          throw Error(ErrorCode::InvalidArgument, "students_may_generate_quizzes must be a boolean");
        info.students_may_generate_quizzes = body["students_may_generate_quizzes"].get<bool>();
      }
      info = catalog_->create_course(info);
      index_->create_collection(info.course_id);
      if (principal.role == Role::teacher) grant_membership(principal, info.course_id);
      return json_response({{"course_id", info.course_id},
                            {"name", info.name},
                            {"discipline", to_string(info.discipline)},
                            {"students_may_generate_quizzes", info.students_may_generate_quizzes}},
                           201);
    }

    case RouteId::upload: {
      const auto& course_id = match.param("id");
      catalog_->course(course_id);
      const auto* file = request.part("file");
      if (!file) throw Error(ErrorCode::InvalidArgument, "multipart field 'file' is required");
      if (file->content.size() > config_.max_upload_bytes)
        throw Error(ErrorCode::TooLarge, "upload exceeds the size limit", std::to_string(file->content.size()));
      ingest::SourceFormat format = ingest::SourceFormat::plain_text;
      if (const auto* f = request.part("format"); f && !trim(f->content).empty())
        format = ingest::parse_source_format(trim(f->content));
      else
        format = infer_format(file->filename);
      std::string title = file->filename;
      if (const auto* t = request.part("title"); t && !trim(t->content).empty()) title = std::string(trim(t->content));
      const auto blob = store_->put_blob(course_id, file->content,
                                         file->content_type.empty() ? "application/octet-stream" : file->content_type);
      const auto job_id = jobs_->enqueue(
          jobs::JobKind::ingest, course_id,
          {{"blob", blob_to_json(blob)}, {"format", ingest::to_string(format)}, {"title", title}}, principal.user_id);
      return json_response({{"job_id", job_id}, {"state", "queued"}}, 202);
    }

    case RouteId::poll_job: {
      const auto job = jobs_->poll(match.param("id"));
      const bool allowed = principal.role == Role::admin || job.owner_id == principal.user_id ||
                           (principal.role == Role::teacher && !job.course_id.empty() &&
                            principal.member_of(job.course_id));
      if (!allowed) throw Error(ErrorCode::Forbidden, "job belongs to another user", job.job_id);
      return json_response(job.to_json());
    }

    case RouteId::chat: {
      const auto& course_id = match.param("id");
      const auto body = parse_body(request);
      const auto prompt = string_field(body, "prompt", false);
      if (trim(prompt).empty()) throw Error(ErrorCode::EmptyPrompt, "prompt is empty");
      catalog_->course(course_id);
      auto session_id = string_field(body, "session_id", false);
      if (session_id.empty()) session_id = tutor_->open_session(course_id, principal.user_id);

      json intent_json;
      tutor::Mode mode = tutor::Mode::quick;
      const auto mode_name = string_field(body, "mode", false);
      if (!mode_name.empty()) {
        mode = tutor::parse_mode(mode_name);
      } else {
        std::shared_lock lock(intent_mu_);
        if (intent_) {
          const auto r = intent::classify_intent(prompt, *intent_, *embedder_);
          mode = mode_for_intent(r);
          intent_json = {{"label", intent::to_string(r.label)},
                         {"score", r.score},
                         {"margin", r.margin},
                         {"low_confidence", r.low_confidence}};
        }
      }
      try {
        const auto turn = tutor_->answer_question(course_id, session_id, principal.user_id, prompt, mode);
        auto j = turn.to_json();
        if (!intent_json.is_null()) j["intent"] = intent_json;
        return json_response(j);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ProviderUnavailable) throw;
        auto j = error_body(e.code(), e.what(), e.detail());
        j["session_id"] = session_id;
        return json_response(j, http_status(e.code()));
      }
    }

    case RouteId::session_turns: {
      const auto& course_id = match.param("id");
      const auto& session_id = match.param("sid");
      const auto owner = tutor_->session_owner(course_id, session_id);
      if (principal.role == Role::student && owner != principal.user_id)
        throw Error(ErrorCode::Forbidden, "session belongs to another user", session_id);
      json turns = json::array();
      for (const auto& t : tutor_->turns(course_id, session_id)) turns.push_back(t.to_json());
      return json_response({{"session_id", session_id}, {"user_id", owner}, {"turns", turns}});
    }

    case RouteId::generate_quiz: {
      const auto& course_id = match.param("id");
      const auto course = catalog_->course(course_id);
      if (principal.role == Role::student && !course.students_may_generate_quizzes)
        throw Error(ErrorCode::Forbidden, "students may not generate quizzes in this course", course_id);
      auto body = parse_body(request);
      body["requested_by"] = principal.user_id;
      const auto req = generate_request(course_id, body);
      const auto job_id =
          jobs_->enqueue(jobs::JobKind::quiz_generation, course_id, generate_request_json(req), principal.user_id);
      return json_response({{"job_id", job_id}, {"state", "queued"}}, 202);
    }

    case RouteId::list_quizzes: {
      const auto& course_id = match.param("id");
      catalog_->course(course_id);
      json out = json::array();
      for (const auto& q : quizzes_->quizzes(course_id, principal.role)) {
        out.push_back({{"quiz_id", q.quiz_id},
                       {"review_state", quiz::to_string(q.review_state)},
                       {"revision", q.revision},
                       {"question_count", q.questions.size()},
                       {"created_by", q.created_by},
                       {"created_at", q.created_at}});
      }
      return json_response({{"course_id", course_id}, {"quizzes", out}});
    }

    case RouteId::get_quiz: {
      const auto q = quizzes_->view(match.param("id"), principal.role);
      return json_response(principal.role == Role::student ? student_view(q) : q.to_json());
    }

    case RouteId::review_quiz: {
      const auto body = parse_body(request);
      const auto action = quiz::parse_review_action(string_field(body, "action", true));
      if (!body.contains("revision") || !body["revision"].is_number_integer())
        throw Error(ErrorCode::InvalidArgument, "revision is required");
      const json payload = body.contains("payload") ? body["payload"] : json(nullptr);
      const auto q = quizzes_->transition_review_state(match.param("id"), action, principal.user_id, principal.role,
                                                       body["revision"].get<int>(), payload);
      return json_response(q.to_json());
    }

    case RouteId::export_quiz: {
      ApiResponse r;
      r.body = quizzes_->export_moodle_xml(match.param("id"));
      r.content_type = "application/xml";
      r.headers["Content-Disposition"] = "attachment; filename=\"" + match.param("id") + ".xml\"";
      return r;
    }

    case RouteId::attempt_quiz: {
      const auto body = parse_body(request);
      if (!body.contains("answers") || !body["answers"].is_object())
        throw Error(ErrorCode::InvalidArgument, "answers must be an object");
      const auto attempt = quizzes_->grade_attempt(match.param("id"), body["answers"], principal.user_id);
      return json_response(attempt.to_json(), 201);
    }

    case RouteId::course_progress: {
      const auto& course_id = match.param("id");
      auto user = request.query.count("user_id") ? request.query.at("user_id") : std::string();
      if (principal.role == Role::student) {
        if (!user.empty() && user != principal.user_id)
          throw Error(ErrorCode::Forbidden, "students see only their own progress", user);
        return json_response(progress_->course_coverage(principal.user_id, course_id).to_json());
      }
      if (!user.empty()) return json_response(progress_->course_coverage(user, course_id).to_json());
      json students = json::array();
      for (const auto& r : progress_->course_overview(course_id)) students.push_back(r.to_json());
      return json_response({{"course_id", course_id}, {"students", students}});
    }

    case RouteId::course_logs: {
      const auto& course_id = match.param("id");
      const int page = request.query.count("page") ? parse_int(request.query.at("page"), "page") : 0;
      const int size =
          request.query.count("page_size") ? parse_int(request.query.at("page_size"), "page_size") : config_.log_page_size;
      std::optional<std::string> user;
      if (request.query.count("user_id")) user = request.query.at("user_id");
      const auto logs = progress_->export_logs(course_id, page, size, user);
      ApiResponse r;
      r.body = logs.ndjson;
      r.content_type = "application/x-ndjson";
      r.headers["X-Page"] = std::to_string(logs.page);
      r.headers["X-Page-Size"] = std::to_string(logs.page_size);
      r.headers["X-Has-More"] = logs.has_more ? "true" : "false";
      return r;
    }

    case RouteId::eval_sweep: {
      const auto body = parse_body(request);
      const fs::path base = config_.eval_root.value_or(fs::current_path());
      json plan;
      fs::path plan_base = base;
      if (body.contains("plan") && body["plan"].is_string()) {
        const auto file = resolve(base, body["plan"].get<std::string>());
        std::ifstream in(file);
        if (!in) throw Error(ErrorCode::NotFound, "sweep plan not found", body["plan"].get<std::string>());
        try {
          plan = json::parse(in);
        } catch (const json::exception& e) {
          throw Error(ErrorCode::InvalidArgument, "sweep plan is not valid JSON", e.what());
        }
        plan_base = file.parent_path();
      } else if (body.contains("plan") && body["plan"].is_object()) {
        plan = body["plan"];
      } else {
        throw Error(ErrorCode::InvalidArgument, "plan must be a file name or an object");
      }
      eval::SweepPlan::from_json(plan, plan_base);
      const auto job_id = jobs_->enqueue(jobs::JobKind::eval_sweep, {},
                                         {{"plan", plan}, {"base_dir", plan_base.string()}}, principal.user_id);
      return json_response({{"job_id", job_id}, {"state", "queued"}}, 202);
    }

    case RouteId::admin_reload:
      return json_response(reload());
  }
  throw Error(ErrorCode::Internal, "unhandled route");
}

void Gateway::register_job_handlers() {
  jobs_->register_handler(jobs::JobKind::ingest, [this](const jobs::Job& job, const jobs::ProgressFn& progress) {
    const auto course = catalog_->course(job.course_id);
    IngestRequest req;
    req.course_id = job.course_id;
    try {
      req.raw = store_->get_blob(blob_from_json(job.payload.at("blob")));
      req.format = ingest::parse_source_format(job.payload.value("format", std::string("plain_text")));
      req.title = job.payload.value("title", std::string());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, "malformed ingest job", e.what());
    }
    req.profile = profile_for(course.discipline);
    progress(0.1);
    const auto result = pipeline_->ingest(req);
    progress(0.9);
    if (!result.duplicate) save_index(job.course_id);
    return result.summary();
  });

  jobs_->register_handler(jobs::JobKind::quiz_generation, [this](const jobs::Job& job, const jobs::ProgressFn& progress) {
    auto req = generate_request(job.course_id, job.payload);
    progress(0.1);
    const auto q = quizzes_->generate_quiz(req);
    return json{{"quiz_id", q.quiz_id},
                {"question_count", q.questions.size()},
                {"requested", q.requested},
                {"warnings", q.warnings},
                {"review_state", quiz::to_string(q.review_state)},
                {"revision", q.revision}};
  });

  jobs_->register_handler(jobs::JobKind::eval_sweep, [](const jobs::Job& job, const jobs::ProgressFn& progress) {
    const auto plan = eval::SweepPlan::from_json(job.payload.at("plan"), job.payload.value("base_dir", std::string()));
    progress(0.05);
    const auto report = eval::run_config_sweep(plan.config, plan.courses, plan.providers);
    int failed = 0;
    for (const auto& c : report.cells) failed += !c.ok;
    return json{{"cells", report.cells.size()},
                {"failed_cells", failed},
                {"csv", report.to_csv()},
                {"markdown", report.to_markdown()}};
  });
}

void Gateway::save_index(const std::string& course_id) {
  if (!config_.store_root) return;
  std::lock_guard lock(index_io_mu_);
  const auto dir = *config_.store_root / "index";
  fs::create_directories(dir);
  const auto tmp = dir / (course_id + ".snap.tmp");
  index_->save_snapshot(course_id, tmp);
  fs::rename(tmp, dir / (course_id + ".snap"));
  std::ofstream(dir / (course_id + ".provider")) << embedder_->id();
}

void Gateway::restore_index() {
  for (const auto& course : catalog_->courses()) {
    const auto chunks = catalog_->chunks(course.course_id);
    if (config_.store_root && !chunks.empty()) {
      const auto dir = *config_.store_root / "index";
      const auto snap = dir / (course.course_id + ".snap");
      std::string provider;
      std::ifstream(dir / (course.course_id + ".provider")) >> provider;
      if (fs::exists(snap) && provider == embedder_->id()) {
        try {
          index_->load_snapshot(snap);
          if (index_->size(course.course_id) == chunks.size()) continue;
        } catch (const Error& e) {
          std::cerr << "rebuilding index for " << course.course_id << ": " << e.what() << "\n";
        }
        if (index_->has_collection(course.course_id)) index_->delete_course_collection(course.course_id);
      }
    }
    index_->create_collection(course.course_id);
    if (chunks.empty()) continue;
    std::vector<std::string> texts;
    for (const auto& c : chunks) texts.push_back(c.text);
    auto vectors = embeddings::embed_texts(texts, *embedder_);
    std::vector<index::IndexEntry> entries;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      const auto& c = chunks[i];
      entries.push_back({c.chunk_id, c.course_id, std::move(vectors[i]), {c.document_id, c.page_number, c.ordinal}});
    }
    index_->upsert_chunks(course.course_id, entries);
    save_index(course.course_id);
  }
}

json Gateway::reload() {
  json out = json::object();
  if (config_.templates_dir) {
    tutor_->set_templates(tutor::TemplateSet::load(*config_.templates_dir));
    out["templates"] = true;
  }
  if (config_.exemplars_path) {
    auto model = intent::fit_centroids(intent::load_exemplars(*config_.exemplars_path), *embedder_);
    std::unique_lock lock(intent_mu_);
    intent_ = std::move(model);
    out["intent"] = true;
  }
  if (config_.source) {
    const auto fresh = GatewayConfig::load(*config_.source);
    load_tokens(fresh.tokens);
    out["tokens"] = fresh.tokens.size();
  }
  return out;
}

void Gateway::start() { jobs_->start(); }

namespace {

ApiRequest to_api(const httplib::Request& req) {
  ApiRequest a;
  a.method = req.method;
  a.path = req.path;
  for (const auto& [k, v] : req.headers) a.headers[to_lower_ascii(k)] = v;
  for (const auto& [k, v] : req.params) a.query[k] = v;
  a.body = req.body;
  for (const auto& [name, f] : req.files) a.parts.push_back({f.name, f.filename, f.content_type, f.content});
  return a;
}

void from_api(const ApiResponse& r, httplib::Response& res) {
  res.status = r.status;
  for (const auto& [k, v] : r.headers) res.set_header(k, v);
  res.set_content(r.body, r.content_type);
}

}  // namespace

void Gateway::mount() {
  server_ = std::make_unique<Server>();
  auto& http = server_->http;
  const int threads = config_.http_threads;
  http.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  http.set_payload_max_length(config_.max_upload_bytes + 64 * 1024);
  auto handler = [this](const httplib::Request& req, httplib::Response& res) { from_api(handle(to_api(req)), res); };
  http.Get(".*", handler);
  http.Post(".*", handler);
  http.Put(".*", handler);
  http.Delete(".*", handler);
  http.Patch(".*", handler);
}

bool Gateway::listen() {
  mount();
  return server_->http.listen(config_.host, config_.port);
}

int Gateway::listen_in_background() {
  mount();
  auto& http = server_->http;
  const int port = http.bind_to_any_port(config_.host);
  if (port < 0) throw Error(ErrorCode::Internal, "cannot bind", config_.host);
  server_->thread = std::thread([&http] { http.listen_after_bind(); });
  http.wait_until_ready();
  return port;
}

void Gateway::stop() {
  if (server_) {
    server_->http.stop();
    if (server_->thread.joinable()) server_->thread.join();
  }
  if (jobs_) jobs_->stop();
}

}  // namespace ragtutor::gateway
