#include <doctest.h>

#include <atomic>
#include <chrono>
#include <mutex>
#include <set>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "course_fixture.hpp"
#include "ragtutor/error.hpp"
#include "ragtutor/gateway.hpp"
#include "test_support.hpp"

using namespace ragtutor;
using namespace ragtutor::gateway;
using nlohmann::json;
using testsupport::code_of;

namespace {

const std::filesystem::path kFixtures = RAGTUTOR_FIXTURE_DIR;

json tokens_json(int students = 2) {
  json t = json::array({
      {{"token", "t-teacher"}, {"user_id", "teacher1"}, {"role", "teacher"}, {"courses", {"foundations"}}},
      {{"token", "t-teacher-b"}, {"user_id", "teacher2"}, {"role", "teacher"}, {"courses", {"other"}}},
      {{"token", "t-admin"}, {"user_id", "admin1"}, {"role", "admin"}},
      {{"token", "t-outsider"}, {"user_id", "outsider"}, {"role", "student"}, {"courses", {"other"}}},
  });
  for (int i = 0; i < students; ++i) {
    t.push_back({{"token", "t-student" + std::to_string(i)},
                 {"user_id", "student" + std::to_string(i)},
                 {"role", "student"},
                 {"courses", {"foundations"}}});
  }
  return t;
}

GatewayConfig test_config(int students = 2) {
  json j = {{"listen", {{"host", "127.0.0.1"}, {"port", 0}}},
            {"workers", 4},
            {"intent_exemplars", (kFixtures / "intent" / "exemplars.json").string()},
            {"eval_root", (kFixtures / "eval").string()},
            {"tokens", tokens_json(students)}};
  return GatewayConfig::from_json(j);
}

ApiRequest req(const std::string& method, const std::string& path, const std::string& token = {},
               const json& body = nullptr) {
  ApiRequest r;
  r.method = method;
  r.path = path;
  if (!token.empty()) r.headers["authorization"] = "Bearer " + token;
  if (!body.is_null()) r.body = body.dump();
  return r;
}

ApiRequest upload_req(const std::string& course, const std::string& token, const std::string& filename,
                      const std::string& content) {
  auto r = req("POST", "/courses/" + course + "/materials", token);
  r.parts.push_back({"file", filename, "text/plain", content});
  return r;
}

void create_course(Gateway& gw, const std::string& id, bool students_generate = true) {
  auto r = gw.handle(req("POST", "/courses", "t-admin",
                         {{"course_id", id}, {"name", id}, {"discipline", "stem"},
                          {"students_may_generate_quizzes", students_generate}}));
  REQUIRE(r.status == 201);
}

json wait_job(Gateway& gw, const std::string& job_id, const std::string& token = "t-admin") {
  for (int i = 0; i < 1000; ++i) {
    auto r = gw.handle(req("GET", "/jobs/" + job_id, token));
    REQUIRE(r.status == 200);
    auto j = r.json();
    if (j["state"] == "succeeded" || j["state"] == "failed") return j;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  FAIL("job did not finish");
  return {};
}

/// Uploads the fixture documents of "foundations" through the gateway.
void upload_foundations(Gateway& gw) {
  const auto dir = kFixtures / "courses" / "foundations";
  for (const auto* f : {"sorting.md", "geography.txt", "cells.json"}) {
    auto r = gw.handle(upload_req("foundations", "t-teacher", f, testsupport::read_file(dir / f)));
    REQUIRE(r.status == 202);
    auto job = wait_job(gw, r.json()["job_id"]);
    REQUIRE(job["state"] == "succeeded");
  }
}

std::string generated_quiz(Gateway& gw) {
  auto r = gw.handle(req("POST", "/courses/foundations/quizzes:generate", "t-teacher", {{"n_questions", 3}}));
  REQUIRE(r.status == 202);
  auto job = wait_job(gw, r.json()["job_id"]);
  REQUIRE(job["state"] == "succeeded");
  return job["result"]["quiz_id"];
}

std::string concrete(const std::string& pattern, const std::map<std::string, std::string>& values) {
  std::string out = pattern;
  for (const auto& [k, v] : values) {
    const auto key = "{" + k + "}";
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key)) out.replace(pos, key.size(), v);
  }
  return out;
}

}  // namespace

TEST_CASE("config from file values and environment overrides") {
  json j = {{"listen", {{"host", "0.0.0.0"}, {"port", 9000}}},
            {"workers", 2},
            {"store_root", "state"},
            {"embedding", {{"provider", "deterministic_test"}, {"dimension", 128}}},
            {"tokens", tokens_json(1)}};
  auto c = GatewayConfig::from_json(j, "/srv/ragtutor");
  CHECK(c.host == "0.0.0.0");
  CHECK(c.port == 9000);
  CHECK(c.workers == 2);
  CHECK(c.queue_capacity == 256);
  CHECK(c.log_page_size == 50);
  REQUIRE(c.store_root);
  CHECK(*c.store_root == std::filesystem::path("/srv/ragtutor/state"));
  CHECK(c.embedding.dimension == 128);
  CHECK(c.tokens.size() == 5);

  std::map<std::string, std::string> env = {{"RAGTUTOR_LISTEN", "127.0.0.1:7001"},
                                            {"RAGTUTOR_WORKERS", "8"},
                                            {"RAGTUTOR_EMBEDDING_ENDPOINT", "http://embed:9/v1/embed"},
                                            {"RAGTUTOR_GENERATION_ENDPOINT", "http://llm:9/v1/generate"}};
  c.apply_env([&](const std::string& k) -> std::optional<std::string> {
    auto it = env.find(k);
    return it == env.end() ? std::nullopt : std::optional<std::string>(it->second);
  });
  CHECK(c.host == "127.0.0.1");
  CHECK(c.port == 7001);
  CHECK(c.workers == 8);
  CHECK(c.embedding.kind == embeddings::ProviderKind::remote_http);
  CHECK(c.embedding.endpoint == "http://embed:9/v1/embed");
  CHECK(c.generation.kind == generation::GenerationKind::remote_http);
  CHECK_NOTHROW(c.validate());

  env = {{"RAGTUTOR_LISTEN", "nohostport"}};
  CHECK(code_of([&] {
          c.apply_env([&](const std::string& k) -> std::optional<std::string> {
            auto it = env.find(k);
            return it == env.end() ? std::nullopt : std::optional<std::string>(it->second);
          });
        }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { parse_tokens(json::array({{{"token", "x"}, {"user_id", "u"}, {"role", "root"}}})); }) ==
        ErrorCode::InvalidArgument);
  CHECK(code_of([] {
          parse_tokens(json::array({{{"token", "x"}, {"user_id", "u"}, {"role", "student"}},
                                    {{"token", "x"}, {"user_id", "v"}, {"role", "student"}}}));
        }) == ErrorCode::InvalidArgument);
}

TEST_CASE("authorize examples") {
  Gateway gw(test_config());
  CHECK(code_of([&] { gw.authorize(req("GET", "/x"), Role::student); }) == ErrorCode::Unauthenticated);
  CHECK(code_of([&] { gw.authorize(req("GET", "/x", "nope"), Role::student); }) == ErrorCode::Unauthenticated);
  auto basic = req("GET", "/x");
  basic.headers["authorization"] = "Basic t-teacher";
  CHECK(code_of([&] { gw.authorize(basic, Role::student); }) == ErrorCode::Unauthenticated);
  CHECK(code_of([&] { gw.authorize(req("POST", "/x", "t-student0"), Role::teacher, "foundations"); }) ==
        ErrorCode::Forbidden);
  CHECK(code_of([&] { gw.authorize(req("POST", "/x", "t-teacher"), Role::teacher, "other"); }) == ErrorCode::Forbidden);
  CHECK(gw.authorize(req("POST", "/x", "t-teacher"), Role::teacher, "foundations").user_id == "teacher1");
  CHECK(gw.authorize(req("POST", "/x", "t-admin"), Role::teacher, "anything").role == Role::admin);

  CHECK(mode_for_intent({intent::IntentLabel::test_generation, 0.9, intent::IntentLabel::explanation, 0.3, false}) ==
        tutor::Mode::exam_coach);
  CHECK(mode_for_intent({intent::IntentLabel::test_generation, 0.9, intent::IntentLabel::explanation, 0.01, true}) ==
        tutor::Mode::quick);
  CHECK(mode_for_intent({intent::IntentLabel::material_generation, 0.9, intent::IntentLabel::explanation, 0.3,
                         false}) == tutor::Mode::quick);
}

TEST_CASE("every route goes through authorize") {
  Gateway gw(test_config());
  gw.start();
  create_course(gw, "foundations");
  create_course(gw, "other");
  upload_foundations(gw);
  const auto quiz_id = generated_quiz(gw);
  auto chat = gw.handle(req("POST", "/courses/foundations/chat", "t-student0", {{"prompt", "What is merge sort?"}}));
  REQUIRE(chat.status == 200);
  const std::string session_id = chat.json()["session_id"];
  auto up = gw.handle(upload_req("foundations", "t-teacher", "notes.txt", "Photosynthesis makes sugar from light."));
  const std::string job_id = up.json()["job_id"];
  wait_job(gw, job_id);

  const std::map<std::string, std::string> ids_for_course = {{"id", "foundations"}, {"sid", session_id}};
  const std::set<std::string> expected = {
      "POST /courses",
      "POST /courses/{id}/materials",
      "GET /jobs/{id}",
      "POST /courses/{id}/chat",
      "GET /courses/{id}/sessions/{sid}/turns",
      "POST /courses/{id}/quizzes:generate",
      "GET /quizzes/{id}",
      "POST /quizzes/{id}/review",
      "GET /quizzes/{id}/export.xml",
      "POST /quizzes/{id}/attempts",
      "GET /courses/{id}/progress",
      "GET /courses/{id}/logs",
      "POST /eval/sweep",
  };
  std::set<std::string> listed;
  for (const auto& r : Gateway::routes()) listed.insert(r.method + " " + r.pattern);
  for (const auto& e : expected) CHECK_MESSAGE(listed.count(e), e);

  int checked = 0;
  for (const auto& route : Gateway::routes()) {
    std::map<std::string, std::string> values = ids_for_course;
    if (route.course == CourseSource::quiz) values["id"] = quiz_id;
    if (route.course == CourseSource::job) values["id"] = job_id;
    const auto path = concrete(route.pattern, values);
    CAPTURE(route.pattern);

    CHECK(gw.handle(req(route.method, path)).status == 401);
    CHECK(gw.handle(req(route.method, path, "forged")).status == 401);
    const auto body = gw.handle(req(route.method, path)).json();
    CHECK(body["code"] == "Unauthenticated");
    CHECK(body.contains("message"));
    CHECK(body.contains("detail"));

    if (route.min_role == Role::teacher) {
      const auto r = gw.handle(req(route.method, path, "t-student0", json::object()));
      CHECK(r.status == 403);
      CHECK(r.json()["code"] == "Forbidden");
    }
    if (route.min_role == Role::admin) {
      CHECK(gw.handle(req(route.method, path, "t-teacher", json::object())).status == 403);
      CHECK(gw.handle(req(route.method, path, "t-student0", json::object())).status == 403);
    }
    if (route.course != CourseSource::none) {
      const auto* outsider = route.min_role == Role::teacher ? "t-teacher-b" : "t-outsider";
      const auto r = gw.handle(req(route.method, path, outsider, json::object()));
      CHECK(r.status == 403);
    }
    const auto admin = gw.handle(req(route.method, path, "t-admin", json::object()));
    CHECK(admin.status != 401);
    CHECK(admin.status != 403);
    ++checked;
  }
  CHECK(checked == static_cast<int>(Gateway::routes().size()));
  CHECK(gw.handle(req("GET", "/nowhere", "t-admin")).status == 404);
  CHECK(gw.handle(req("DELETE", "/courses", "t-admin")).status == 405);
}

TEST_CASE("teacher and student workflow over the in-process API") {
  Gateway gw(test_config());
  gw.start();
  create_course(gw, "foundations");
  upload_foundations(gw);

  auto dup = gw.handle(upload_req("foundations", "t-teacher", "again.md",
                                  testsupport::read_file(kFixtures / "courses" / "foundations" / "sorting.md")));
  auto dup_job = wait_job(gw, dup.json()["job_id"]);
  CHECK(dup_job["result"]["duplicate"] == true);
  CHECK(dup_job["progress"] == 1.0);

  auto bad = gw.handle(upload_req("foundations", "t-teacher", "slides.pptx", "x"));
  CHECK(bad.status == 415);
  CHECK(gw.handle(req("POST", "/courses/foundations/materials", "t-teacher")).status == 400);

  auto chat = gw.handle(req("POST", "/courses/foundations/chat", "t-student0",
                            {{"prompt", "What is the capital of France?"}, {"mode", "quick"}}));
  REQUIRE(chat.status == 200);
  auto turn = chat.json();
  CHECK(turn["status"] == "completed");
  CHECK(turn["mode"] == "quick");
  CHECK_FALSE(turn["citations"].empty());
  const std::string sid = turn["session_id"];

  auto follow = gw.handle(req("POST", "/courses/foundations/chat", "t-student0",
                              {{"prompt", "Generate a 10-question quiz on sorting"}, {"session_id", sid}}));
  REQUIRE(follow.status == 200);
  CHECK(follow.json()["intent"]["label"] == "test_generation");
  CHECK(follow.json()["mode"] == "exam_coach");

  CHECK(gw.handle(req("POST", "/courses/foundations/chat", "t-student0", {{"prompt", "  "}})).json()["code"] ==
        "EmptyPrompt");
  CHECK(gw.handle(req("POST", "/courses/foundations/chat", "t-student0", {{"prompt", "x"}, {"mode", "fast"}}))
            .status == 400);
  auto malformed = req("POST", "/courses/foundations/chat", "t-student0");
  malformed.body = "{not json";
  CHECK(gw.handle(malformed).json()["code"] == "MalformedPayload");

  auto turns = gw.handle(req("GET", "/courses/foundations/sessions/" + sid + "/turns", "t-student0")).json();
  CHECK(turns["turns"].size() == 2);
  CHECK(gw.handle(req("GET", "/courses/foundations/sessions/" + sid + "/turns", "t-student1")).status == 403);
  CHECK(gw.handle(req("GET", "/courses/foundations/sessions/" + sid + "/turns", "t-teacher")).status == 200);
  CHECK(gw.handle(req("GET", "/courses/foundations/sessions/nope/turns", "t-teacher")).status == 404);
  CHECK(gw.handle(req("POST", "/courses/foundations/chat", "t-student1", {{"prompt", "hi"}, {"session_id", sid}}))
            .status == 403);

  const auto quiz_id = generated_quiz(gw);
  CHECK(gw.handle(req("GET", "/quizzes/" + quiz_id, "t-student0")).status == 404);
  auto q = gw.handle(req("GET", "/quizzes/" + quiz_id, "t-teacher")).json();
  CHECK(q["review_state"] == "unreviewed");
  CHECK(q["revision"] == 1);
  CHECK(gw.handle(req("GET", "/quizzes/" + quiz_id + "/export.xml", "t-teacher")).json()["code"] == "NotApproved");
  CHECK(gw.handle(req("POST", "/quizzes/" + quiz_id + "/attempts", "t-student0", {{"answers", json::object()}}))
            .json()["code"] == "QuizNotPublished");

  CHECK(gw.handle(req("POST", "/quizzes/" + quiz_id + "/review", "t-teacher", {{"action", "approve"}})).status == 400);
  CHECK(gw.handle(req("POST", "/quizzes/" + quiz_id + "/review", "t-teacher", {{"action", "publish"}, {"revision", 1}}))
            .status == 409);
  auto approved =
      gw.handle(req("POST", "/quizzes/" + quiz_id + "/review", "t-teacher", {{"action", "approve"}, {"revision", 1}}));
  REQUIRE(approved.status == 200);
  CHECK(approved.json()["review_state"] == "approved");
  CHECK(gw.handle(req("POST", "/quizzes/" + quiz_id + "/review", "t-teacher", {{"action", "publish"}, {"revision", 1}}))
            .json()["code"] == "VersionConflict");
  auto xml = gw.handle(req("GET", "/quizzes/" + quiz_id + "/export.xml", "t-teacher"));
  CHECK(xml.status == 200);
  CHECK(xml.content_type == "application/xml");
  CHECK(xml.body.rfind("<?xml", 0) == 0);
  const int rev = approved.json()["revision"];
  auto published = gw.handle(
      req("POST", "/quizzes/" + quiz_id + "/review", "t-teacher", {{"action", "publish"}, {"revision", rev}}));
  REQUIRE(published.status == 200);

  auto student_view = gw.handle(req("GET", "/quizzes/" + quiz_id, "t-student0")).json();
  REQUIRE_FALSE(student_view["questions"].empty());
  for (const auto& question : student_view["questions"]) {
    CHECK_FALSE(question.contains("explanation"));
    for (const auto& o : question["options"]) CHECK_FALSE(o.contains("correct"));
  }
  auto listed = gw.handle(req("GET", "/courses/foundations/quizzes", "t-student0")).json();
  CHECK(listed["quizzes"].size() == 1);

  json answers = json::object();
  const auto full = gw.quizzes().get(quiz_id);
  for (const auto& question : full.questions) {
    int correct = 0;
    for (std::size_t i = 0; i < question.options.size(); ++i)
      if (question.options[i].correct) correct = static_cast<int>(i);
    answers[question.question_id] = correct;
  }
  auto attempt = gw.handle(req("POST", "/quizzes/" + quiz_id + "/attempts", "t-student0", {{"answers", answers}}));
  REQUIRE(attempt.status == 201);
  CHECK(attempt.json()["score"] == 1.0);

  auto mine = gw.handle(req("GET", "/courses/foundations/progress", "t-student0")).json();
  CHECK(mine["user_id"] == "student0");
  CHECK(mine["aggregate"]["touched_chunks"].get<int>() > 0);
  auto others = req("GET", "/courses/foundations/progress", "t-student0");
  others.query["user_id"] = "student1";
  CHECK(gw.handle(others).status == 403);
  auto overview = gw.handle(req("GET", "/courses/foundations/progress", "t-teacher")).json();
  CHECK(overview["students"].size() == 1);

  auto logs_req = req("GET", "/courses/foundations/logs", "t-teacher");
  logs_req.query["page_size"] = "2";
  auto logs = gw.handle(logs_req);
  CHECK(logs.status == 200);
  CHECK(logs.content_type == "application/x-ndjson");
  CHECK(logs.headers["X-Has-More"] == "true");
  CHECK(std::count(logs.body.begin(), logs.body.end(), '\n') == 2);
  logs_req.query["page_size"] = "two";
  CHECK(gw.handle(logs_req).status == 400);

  auto me = gw.handle(req("GET", "/me", "t-student0")).json();
  CHECK(me["role"] == "student");
  CHECK(me["course_details"].size() == 1);
}

TEST_CASE("course creation, quiz generation permission and job polling") {
  Gateway gw(test_config());
  gw.start();
  auto made = gw.handle(req("POST", "/courses", "t-teacher", {{"course_id", "algebra"}, {"name", "Algebra"}}));
  REQUIRE(made.status == 201);
  CHECK(gw.authorize(req("GET", "/", "t-teacher"), Role::teacher, "algebra").user_id == "teacher1");
  CHECK(gw.handle(req("POST", "/courses", "t-teacher", {{"course_id", "algebra"}, {"name", "Again"}})).status == 409);
  CHECK(gw.handle(req("POST", "/courses", "t-teacher", {{"course_id", "../etc"}, {"name", "Bad"}})).status == 400);
  CHECK(gw.handle(req("POST", "/courses", "t-teacher", {{"course_id", "x"}})).status == 400);
  CHECK(gw.handle(req("POST", "/courses", "t-student0", {{"name", "Mine"}})).status == 403);

  create_course(gw, "foundations", false);
  CHECK(gw.handle(req("POST", "/courses/foundations/quizzes:generate", "t-student0", {{"n_questions", 3}})).status ==
        403);
  CHECK(gw.handle(req("POST", "/courses/foundations/quizzes:generate", "t-teacher", {{"n_questions", 51}})).status ==
        400);
  CHECK(gw.handle(req("POST", "/courses/foundations/quizzes:generate", "t-teacher", {{"kinds", {"essay"}}})).status ==
        400);

  auto queued = gw.handle(req("POST", "/courses/foundations/quizzes:generate", "t-teacher", {{"n_questions", 3}}));
  REQUIRE(queued.status == 202);
  const std::string job_id = queued.json()["job_id"];
  const auto first = gw.handle(req("GET", "/jobs/" + job_id, "t-teacher")).json();
  CHECK((first["state"] == "queued" || first["state"] == "running" || first["state"] == "failed"));
  const auto done = wait_job(gw, job_id, "t-teacher");
  CHECK(done["state"] == "failed");
  CHECK(done["reason"] == "InvalidArgument");
  CHECK(gw.handle(req("GET", "/jobs/" + job_id, "t-teacher")).json() == gw.handle(req("GET", "/jobs/" + job_id, "t-teacher")).json());
  CHECK(gw.handle(req("GET", "/jobs/" + job_id, "t-student0")).status == 403);
  CHECK(gw.handle(req("GET", "/jobs/nope", "t-admin")).json()["code"] == "UnknownJob");
}

TEST_CASE("evaluation sweeps run as admin jobs") {
  Gateway gw(test_config());
  gw.start();
  auto r = gw.handle(req("POST", "/eval/sweep", "t-admin", {{"plan", "sweep_default.json"}}));
  REQUIRE(r.status == 202);
  auto job = wait_job(gw, r.json()["job_id"]);
  REQUIRE(job["state"] == "succeeded");
  CHECK(job["result"]["cells"] == 24);
  CHECK(job["result"]["failed_cells"] == 0);
  CHECK(job["result"]["csv"].get<std::string>().find("course_id") != std::string::npos);
  CHECK(gw.handle(req("POST", "/eval/sweep", "t-admin", {{"plan", "missing.json"}})).status == 404);
  CHECK(gw.handle(req("POST", "/eval/sweep", "t-admin", {{"plan", {{"top_ks", json::array()}}}})).status == 400);
  CHECK(gw.handle(req("POST", "/admin/reload", "t-admin")).json()["intent"] == true);
}

TEST_CASE("ingest jobs of one course run in order over HTTP") {
  Gateway gw(test_config());
  std::mutex mu;
  std::vector<std::pair<std::string, std::size_t>> seen;
  std::atomic<int> in_parse{0};
  std::atomic<int> max_parallel{0};
  gw.pipeline().before_parse = [&](const std::string& course) {
    const int now = ++in_parse;
    int prev = max_parallel.load();
    while (now > prev && !max_parallel.compare_exchange_weak(prev, now)) {
    }
    {
      std::lock_guard lock(mu);
      seen.emplace_back(course, gw.vector_index().has_collection(course) ? gw.vector_index().size(course) : 0);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
    --in_parse;
  };
  gw.start();
  create_course(gw, "foundations");
  create_course(gw, "other");
  const int port = gw.listen_in_background();
  httplib::Client client("127.0.0.1", port);
  const httplib::Headers teacher = {{"Authorization", "Bearer t-teacher"}};
  const httplib::Headers admin = {{"Authorization", "Bearer t-admin"}};

  const std::string first_doc = "Merge sort splits the list into halves and merges the sorted halves.";
  const std::string second_doc = "Paris is the capital of France and lies on the river Seine.";
  auto send = [&](const std::string& course, const httplib::Headers& h, const std::string& name,
                  const std::string& content) {
    httplib::MultipartFormDataItems items = {{"file", content, name, "text/plain"}};
    auto res = client.Post("/courses/" + course + "/materials", h, items);
    REQUIRE(res);
    REQUIRE(res->status == 202);
    return json::parse(res->body)["job_id"].get<std::string>();
  };
  const auto a = send("foundations", teacher, "a.txt", first_doc);
  const auto b = send("foundations", teacher, "b.txt", second_doc);
  const auto c = send("other", admin, "c.txt", "Mitochondria produce most of the cell's energy.");

  auto poll = [&](const std::string& id) {
    for (int i = 0; i < 500; ++i) {
      auto res = client.Get("/jobs/" + id, admin);
      REQUIRE(res);
      auto j = json::parse(res->body);
      if (j["state"] == "succeeded" || j["state"] == "failed") return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    FAIL("job did not finish");
    return json();
  };
  const auto ja = poll(a);
  const auto jb = poll(b);
  const auto jc = poll(c);
  CHECK(ja["state"] == "succeeded");
  CHECK(jb["state"] == "succeeded");
  CHECK(jc["state"] == "succeeded");
  CHECK(ja["progress"] == 1.0);

  std::vector<std::size_t> foundations_sizes;
  for (const auto& [course, size] : seen)
    if (course == "foundations") foundations_sizes.push_back(size);
  REQUIRE(foundations_sizes.size() == 2);
  CHECK(foundations_sizes[0] == 0);
  CHECK(foundations_sizes[1] == ja["result"]["chunk_count"].get<std::size_t>());
  CHECK(max_parallel.load() == 2);

  auto res = client.Get("/jobs/" + a);
  REQUIRE(res);
  CHECK(res->status == 401);
  CHECK(json::parse(res->body)["code"] == "Unauthenticated");
  gw.stop();
}

TEST_CASE("32 concurrent chat sessions never interleave writes") {
  constexpr int kUsers = 32;
  constexpr int kTurns = 3;
  auto config = test_config(kUsers);
  config.http_threads = kUsers;
  Gateway gw(config);
  gw.start();
  create_course(gw, "foundations");
  upload_foundations(gw);
  const int port = gw.listen_in_background();

  std::vector<std::string> sessions(kUsers);
  std::atomic<int> failures{0};
  std::vector<std::thread> threads;
  for (int u = 0; u < kUsers; ++u) {
    threads.emplace_back([&, u] {
      httplib::Client client("127.0.0.1", port);
      client.set_read_timeout(30, 0);
      const httplib::Headers h = {{"Authorization", "Bearer t-student" + std::to_string(u)}};
      for (int t = 0; t < kTurns; ++t) {
        json body = {{"prompt", "user " + std::to_string(u) + " turn " + std::to_string(t) + ": what is merge sort?"},
                     {"mode", t % 2 ? "deep_understanding" : "quick"}};
        if (!sessions[u].empty()) body["session_id"] = sessions[u];
        auto res = client.Post("/courses/foundations/chat", h, body.dump(), "application/json");
        if (!res || res->status != 200) {
          ++failures;
          return;
        }
        sessions[u] = json::parse(res->body)["session_id"];
      }
    });
  }
  for (auto& t : threads) t.join();
  REQUIRE(failures == 0);

  std::set<std::string> distinct(sessions.begin(), sessions.end());
  CHECK(distinct.size() == kUsers);
  httplib::Client client("127.0.0.1", port);
  for (int u = 0; u < kUsers; ++u) {
    const httplib::Headers h = {{"Authorization", "Bearer t-student" + std::to_string(u)}};
    auto res = client.Get("/courses/foundations/sessions/" + sessions[u] + "/turns", h);
    REQUIRE(res);
    REQUIRE(res->status == 200);
    const auto turns = json::parse(res->body)["turns"];
    REQUIRE(turns.size() == kTurns);
    for (int t = 0; t < kTurns; ++t) {
      const auto& turn = turns[t];
      CHECK(turn["user_id"] == "student" + std::to_string(u));
      CHECK(turn["sequence"] == t);
      CHECK(turn["prompt"].get<std::string>().rfind("user " + std::to_string(u) + " turn " + std::to_string(t), 0) == 0);
      CHECK(turn["status"] == "completed");
      CHECK_FALSE(turn["answer"].get<std::string>().empty());
    }
  }
  store::EntityFilter f;
  f.course_id = "foundations";
  const auto stored = gw.store().fetch_entities(store::EntityKind::turn, f);
  CHECK(stored.size() == kUsers * kTurns);
  for (const auto& r : stored) CHECK_NOTHROW(tutor::ChatTurn::from_json(r.body));
  gw.stop();
}

TEST_CASE("state and index survive a restart") {
  testsupport::TempDir dir;
  auto config = test_config();
  config.store_root = dir.path();
  std::string answer;
  {
    Gateway gw(config);
    gw.start();
    create_course(gw, "foundations");
    upload_foundations(gw);
    answer = gw.handle(req("POST", "/courses/foundations/chat", "t-student0",
                           {{"prompt", "What is the capital of France?"}, {"mode", "quick"}}))
                 .json()["answer"];
    gw.stop();
  }
  Gateway again(config);
  again.start();
  const auto chunks = again.catalog().chunks("foundations").size();
  CHECK(chunks > 0);
  CHECK(again.vector_index().size("foundations") == chunks);
  auto turn = again.handle(req("POST", "/courses/foundations/chat", "t-student0",
                               {{"prompt", "What is the capital of France?"}, {"mode", "quick"}}));
  REQUIRE(turn.status == 200);
  CHECK(turn.json()["answer"] == answer);
  CHECK_FALSE(turn.json()["citations"].empty());

  std::filesystem::remove(dir.path() / "index" / "foundations.snap");
  Gateway rebuilt(config);
  CHECK(rebuilt.vector_index().size("foundations") == chunks);
}
