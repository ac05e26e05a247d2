#include "ragtutor/evalsuite.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "ragtutor/error.hpp"
#include "ragtutor/index.hpp"
#include "ragtutor/pipeline.hpp"
#include "ragtutor/store.hpp"
#include "ragtutor/text.hpp"

namespace ragtutor::eval {

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, "cannot read file", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

void unavailable(const std::string& message, std::string detail = {}) {
  throw Error(ErrorCode::JudgeUnavailable, message, std::move(detail));
}

template <typename T>
void expect_size(const std::vector<T>& got, std::size_t want, const char* what) {
  if (got.size() != want) {
    unavailable(std::string("judge returned the wrong number of ") + what,
                "expected=" + std::to_string(want) + " got=" + std::to_string(got.size()));
  }
}

const std::set<std::string>& stopwords() {
  static const std::set<std::string> words = {
      "a",    "an",   "and",  "are", "as",   "at",    "be",   "by",   "can",  "do",   "does", "for",
      "from", "has",  "have", "how", "in",   "is",    "it",   "its",  "of",   "on",   "or",   "that",
      "the",  "their", "this", "to", "was",  "were",  "what", "when", "which", "who", "why",  "with"};
  return words;
}

std::set<std::string> content_tokens(std::string_view text) {
  std::set<std::string> out;
  for (auto& t : tokenize(text)) {
    if (!stopwords().count(t)) out.insert(std::move(t));
  }
  return out;
}

std::string strip_markers(std::string_view text) {
  static const std::regex marker(R"(\[S\d+\])");
  return std::regex_replace(std::string(text), marker, "");
}

double coverage(const std::set<std::string>& part, const std::set<std::string>& whole) {
  if (part.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& t : part) hit += whole.count(t);
  return static_cast<double>(hit) / static_cast<double>(part.size());
}

std::set<std::string> context_tokens(const EvalCase& c) {
  std::set<std::string> all;
  for (const auto& ctx : c.retrieved_contexts) {
    auto t = content_tokens(ctx);
    all.insert(t.begin(), t.end());
  }
  return all;
}

std::vector<bool> bools_from(const nlohmann::json& j) {
  std::vector<bool> out;
  for (const auto& v : j) {
    if (v.is_boolean()) {
      out.push_back(v.get<bool>());
    } else if (v.is_number()) {
      out.push_back(v.get<double>() != 0.0);
    } else if (v.is_string()) {
      const auto s = to_lower_ascii(trim(v.get<std::string>()));
      if (s == "yes" || s == "true" || s == "1") {
        out.push_back(true);
      } else if (s == "no" || s == "false" || s == "0") {
        out.push_back(false);
      } else {
        unavailable("judge verdict is not yes or no", s);
      }
    } else {
      unavailable("judge verdict has the wrong type", v.dump());
    }
  }
  return out;
}

std::vector<std::string> strings_from(const nlohmann::json& j) {
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) unavailable("judge returned a non-string item", v.dump());
    if (!is_blank(v.get<std::string>())) out.push_back(v.get<std::string>());
  }
  return out;
}

std::string numbered(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += "[" + std::to_string(i + 1) + "] " + items[i] + "\n";
  return out;
}

std::string fill(std::string tpl, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    const std::string placeholder = "{" + key + "}";
    for (auto pos = tpl.find(placeholder); pos != std::string::npos; pos = tpl.find(placeholder, pos + value.size()))
      tpl.replace(pos, placeholder.size(), value);
  }
  return tpl;
}

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  const auto count = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < count; ++t) threads.emplace_back(run);
  run();
  for (auto& t : threads) t.join();
}

}  // namespace

nlohmann::json EvalCase::to_json() const {
  return {{"case_id", case_id},
          {"question", question},
          {"ground_truth", ground_truth},
          {"retrieved_contexts", retrieved_contexts},
          {"answer", answer},
          {"discipline", to_string(discipline)},
          {"mode", tutor::to_string(mode)}};
}

EvalCase EvalCase::from_json(const nlohmann::json& j) {
  try {
    EvalCase c;
    c.case_id = j.at("case_id").get<std::string>();
    c.question = j.at("question").get<std::string>();
    c.ground_truth = j.value("ground_truth", std::string());
    c.retrieved_contexts = j.value("retrieved_contexts", std::vector<std::string>());
    c.answer = j.value("answer", std::string());
    c.discipline = parse_discipline(j.value("discipline", std::string("stem")));
    c.mode = tutor::parse_mode(j.value("mode", std::string("quick")));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "malformed eval case", e.what());
  }
}

std::vector<EvalCase> load_dataset(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "dataset is not valid JSON", e.what());
  }
  if (j.is_object() && j.contains("cases")) j = j["cases"];
  if (!j.is_array()) throw Error(ErrorCode::InvalidArgument, "dataset must be a list of cases", path.string());
  std::vector<EvalCase> out;
  for (const auto& item : j) out.push_back(EvalCase::from_json(item.contains("case") ? item["case"] : item));
  return out;
}

nlohmann::json MetricScores::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto* name : kMetricNames) {
    const auto v = metric(*this, name);
    j[name] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  }
  return j;
}

std::optional<double> metric(const MetricScores& s, std::string_view name) {
  if (name == "faithfulness") return s.faithfulness;
  if (name == "answer_relevancy") return s.answer_relevancy;
  if (name == "context_recall") return s.context_recall;
  if (name == "context_precision") return s.context_precision;
  throw Error(ErrorCode::InvalidArgument, "unknown metric", std::string(name));
}

ScriptedJudge::Script ScriptedJudge::Script::from_json(const nlohmann::json& j) {
  Script s;
  s.claims = j.value("claims", std::vector<std::string>());
  s.questions = j.value("questions", std::vector<std::string>());
  auto flags = [&](const char* key) {
    std::vector<bool> out;
    for (const auto& v : j.value(key, nlohmann::json::array())) out.push_back(v.is_boolean() ? v.get<bool>() : v.get<int>() != 0);
    return out;
  };
  s.claim_verdicts = flags("claim_verdicts");
  s.recall_verdicts = flags("recall_verdicts");
  s.context_verdicts = flags("context_verdicts");
  return s;
}

ScriptedJudge::ScriptedJudge(std::map<std::string, Script> scripts, std::string id)
    : scripts_(std::move(scripts)), id_(std::move(id)) {}

const ScriptedJudge::Script& ScriptedJudge::script(const EvalCase& c) const {
  auto it = scripts_.find(c.case_id);
  if (it == scripts_.end()) unavailable("no script for case", c.case_id);
  return it->second;
}

std::vector<std::string> ScriptedJudge::decompose_claims(const EvalCase& c) { return script(c).claims; }

std::vector<bool> ScriptedJudge::verdict_claims(const EvalCase& c, const std::vector<std::string>&) {
  return script(c).claim_verdicts;
}

std::vector<std::string> ScriptedJudge::generate_questions(const EvalCase& c, int n) {
  auto q = script(c).questions;
  if (q.size() > static_cast<std::size_t>(n)) q.resize(static_cast<std::size_t>(n));
  return q;
}

std::vector<bool> ScriptedJudge::attribute_sentences(const EvalCase& c, const std::vector<std::string>&) {
  return script(c).recall_verdicts;
}

std::vector<bool> ScriptedJudge::context_relevance(const EvalCase& c) { return script(c).context_verdicts; }

LexicalJudge::LexicalJudge(double threshold, double relevance_threshold)
    : threshold_(threshold), relevance_threshold_(relevance_threshold) {}

std::vector<std::string> LexicalJudge::decompose_claims(const EvalCase& c) {
  std::vector<std::string> out;
  for (auto& s : split_sentences(strip_markers(c.answer))) {
    if (!content_tokens(s).empty()) out.push_back(std::move(s));
  }
  return out;
}

std::vector<bool> LexicalJudge::verdict_claims(const EvalCase& c, const std::vector<std::string>& claims) {
  const auto ctx = context_tokens(c);
  std::vector<bool> out;
  for (const auto& claim : claims) out.push_back(coverage(content_tokens(claim), ctx) >= threshold_);
  return out;
}

std::vector<std::string> LexicalJudge::generate_questions(const EvalCase& c, int n) {
  const auto sentences = decompose_claims(c);
  std::vector<std::string> out;
  for (int i = 0; i < n && !sentences.empty(); ++i) out.push_back(sentences[static_cast<std::size_t>(i) % sentences.size()]);
  return out;
}

std::vector<bool> LexicalJudge::attribute_sentences(const EvalCase& c, const std::vector<std::string>& sentences) {
  return verdict_claims(c, sentences);
}

std::vector<bool> LexicalJudge::context_relevance(const EvalCase& c) {
  const auto truth = content_tokens(c.ground_truth);
  std::vector<bool> out;
  for (const auto& ctx : c.retrieved_contexts) out.push_back(!truth.empty() && coverage(truth, content_tokens(ctx)) >= relevance_threshold_);
  return out;
}

JudgePrompts JudgePrompts::load(const std::filesystem::path& dir) {
  JudgePrompts p;
  p.claims = read_text(dir / "claims.txt");
  p.claim_verdicts = read_text(dir / "claim_verdicts.txt");
  p.questions = read_text(dir / "questions.txt");
  p.attribution = read_text(dir / "attribution.txt");
  p.context_relevance = read_text(dir / "context_relevance.txt");
  return p;
}

LlmJudge::LlmJudge(generation::GenerationProvider& provider, JudgePrompts prompts)
    : provider_(provider), prompts_(std::move(prompts)) {}

nlohmann::json LlmJudge::ask(const std::string& prompt) {
  generation::GenerationResult r;
  try {
    r = provider_.generate({"You are an evaluation judge. Reply with a JSON array only.", prompt, 0.0, 1024});
  } catch (const Error& e) {
    unavailable("judge provider failed", std::string(to_string(e.code())) + ": " + e.what());
  }
  const auto open = r.text.find('[');
  const auto close = r.text.rfind(']');
  if (open == std::string::npos || close == std::string::npos || close < open)
    unavailable("judge reply has no JSON array", r.text.substr(0, 200));
  try {
    return nlohmann::json::parse(r.text.substr(open, close - open + 1));
  } catch (const nlohmann::json::exception& e) {
    unavailable("judge reply is not valid JSON", e.what());
  }
  return nullptr;
}

std::vector<std::string> LlmJudge::decompose_claims(const EvalCase& c) {
  return strings_from(ask(fill(prompts_.claims, {{"question", c.question}, {"answer", c.answer}})));
}

std::vector<bool> LlmJudge::verdict_claims(const EvalCase& c, const std::vector<std::string>& claims) {
  auto out = bools_from(ask(fill(prompts_.claim_verdicts,
                                 {{"contexts", numbered(c.retrieved_contexts)}, {"items", numbered(claims)}})));
  expect_size(out, claims.size(), "claim verdicts");
  return out;
}

std::vector<std::string> LlmJudge::generate_questions(const EvalCase& c, int n) {
  auto out = strings_from(ask(fill(prompts_.questions, {{"answer", c.answer}, {"n", std::to_string(n)}})));
  if (out.size() > static_cast<std::size_t>(n)) out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<bool> LlmJudge::attribute_sentences(const EvalCase& c, const std::vector<std::string>& sentences) {
  auto out = bools_from(ask(fill(prompts_.attribution,
                                 {{"contexts", numbered(c.retrieved_contexts)}, {"items", numbered(sentences)}})));
  expect_size(out, sentences.size(), "attribution verdicts");
  return out;
}

std::vector<bool> LlmJudge::context_relevance(const EvalCase& c) {
  auto out = bools_from(ask(fill(prompts_.context_relevance, {{"question", c.question},
                                                              {"ground_truth", c.ground_truth},
                                                              {"contexts", numbered(c.retrieved_contexts)}})));
  expect_size(out, c.retrieved_contexts.size(), "context verdicts");
  return out;
}

DistractionJudge::DistractionJudge(std::shared_ptr<Judge> inner, int cutoff)
    : inner_(std::move(inner)), cutoff_(cutoff), id_("distraction(" + inner_->id() + ")") {}

std::vector<bool> DistractionJudge::context_relevance(const EvalCase& c) {
  auto out = inner_->context_relevance(c);
  for (std::size_t i = static_cast<std::size_t>(std::max(0, cutoff_)); i < out.size(); ++i) out[i] = false;
  return out;
}

std::shared_ptr<Judge> make_judge(const nlohmann::json& spec, const std::filesystem::path& base_dir) {
  const auto kind = spec.is_string() ? spec.get<std::string>() : spec.value("kind", std::string("lexical"));
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  if (kind == "lexical") {
    if (spec.is_string()) return std::make_shared<LexicalJudge>();
    return std::make_shared<LexicalJudge>(spec.value("threshold", 0.6), spec.value("relevance_threshold", 0.3));
  }
  if (kind == "scripted") {
    nlohmann::json scripts = spec.is_object() ? spec.value("scripts", nlohmann::json()) : nlohmann::json();
    if (scripts.is_string()) scripts = nlohmann::json::parse(read_text(resolve(scripts.get<std::string>())));
    if (scripts.is_object() && scripts.contains("cases")) scripts = scripts["cases"];
    std::map<std::string, ScriptedJudge::Script> table;
    if (scripts.is_array()) {
      for (const auto& item : scripts) {
        const auto id = item.contains("case") ? item["case"].at("case_id") : item.at("case_id");
        table[id.get<std::string>()] = ScriptedJudge::Script::from_json(item.value("script", item));
      }
    } else if (scripts.is_object()) {
      for (const auto& [id, s] : scripts.items()) table[id] = ScriptedJudge::Script::from_json(s);
    } else {
      throw Error(ErrorCode::InvalidArgument, "scripted judge needs scripts");
    }
    return std::make_shared<ScriptedJudge>(std::move(table));
  }
  if (kind == "llm") {
    if (!spec.is_object() || !spec.contains("provider") || !spec.contains("prompts"))
      throw Error(ErrorCode::InvalidArgument, "llm judge needs a provider and a prompts directory");
    struct Owned final : Judge {
      std::shared_ptr<generation::GenerationProvider> provider;
      std::unique_ptr<LlmJudge> judge;
      const std::string& id() const override { return judge->id(); }
      std::vector<std::string> decompose_claims(const EvalCase& c) override { return judge->decompose_claims(c); }
      std::vector<bool> verdict_claims(const EvalCase& c, const std::vector<std::string>& x) override {
        return judge->verdict_claims(c, x);
      }
      std::vector<std::string> generate_questions(const EvalCase& c, int n) override {
        return judge->generate_questions(c, n);
      }
      std::vector<bool> attribute_sentences(const EvalCase& c, const std::vector<std::string>& x) override {
        return judge->attribute_sentences(c, x);
      }
      std::vector<bool> context_relevance(const EvalCase& c) override { return judge->context_relevance(c); }
    };
    auto owned = std::make_shared<Owned>();
    owned->provider = generation::make_generation_provider(generation::GenerationProviderConfig::from_json(spec["provider"]));
    owned->judge = std::make_unique<LlmJudge>(*owned->provider,
                                              JudgePrompts::load(resolve(spec["prompts"].get<std::string>())));
    return owned;
  }
  if (kind == "distraction") {
    const auto inner = spec.is_object() ? spec.value("inner", nlohmann::json("lexical")) : nlohmann::json("lexical");
    const int cutoff = spec.is_object() ? spec.value("cutoff", 10) : 10;
    return std::make_shared<DistractionJudge>(make_judge(inner, base_dir), cutoff);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown judge kind", kind);
}

double context_precision_score(const std::vector<bool>& verdicts) {
  if (verdicts.empty()) throw Error(ErrorCode::InvalidArgument, "context precision needs at least one context");
  double num = 0.0;
  int relevant = 0;
  for (std::size_t k = 0; k < verdicts.size(); ++k) {
    if (!verdicts[k]) continue;
    ++relevant;
    num += static_cast<double>(relevant) / static_cast<double>(k + 1);
  }
  return relevant == 0 ? 0.0 : num / relevant;
}

std::optional<double> faithfulness(const EvalCase& c, Judge& judge) {
  if (is_blank(c.answer)) throw Error(ErrorCode::EmptyText, "faithfulness needs an answer", c.case_id);
  const auto claims = judge.decompose_claims(c);
  if (claims.empty()) return std::nullopt;
  const auto verdicts = judge.verdict_claims(c, claims);
  expect_size(verdicts, claims.size(), "claim verdicts");
  const auto supported = std::count(verdicts.begin(), verdicts.end(), true);
  return static_cast<double>(supported) / static_cast<double>(claims.size());
}

std::optional<double> answer_relevancy(const EvalCase& c, Judge& judge, embeddings::EmbeddingProvider& embedder,
                                       int n_questions) {
  if (is_blank(c.answer)) throw Error(ErrorCode::EmptyText, "answer relevancy needs an answer", c.case_id);
  if (n_questions < 1) throw Error(ErrorCode::InvalidArgument, "n_questions must be positive");
  const auto generated = judge.generate_questions(c, n_questions);
  if (generated.empty()) return std::nullopt;
  const auto original = embeddings::embed_text(c.question, embedder);
  double total = 0.0;
  for (const auto& q : generated) total += embeddings::cosine_similarity(original, embeddings::embed_text(q, embedder));
  return std::clamp(total / static_cast<double>(generated.size()), 0.0, 1.0);
}

std::optional<double> context_recall(const EvalCase& c, Judge& judge) {
  if (is_blank(c.ground_truth)) throw Error(ErrorCode::EmptyText, "context recall needs a ground truth", c.case_id);
  const auto sentences = split_sentences(c.ground_truth);
  if (sentences.empty()) return std::nullopt;
  const auto verdicts = judge.attribute_sentences(c, sentences);
  expect_size(verdicts, sentences.size(), "attribution verdicts");
  const auto attributable = std::count(verdicts.begin(), verdicts.end(), true);
  return static_cast<double>(attributable) / static_cast<double>(sentences.size());
}

std::optional<double> context_precision(const EvalCase& c, Judge& judge) {
  if (c.retrieved_contexts.empty()) throw Error(ErrorCode::InvalidArgument, "context precision needs contexts", c.case_id);
  const auto verdicts = judge.context_relevance(c);
  expect_size(verdicts, c.retrieved_contexts.size(), "context verdicts");
  return context_precision_score(verdicts);
}

MetricScores evaluate_case(const EvalCase& c, Judge& judge, embeddings::EmbeddingProvider& embedder, int n_questions) {
  auto guarded = [](auto&& fn) -> std::optional<double> {
    try {
      return fn();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::EmptyText || e.code() == ErrorCode::InvalidArgument) return std::nullopt;
      throw;
    }
  };
  MetricScores s;
  s.faithfulness = guarded([&] { return faithfulness(c, judge); });
  s.answer_relevancy = guarded([&] { return answer_relevancy(c, judge, embedder, n_questions); });
  s.context_recall = guarded([&] { return context_recall(c, judge); });
  s.context_precision = guarded([&] { return context_precision(c, judge); });
  return s;
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.count = static_cast<int>(values.size());
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / a.count;
  if (a.count > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / (a.count - 1));
  }
  return a;
}

namespace {

std::map<std::string, Aggregate> aggregate_scores(const std::vector<MetricScores>& scores) {
  std::map<std::string, Aggregate> out;
  for (const auto* name : kMetricNames) {
    std::vector<double> values;
    for (const auto& s : scores) {
      if (auto v = metric(s, name)) values.push_back(*v);
    }
    out[name] = aggregate(values);
  }
  return out;
}

}  // namespace

std::string DatasetReport::to_csv() const {
  std::string out = "case_id";
  for (const auto* name : kMetricNames) out += std::string(",") + name;
  out += ",error\n";
  for (const auto& c : cases) {
    out += csv_field(c.case_id);
    for (const auto* name : kMetricNames) {
      const auto v = metric(c.scores, name);
      out += "," + (v ? fmt(*v) : std::string());
    }
    out += "," + csv_field(c.error) + "\n";
  }
  out += "mean";
  for (const auto* name : kMetricNames) {
    const auto& a = metrics.at(name);
    out += "," + (a.count > 0 ? fmt(a.mean) : std::string());
  }
  out += ",\n";
  return out;
}

DatasetReport run_dataset(const std::vector<EvalCase>& cases, Judge& judge, embeddings::EmbeddingProvider& embedder,
                          int workers, int n_questions) {
  DatasetReport report;
  report.cases.resize(cases.size());
  parallel_for(cases.size(), workers, [&](std::size_t i) {
    auto& r = report.cases[i];
    r.case_id = cases[i].case_id;
    try {
      r.scores = evaluate_case(cases[i], judge, embedder, n_questions);
    } catch (const Error& e) {
      r.error = std::string(to_string(e.code())) + ": " + e.what();
    }
  });
  std::vector<MetricScores> scores;
  for (const auto& c : report.cases) scores.push_back(c.scores);
  report.metrics = aggregate_scores(scores);
  return report;
}

std::vector<std::string> threshold_failures(const DatasetReport& report, const std::map<std::string, double>& minimums) {
  std::vector<std::string> out;
  for (const auto& [name, minimum] : minimums) {
    auto it = report.metrics.find(name);
    if (it == report.metrics.end()) throw Error(ErrorCode::InvalidArgument, "unknown metric", name);
    if (it->second.count == 0 || it->second.mean < minimum) out.push_back(name);
  }
  return out;
}

CourseBundle CourseBundle::load(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(dir / "course.json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "course.json is not valid JSON", e.what());
  }
  CourseBundle b;
  try {
    b.course_id = j.at("course_id").get<std::string>();
    b.name = j.value("name", b.course_id);
    b.discipline = parse_discipline(j.value("discipline", std::string("stem")));
    for (const auto& d : j.at("documents")) {
      CourseDocument doc;
      doc.raw = read_text(dir / d.at("file").get<std::string>());
      doc.format = ingest::parse_source_format(d.value("format", std::string("plain_text")));
      doc.title = d.value("title", std::string());
      b.documents.push_back(std::move(doc));
    }
    for (const auto& q : j.at("questions"))
      b.questions.emplace_back(q.at("question").get<std::string>(), q.at("ground_truth").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "malformed course bundle", e.what());
  }
  return b;
}

void SweepConfig::validate() const {
  if (chunk_sizes.empty() || temperatures.empty() || top_ks.empty())
    throw Error(ErrorCode::InvalidArgument, "sweep axes must not be empty");
  for (int c : chunk_sizes) {
    if (c < 64) throw Error(ErrorCode::InvalidArgument, "chunk size must be at least 64", std::to_string(c));
  }
  for (double t : temperatures) {
    if (t < 0.0 || t > 2.0) throw Error(ErrorCode::InvalidArgument, "temperature must be in [0, 2]");
  }
  for (int k : top_ks) {
    if (k < 1) throw Error(ErrorCode::InvalidArgument, "top_k must be positive");
  }
  if (workers < 1 || n_questions < 1) throw Error(ErrorCode::InvalidArgument, "workers and n_questions must be positive");
}

SweepConfig SweepConfig::from_json(const nlohmann::json& j) {
  SweepConfig c;
  c.chunk_sizes = j.value("chunk_sizes", c.chunk_sizes);
  c.temperatures = j.value("temperatures", c.temperatures);
  c.top_ks = j.value("top_ks", c.top_ks);
  c.mode = tutor::parse_mode(j.value("mode", std::string("quick")));
  c.workers = j.value("workers", c.workers);
  c.n_questions = j.value("n_questions", c.n_questions);
  c.validate();
  return c;
}

std::vector<EvalCase> answer_cell(const CourseBundle& course, int chunk_size, double temperature, int top_k,
                                  tutor::Mode mode, embeddings::EmbeddingProvider& embedder,
                                  generation::GenerationProvider& generator) {
  store::Store store;
  Catalog catalog(store);
  index::VectorIndex index;
  IngestPipeline pipeline(catalog, index, embedder);
  catalog.create_course({course.course_id, course.name, course.discipline, true});
  const auto profile = ingest::ChunkProfile::custom(chunk_size);
  for (const auto& d : course.documents) {
    IngestRequest req;
    req.course_id = course.course_id;
    req.raw = d.raw;
    req.format = d.format;
    req.profile = profile;
    req.title = d.title;
    pipeline.ingest(req);
  }
  tutor::TutorOptions options;
  options.top_k = top_k;
  options.temperature = temperature;
  tutor::Tutor tutor(catalog, index, embedder, generator, nullptr, tutor::TemplateSet::defaults(), options);

  std::vector<EvalCase> out;
  for (std::size_t i = 0; i < course.questions.size(); ++i) {
    const auto& [question, truth] = course.questions[i];
    const auto session = tutor.open_session(course.course_id, "eval");
    const auto turn = tutor.answer_question(course.course_id, session, "eval", question, mode);
    EvalCase c;
    char id[32];
    std::snprintf(id, sizeof id, "-q%02zu", i + 1);
    c.case_id = course.course_id + id;
    c.question = question;
    c.ground_truth = truth;
    c.answer = turn.answer;
    c.discipline = course.discipline;
    c.mode = mode;
    for (const auto& hit : turn.retrieved) {
      if (auto chunk = catalog.chunk(course.course_id, hit.chunk_id)) c.retrieved_contexts.push_back(chunk->text);
    }
    out.push_back(std::move(c));
  }
  return out;
}

SweepReport run_config_sweep(const SweepConfig& config, const std::vector<CourseBundle>& courses,
                             const SweepProviders& providers) {
  config.validate();
  if (!providers.embedder || !providers.generator || !providers.judge)
    throw Error(ErrorCode::InvalidArgument, "sweep needs an embedder, a generator and a judge");
  for (const auto& c : courses) {
    if (c.questions.size() < 5) throw Error(ErrorCode::InvalidArgument, "a sweep needs at least five questions", c.course_id);
  }
  SweepReport report;
  for (const auto& course : courses) {
    for (int chunk : config.chunk_sizes) {
      for (double t : config.temperatures) {
        for (int k : config.top_ks) {
          SweepCell cell;
          cell.course_id = course.course_id;
          cell.discipline = course.discipline;
          cell.chunk_size = chunk;
          cell.temperature = t;
          cell.top_k = k;
          report.cells.push_back(std::move(cell));
        }
      }
    }
  }
  std::map<std::string, const CourseBundle*> by_id;
  for (const auto& c : courses) by_id[c.course_id] = &c;
  parallel_for(report.cells.size(), config.workers, [&](std::size_t i) {
    auto& cell = report.cells[i];
    try {
      auto embedder = providers.embedder();
      auto generator = providers.generator();
      const auto cases = answer_cell(*by_id.at(cell.course_id), cell.chunk_size, cell.temperature, cell.top_k,
                                     config.mode, *embedder, *generator);
      std::vector<MetricScores> scores;
      for (const auto& c : cases) scores.push_back(evaluate_case(c, *providers.judge, *embedder, config.n_questions));
      cell.cases = static_cast<int>(cases.size());
      cell.metrics = aggregate_scores(scores);
    } catch (const std::exception& e) {
      cell.ok = false;
      const auto* err = dynamic_cast<const Error*>(&e);
      cell.error = (err ? std::string(to_string(err->code())) : std::string("Internal")) + ": " + e.what();
    }
  });
  return report;
}

std::string SweepReport::to_csv() const {
  std::string out = "course_id,discipline,chunk_size,temperature,top_k,status,cases";
  for (const auto* name : kMetricNames) out += std::string(",") + name + "_mean," + name + "_std";
  out += ",error\n";
  for (const auto& c : cells) {
    out += csv_field(c.course_id) + "," + std::string(to_string(c.discipline)) + "," + std::to_string(c.chunk_size) +
           "," + fmt(c.temperature) + "," + std::to_string(c.top_k) + "," + (c.ok ? "ok" : "failed") + "," +
           std::to_string(c.cases);
    for (const auto* name : kMetricNames) {
      auto it = c.metrics.find(name);
      if (c.ok && it != c.metrics.end() && it->second.count > 0) {
        out += "," + fmt(it->second.mean) + "," + fmt(it->second.stddev);
      } else {
        out += ",,";
      }
    }
    out += "," + csv_field(c.error) + "\n";
  }
  return out;
}

std::string SweepReport::to_markdown() const {
  std::string out;
  std::vector<std::string> order;
  for (const auto& c : cells) {
    if (std::find(order.begin(), order.end(), c.course_id) == order.end()) order.push_back(c.course_id);
  }
  for (const auto& course : order) {
    const SweepCell* first = nullptr;
    for (const auto& c : cells) {
      if (c.course_id == course) {
        first = &c;
        break;
      }
    }
    out += "### " + course + " (" + std::string(to_string(first->discipline)) + ")\n\n";
    out += "| Chunk size | Temperature | Top-K | Faithfulness | Answer relevancy | Context recall | Context precision |\n";
    out += "|---:|---:|---:|---|---|---|---|\n";
    for (const auto& c : cells) {
      if (c.course_id != course) continue;
      char head[96];
      std::snprintf(head, sizeof head, "| %d | %.2f | %d |", c.chunk_size, c.temperature, c.top_k);
      out += head;
      for (const auto* name : kMetricNames) {
        if (!c.ok) {
          out += " failed |";
          continue;
        }
        const auto& a = c.metrics.at(name);
        char cellbuf[64];
        if (a.count == 0) {
          std::snprintf(cellbuf, sizeof cellbuf, " n/a |");
        } else {
          std::snprintf(cellbuf, sizeof cellbuf, " %.3f ± %.3f |", a.mean, a.stddev);
        }
        out += cellbuf;
      }
      out += "\n";
    }
    out += "\n";
  }
  return out;
}

std::optional<double> SweepReport::mean_metric(const std::string& course_id, int top_k, const std::string& name) const {
  std::vector<double> values;
  for (const auto& c : cells) {
    if (!c.ok || c.course_id != course_id || c.top_k != top_k) continue;
    auto it = c.metrics.find(name);
    if (it != c.metrics.end() && it->second.count > 0) values.push_back(it->second.mean);
  }
  if (values.empty()) return std::nullopt;
  return aggregate(values).mean;
}

SweepPlan SweepPlan::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "sweep plan must be an object");
  SweepPlan plan;
  plan.config = SweepConfig::from_json(j);
  const auto courses = j.value("courses", nlohmann::json::array());
  if (!courses.is_array() || courses.empty()) throw Error(ErrorCode::InvalidArgument, "sweep plan lists no courses");
  for (const auto& c : courses) {
    if (!c.is_string()) throw Error(ErrorCode::InvalidArgument, "course entries must be directory paths");
    std::filesystem::path dir(c.get<std::string>());
    plan.courses.push_back(CourseBundle::load(dir.is_relative() ? base_dir / dir : dir));
  }
  const auto embed = embeddings::EmbeddingProviderConfig::from_json(j.value("embedding", nlohmann::json::object()));
  const auto gen = generation::GenerationProviderConfig::from_json(j.value("generation", nlohmann::json::object()));
  plan.providers.embedder = [embed] { return embeddings::make_provider(embed); };
  plan.providers.generator = [gen] { return generation::make_generation_provider(gen); };
  plan.providers.judge = make_judge(j.value("judge", nlohmann::json("lexical")), base_dir);
  return plan;
}

SweepPlan SweepPlan::load(const std::filesystem::path& file) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(file));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "malformed sweep plan", e.what());
  }
  return from_json(j, file.parent_path());
}

}  // namespace ragtutor::eval
