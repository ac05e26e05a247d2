#include "ragtutor/quiz.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <set>
#include <sstream>

#include "ragtutor/error.hpp"
#include "ragtutor/text.hpp"

namespace ragtutor::quiz {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view name, const E (&all)[N], const char* what) {
  for (auto e : all) {
    if (to_string(e) == name) return e;
  }
  throw Error(ErrorCode::InvalidArgument, std::string("unknown ") + what, std::string(name));
}

constexpr QuestionKind kKinds[] = {QuestionKind::multichoice, QuestionKind::truefalse, QuestionKind::shortanswer};
constexpr BloomLevel kLevels[] = {BloomLevel::remember, BloomLevel::understand, BloomLevel::apply,
                                  BloomLevel::analyze,  BloomLevel::evaluate,   BloomLevel::create};
constexpr ReviewState kStates[] = {ReviewState::unreviewed, ReviewState::approved, ReviewState::rejected,
                                   ReviewState::published};
constexpr ReviewAction kActions[] = {ReviewAction::approve, ReviewAction::reject, ReviewAction::edit,
                                     ReviewAction::publish};

void invalid(const std::string& message, std::string detail = {}) {
  throw Error(ErrorCode::ValidationFailed, message, std::move(detail));
}

nlohmann::json citations_json(const std::vector<tutor::Citation>& citations) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : citations) out.push_back(c.to_json());
  return out;
}

tutor::Citation citation_from_json(const nlohmann::json& j) {
  tutor::Citation c;
  c.chunk_id = j.at("chunk_id").get<std::string>();
  c.document_id = j.value("document_id", std::string());
  c.document_title = j.value("document_title", std::string());
  c.page_number = j.value("page_number", 0);
  c.fragment = j.at("fragment").get<std::string>();
  c.score = j.value("score", 0.0);
  return c;
}

std::string normalize_answer(std::string_view text) {
  std::string out;
  bool space = false;
  for (char ch : trim(text)) {
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += ch;
  }
  return to_lower_ascii(out);
}

}  // namespace

std::string_view to_string(QuestionKind kind) {
  switch (kind) {
    case QuestionKind::multichoice: return "multichoice";
    case QuestionKind::truefalse: return "truefalse";
    case QuestionKind::shortanswer: return "shortanswer";
  }
  return "multichoice";
}

std::string_view to_string(BloomLevel level) {
  switch (level) {
    case BloomLevel::remember: return "remember";
    case BloomLevel::understand: return "understand";
    case BloomLevel::apply: return "apply";
    case BloomLevel::analyze: return "analyze";
    case BloomLevel::evaluate: return "evaluate";
    case BloomLevel::create: return "create";
  }
  return "remember";
}

std::string_view to_string(ReviewState state) {
  switch (state) {
    case ReviewState::unreviewed: return "unreviewed";
    case ReviewState::approved: return "approved";
    case ReviewState::rejected: return "rejected";
    case ReviewState::published: return "published";
  }
  return "unreviewed";
}

std::string_view to_string(ReviewAction action) {
  switch (action) {
    case ReviewAction::approve: return "approve";
    case ReviewAction::reject: return "reject";
    case ReviewAction::edit: return "edit";
    case ReviewAction::publish: return "publish";
  }
  return "approve";
}

QuestionKind parse_question_kind(std::string_view name) { return parse_enum(name, kKinds, "question kind"); }
BloomLevel parse_bloom_level(std::string_view name) { return parse_enum(name, kLevels, "bloom level"); }
ReviewState parse_review_state(std::string_view name) { return parse_enum(name, kStates, "review state"); }
ReviewAction parse_review_action(std::string_view name) { return parse_enum(name, kActions, "review action"); }

void Question::validate() const {
  if (is_blank(stem)) invalid("question stem is empty", question_id);
  if (is_blank(explanation)) invalid("question explanation is empty", question_id);
  if (citations.empty()) invalid("question has no citation", question_id);
  for (const auto& c : citations) {
    if (c.chunk_id.empty() || is_blank(c.fragment)) invalid("citation needs a chunk and a fragment", question_id);
  }
  std::set<std::string> seen;
  int correct = 0;
  for (const auto& o : options) {
    if (is_blank(o.text)) invalid("option text is empty", question_id);
    if (!seen.insert(normalize_answer(o.text)).second) invalid("duplicate option", question_id);
    correct += o.correct ? 1 : 0;
  }
  switch (kind) {
    case QuestionKind::multichoice:
      if (options.size() < 3) invalid("multichoice needs at least 3 options", question_id);
      if (correct != 1) invalid("multichoice needs exactly one correct option", question_id);
      break;
    case QuestionKind::truefalse:
      if (options.size() != 2 || correct != 1) invalid("truefalse needs two options, one correct", question_id);
      for (const auto& o : options) {
        const auto t = normalize_answer(o.text);
        if (t != "true" && t != "false") invalid("truefalse options are True and False", question_id);
      }
      break;
    case QuestionKind::shortanswer:
      if (options.empty() || correct != static_cast<int>(options.size()))
        invalid("shortanswer needs accepted answers only", question_id);
      break;
  }
}

nlohmann::json Question::to_json() const {
  nlohmann::json opts = nlohmann::json::array();
  for (const auto& o : options) opts.push_back({{"text", o.text}, {"correct", o.correct}});
  return {{"question_id", question_id},
          {"stem", stem},
          {"kind", to_string(kind)},
          {"options", opts},
          {"explanation", explanation},
          {"citations", citations_json(citations)},
          {"bloom_level", to_string(bloom_level)}};
}

Question Question::from_json(const nlohmann::json& j) {
  try {
    Question q;
    q.question_id = j.value("question_id", std::string());
    q.stem = j.at("stem").get<std::string>();
    q.kind = parse_question_kind(j.at("kind").get<std::string>());
    for (const auto& o : j.at("options")) q.options.push_back({o.at("text").get<std::string>(), o.at("correct").get<bool>()});
    q.explanation = j.at("explanation").get<std::string>();
    for (const auto& c : j.at("citations")) q.citations.push_back(citation_from_json(c));
    q.bloom_level = parse_bloom_level(j.value("bloom_level", std::string("remember")));
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ValidationFailed, "malformed question", e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ValidationFailed) throw;
    throw Error(ErrorCode::ValidationFailed, e.what(), e.detail());
  }
}

nlohmann::json QuizScope::to_json() const {
  switch (kind) {
    case Kind::whole_course: return "whole_course";
    case Kind::topic: return {{"topic", topic}};
    case Kind::documents: return {{"document_ids", document_ids}};
  }
  return "whole_course";
}

QuizScope QuizScope::from_json(const nlohmann::json& j) {
  QuizScope s;
  if (j.is_null() || (j.is_string() && j.get<std::string>() == "whole_course")) return s;
  if (j.is_object() && j.contains("topic") && j["topic"].is_string() && !is_blank(j["topic"].get<std::string>())) {
    s.kind = Kind::topic;
    s.topic = j["topic"].get<std::string>();
    return s;
  }
  if (j.is_object() && j.contains("document_ids") && j["document_ids"].is_array() && !j["document_ids"].empty()) {
    s.kind = Kind::documents;
    for (const auto& d : j["document_ids"]) {
      if (!d.is_string()) break;
      s.document_ids.push_back(d.get<std::string>());
    }
    if (s.document_ids.size() == j["document_ids"].size()) return s;
  }
  throw Error(ErrorCode::InvalidArgument, "quiz scope must be whole_course, a topic or document ids", j.dump());
}

nlohmann::json Quiz::to_json() const {
  nlohmann::json qs = nlohmann::json::array();
  for (const auto& q : questions) qs.push_back(q.to_json());
  return {{"quiz_id", quiz_id},
          {"course_id", course_id},
          {"scope", scope.to_json()},
          {"questions", qs},
          {"review_state", to_string(review_state)},
          {"created_by", created_by},
          {"reviewed_by", reviewed_by ? nlohmann::json(*reviewed_by) : nlohmann::json(nullptr)},
          {"revision", revision},
          {"requested", requested},
          {"warnings", warnings},
          {"created_at", created_at}};
}

Quiz Quiz::from_json(const nlohmann::json& j) {
  Quiz q;
  q.quiz_id = j.at("quiz_id").get<std::string>();
  q.course_id = j.at("course_id").get<std::string>();
  q.scope = QuizScope::from_json(j.value("scope", nlohmann::json("whole_course")));
  for (const auto& item : j.at("questions")) q.questions.push_back(Question::from_json(item));
  q.review_state = parse_review_state(j.at("review_state").get<std::string>());
  q.created_by = j.value("created_by", std::string());
  if (j.contains("reviewed_by") && j["reviewed_by"].is_string()) q.reviewed_by = j["reviewed_by"].get<std::string>();
  q.revision = j.value("revision", 0);
  q.requested = j.value("requested", static_cast<int>(q.questions.size()));
  q.warnings = j.value("warnings", std::vector<std::string>());
  q.created_at = j.value("created_at", std::int64_t{0});
  return q;
}

bool visible_to_students(ReviewState state) { return state == ReviewState::published; }

bool exportable(ReviewState state) { return state == ReviewState::approved || state == ReviewState::published; }

std::optional<ReviewState> next_review_state(ReviewState from, ReviewAction action) {
  switch (from) {
    case ReviewState::unreviewed:
      if (action == ReviewAction::approve) return ReviewState::approved;
      if (action == ReviewAction::reject) return ReviewState::rejected;
      if (action == ReviewAction::edit) return ReviewState::unreviewed;
      break;
    case ReviewState::rejected:
    case ReviewState::approved:
      if (action == ReviewAction::edit) return ReviewState::unreviewed;
      if (from == ReviewState::approved && action == ReviewAction::publish) return ReviewState::published;
      break;
    case ReviewState::published: break;
  }
  return std::nullopt;
}

BloomMix default_bloom_mix() {
  return {{BloomLevel::remember, 0.3}, {BloomLevel::understand, 0.3}, {BloomLevel::apply, 0.2}, {BloomLevel::analyze, 0.2}};
}

std::vector<BloomLevel> apportion_bloom(int n, const BloomMix& mix) {
  double total = 0.0;
  for (const auto& [_, w] : mix) {
    if (w < 0.0 || !std::isfinite(w)) throw Error(ErrorCode::InvalidArgument, "bloom weights must be non-negative");
    total += w;
  }
  if (total <= 0.0) throw Error(ErrorCode::InvalidArgument, "bloom mix is empty");
  struct Share {
    BloomLevel level;
    int whole;
    double remainder;
  };
  std::vector<Share> shares;
  int assigned = 0;
  for (const auto& [level, w] : mix) {
    const double exact = n * w / total;
    const int whole = static_cast<int>(std::floor(exact + 1e-9));
    shares.push_back({level, whole, exact - whole});
    assigned += whole;
  }
  auto order = shares;
  std::stable_sort(order.begin(), order.end(), [](const Share& a, const Share& b) { return a.remainder > b.remainder + 1e-12; });
  for (int i = 0; assigned < n; ++i, ++assigned) {
    const auto level = order[static_cast<std::size_t>(i) % order.size()].level;
    for (auto& s : shares) {
      if (s.level == level) ++s.whole;
    }
  }
  std::vector<BloomLevel> out;
  for (const auto& s : shares) out.insert(out.end(), static_cast<std::size_t>(s.whole), s.level);
  return out;
}

std::string grammar_instructions() {
  std::string g;
  g += "Write each question inside a fenced block that starts with ";
  g += generation::kQuizFence;
  g += " and ends with ```. Use exactly these lines per question:\n";
  g += "Q: <question stem>\n";
  g += "TYPE: multichoice | truefalse | shortanswer\n";
  g += "BLOOM: remember | understand | apply | analyze | evaluate | create\n";
  g += "A: <correct option> (one line; shortanswer may list several accepted answers)\n";
  g += "X: <incorrect option> (multichoice: two or more; truefalse: one)\n";
  g += "EXPLAIN: <why the answer is correct, referring to the context>\n";
  g += "CITE: [S1] (one or more context markers)\n";
  g += "Start every question with its Q: line. Items that break this format are discarded.\n";
  return g;
}

ParseOutcome parse_generator_output(std::string_view text, const std::vector<tutor::ContextPassage>& passages) {
  static const std::regex cite_list(R"(^(\[S\d+\][ ,]*)+$)");
  static const std::regex marker(R"(\[S(\d+)\])");
  ParseOutcome out;

  std::vector<std::vector<std::string>> items;
  bool in_fence = false;
  bool stray = false;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    const std::string line(trim(raw));
    if (!in_fence) {
      if (line == generation::kQuizFence) {
        in_fence = true;
        stray = false;
      }
      continue;
    }
    if (line == "```") {
      in_fence = false;
      continue;
    }
    if (line.empty()) continue;
    if (line.rfind("Q:", 0) == 0) {
      items.push_back({line});
    } else if (items.empty() || stray) {
      if (!stray) ++out.discarded;
      stray = true;
    } else {
      items.back().push_back(line);
    }
  }

  for (const auto& lines : items) {
    Question q;
    std::optional<std::string> type, bloom, explain, cite;
    bool ok = true;
    bool stem_seen = false;
    for (const auto& line : lines) {
      const auto colon = line.find(':');
      if (colon == std::string::npos) {
        ok = false;
        break;
      }
      const std::string key = line.substr(0, colon);
      const std::string value(trim(std::string_view(line).substr(colon + 1)));
      if (value.empty()) {
        ok = false;
        break;
      }
      auto once = [&](std::optional<std::string>& slot) {
        if (slot) ok = false;
        slot = value;
      };
      if (key == "Q") {
        if (stem_seen) ok = false;
        stem_seen = true;
        q.stem = value;
      } else if (key == "TYPE") {
        once(type);
      } else if (key == "BLOOM") {
        once(bloom);
      } else if (key == "A") {
        q.options.push_back({value, true});
      } else if (key == "X") {
        q.options.push_back({value, false});
      } else if (key == "EXPLAIN") {
        once(explain);
      } else if (key == "CITE") {
        once(cite);
      } else {
        ok = false;
      }
      if (!ok) break;
    }
    if (!ok || !type || !bloom || !explain || !cite || !std::regex_match(*cite, cite_list)) {
      ++out.discarded;
      continue;
    }
    try {
      q.kind = parse_question_kind(*type);
      q.bloom_level = parse_bloom_level(*bloom);
    } catch (const Error&) {
      ++out.discarded;
      continue;
    }
    q.explanation = *explain;
    std::set<int> cited;
    for (std::sregex_iterator it(cite->begin(), cite->end(), marker), end; it != end; ++it) {
      const int i = std::stoi((*it)[1]);
      if (i < 1 || i > static_cast<int>(passages.size())) {
        ok = false;
        break;
      }
      if (!cited.insert(i).second) continue;
      const auto& p = passages[static_cast<std::size_t>(i - 1)];
      tutor::Citation c;
      c.chunk_id = p.hit.chunk_id;
      c.document_id = p.hit.payload.document_id;
      c.document_title = p.title;
      c.page_number = p.hit.payload.page_number;
      c.fragment = tutor::truncate_fragment(p.text);
      c.score = p.hit.score;
      q.citations.push_back(std::move(c));
    }
    if (!ok) {
      ++out.discarded;
      continue;
    }
    try {
      q.validate();
    } catch (const Error&) {
      ++out.discarded;
      continue;
    }
    out.questions.push_back(std::move(q));
  }
  return out;
}

namespace {

std::string xml_escape(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t c : utf8_decode(text)) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default:
        if (c < 0x20 && c != '\t' && c != '\n' && c != '\r') break;
        if (c == 0xFFFE || c == 0xFFFF) break;
        out += utf8_encode(std::u32string(1, c));
    }
  }
  return out;
}

void text_element(std::ostringstream& out, const std::string& indent, const char* tag, const std::string& text,
                  const char* format = nullptr) {
  out << indent << "<" << tag;
  if (format) out << " format=\"" << format << "\"";
  out << ">\n" << indent << "  <text>" << xml_escape(text) << "</text>\n" << indent << "</" << tag << ">\n";
}

}  // namespace

std::string export_moodle_xml(const Quiz& quiz) {
  if (!exportable(quiz.review_state))
    throw Error(ErrorCode::NotApproved, "only approved or published quizzes can be exported", quiz.quiz_id);
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<quiz>\n";
  int n = 0;
  for (const auto& q : quiz.questions) {
    ++n;
    out << "  <question type=\"" << to_string(q.kind) << "\">\n";
    text_element(out, "    ", "name", "Question " + std::to_string(n));
    text_element(out, "    ", "questiontext", q.stem, "html");
    text_element(out, "    ", "generalfeedback", q.explanation, "html");
    out << "    <defaultgrade>1.0000000</defaultgrade>\n";
    out << "    <penalty>0.3333333</penalty>\n";
    out << "    <hidden>0</hidden>\n";
    out << "    <idnumber>" << xml_escape(q.question_id) << "</idnumber>\n";
    const char* answer_format = "moodle_auto_format";
    if (q.kind == QuestionKind::multichoice) {
      out << "    <single>true</single>\n";
      out << "    <shuffleanswers>true</shuffleanswers>\n";
      out << "    <answernumbering>abc</answernumbering>\n";
      answer_format = "html";
    } else if (q.kind == QuestionKind::shortanswer) {
      out << "    <usecase>0</usecase>\n";
    }
    for (const auto& o : q.options) {
      const std::string text = q.kind == QuestionKind::truefalse ? normalize_answer(o.text) : o.text;
      out << "    <answer fraction=\"" << (o.correct ? "100" : "0") << "\" format=\"" << answer_format << "\">\n";
      out << "      <text>" << xml_escape(text) << "</text>\n";
      text_element(out, "      ", "feedback", q.explanation, "html");
      out << "    </answer>\n";
    }
    out << "    <tags>\n      <tag>\n        <text>bloom:" << to_string(q.bloom_level)
        << "</text>\n      </tag>\n    </tags>\n";
    out << "  </question>\n";
  }
  out << "</quiz>\n";
  return out.str();
}

nlohmann::json QuizAttempt::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [id, f] : per_question) {
    per[id] = {{"correct", f.correct},
               {"skipped", f.skipped},
               {"explanation", f.explanation},
               {"citations", citations_json(f.citations)}};
  }
  return {{"attempt_id", attempt_id},   {"quiz_id", quiz_id},           {"course_id", course_id},
          {"user_id", user_id},         {"answers", answers},           {"score", score},
          {"correct_count", correct_count}, {"question_count", question_count}, {"per_question", per},
          {"submitted_at", submitted_at}};
}

QuizAttempt score_answers(const Quiz& quiz, const nlohmann::json& answers) {
  if (!answers.is_object()) throw Error(ErrorCode::InvalidArgument, "answers must be an object");
  std::set<std::string> ids;
  for (const auto& q : quiz.questions) ids.insert(q.question_id);
  for (const auto& [id, _] : answers.items()) {
    if (!ids.count(id)) throw Error(ErrorCode::InvalidArgument, "answer for an unknown question", id);
  }
  QuizAttempt a;
  a.quiz_id = quiz.quiz_id;
  a.course_id = quiz.course_id;
  a.answers = answers;
  a.question_count = static_cast<int>(quiz.questions.size());
  for (const auto& q : quiz.questions) {
    if (!answers.contains(q.question_id))
      throw Error(ErrorCode::InvalidArgument, "question neither answered nor skipped", q.question_id);
    const auto& given = answers.at(q.question_id);
    QuestionFeedback f;
    f.explanation = q.explanation;
    f.citations = q.citations;
    if (given.is_null()) {
      f.skipped = true;
    } else if (q.kind == QuestionKind::shortanswer) {
      if (!given.is_string()) throw Error(ErrorCode::InvalidArgument, "shortanswer expects text", q.question_id);
      const auto norm = normalize_answer(given.get<std::string>());
      f.correct = std::any_of(q.options.begin(), q.options.end(),
                              [&](const Option& o) { return normalize_answer(o.text) == norm; });
    } else {
      if (!given.is_number_integer()) throw Error(ErrorCode::InvalidArgument, "expected an option index", q.question_id);
      const auto idx = given.get<long long>();
      if (idx < 0 || idx >= static_cast<long long>(q.options.size()))
        throw Error(ErrorCode::InvalidArgument, "option index out of range", q.question_id);
      f.correct = q.options[static_cast<std::size_t>(idx)].correct;
    }
    a.correct_count += f.correct ? 1 : 0;
    a.per_question[q.question_id] = std::move(f);
  }
  a.score = a.question_count > 0 ? static_cast<double>(a.correct_count) / a.question_count : 0.0;
  return a;
}

std::vector<ingest::Chunk> stratified_sample(const std::vector<ingest::Chunk>& chunks, std::size_t limit) {
  std::map<std::string, std::vector<const ingest::Chunk*>> by_doc;
  for (const auto& c : chunks) by_doc[c.document_id].push_back(&c);
  for (auto& [_, list] : by_doc) {
    std::sort(list.begin(), list.end(), [](const ingest::Chunk* a, const ingest::Chunk* b) {
      return a->ordinal != b->ordinal ? a->ordinal < b->ordinal : a->chunk_id < b->chunk_id;
    });
  }
  std::map<std::string, std::size_t> quota;
  std::size_t taken = 0;
  limit = std::min(limit, chunks.size());
  while (taken < limit) {
    for (const auto& [doc, list] : by_doc) {
      if (taken == limit) break;
      if (quota[doc] < list.size()) {
        ++quota[doc];
        ++taken;
      }
    }
  }
  std::vector<ingest::Chunk> out;
  for (const auto& [doc, list] : by_doc) {
    const std::size_t q = quota[doc];
    for (std::size_t i = 0; i < q; ++i) out.push_back(*list[(2 * i + 1) * list.size() / (2 * q)]);
  }
  return out;
}

QuizService::QuizService(Catalog& catalog, index::VectorIndex& index, embeddings::EmbeddingProvider& embedder,
                         generation::GenerationProvider& generator, progress::ProgressTracker* progress)
    : catalog_(catalog), index_(index), embedder_(embedder), generator_(generator), progress_(progress) {}

std::vector<tutor::ContextPassage> QuizService::scope_passages(const std::string& course_id, const QuizScope& scope,
                                                               int top_k) const {
  std::map<std::string, std::string> titles;
  for (const auto& d : catalog_.documents(course_id)) titles[d.document_id] = d.title;
  std::vector<tutor::ContextPassage> out;
  if (scope.kind == QuizScope::Kind::topic) {
    if (!index_.has_collection(course_id)) return out;
    const auto q = embeddings::embed_text(scope.topic, embedder_);
    for (const auto& hit : index_.query_top_k(course_id, q, top_k)) {
      auto chunk = catalog_.chunk(course_id, hit.chunk_id);
      if (chunk) out.push_back({hit, chunk->text, titles[hit.payload.document_id]});
    }
    return out;
  }
  std::vector<ingest::Chunk> pool;
  if (scope.kind == QuizScope::Kind::documents) {
    for (const auto& id : scope.document_ids) {
      if (!titles.count(id)) throw Error(ErrorCode::InvalidArgument, "document is not part of the course", id);
      auto chunks = catalog_.chunks(course_id, id);
      pool.insert(pool.end(), chunks.begin(), chunks.end());
    }
  } else {
    pool = catalog_.chunks(course_id);
  }
  const auto limit = static_cast<std::size_t>(std::max(1, top_k) * kSampleFactor);
  for (const auto& c : stratified_sample(pool, limit)) {
    out.push_back({{c.chunk_id, 1.0, {c.document_id, c.page_number, c.ordinal}}, c.text, titles[c.document_id]});
  }
  return out;
}

Quiz QuizService::generate_quiz(const GenerateRequest& request) {
  if (request.n_questions < 1 || request.n_questions > kMaxQuestions)
    throw Error(ErrorCode::InvalidArgument, "n_questions must be between 1 and 50", std::to_string(request.n_questions));
  if (request.kinds.empty()) throw Error(ErrorCode::InvalidArgument, "at least one question kind is required");
  const auto course = catalog_.course(request.course_id);
  if (!index_.has_collection(request.course_id) || index_.size(request.course_id) == 0)
    throw Error(ErrorCode::InvalidArgument, "course has no indexed material", request.course_id);
  const auto plan = apportion_bloom(request.n_questions, request.bloom_mix);
  const auto passages = scope_passages(request.course_id, request.scope, request.top_k);
  if (passages.empty()) throw Error(ErrorCode::InvalidArgument, "scope has no material", request.course_id);

  std::string system = "You write quiz questions for a course. Use only the provided context.\n";
  system += grammar_instructions();
  system += "\nContext:\n" + tutor::render_context_block(passages);
  const double temperature = tutor::default_temperature(course.discipline);

  std::vector<Question> accepted;
  std::set<std::pair<std::string, std::string>> seen;
  auto correct_text = [](const Question& q) {
    for (const auto& o : q.options) {
      if (o.correct) return normalize_answer(o.text);
    }
    return std::string();
  };
  const auto n = static_cast<std::size_t>(request.n_questions);
  for (std::size_t start = 0; start < n; start += kBatchSize) {
    std::vector<std::size_t> remaining;
    for (std::size_t i = start; i < std::min(n, start + kBatchSize); ++i) remaining.push_back(i);
    for (int attempt = 0; attempt <= kBatchRetries && !remaining.empty(); ++attempt) {
      std::string levels, kinds;
      for (std::size_t k = 0; k < remaining.size(); ++k) {
        const auto slot = remaining[k];
        levels += (k ? ", " : "") + std::string(to_string(plan[slot]));
        kinds += (k ? ", " : "") + std::string(to_string(request.kinds[slot % request.kinds.size()]));
      }
      std::string user = "Number of questions: " + std::to_string(remaining.size()) + "\n";
      user += "Question types: " + kinds + "\n";
      user += "Bloom levels: " + levels + "\n";
      user += "Existing questions: " + std::to_string(accepted.size()) + "\n";
      if (request.scope.kind == QuizScope::Kind::topic) user += "Topic: " + request.scope.topic + "\n";
      if (!accepted.empty()) {
        user += "Do not repeat these stems:\n";
        for (const auto& q : accepted) user += "- " + q.stem + "\n";
      }
      const auto result = generator_.generate({system, user, temperature, 1024});
      auto parsed = parse_generator_output(result.text, passages);
      for (auto& q : parsed.questions) {
        if (remaining.empty()) break;
        if (!seen.insert({normalize_answer(q.stem), correct_text(q)}).second) continue;
        accepted.push_back(std::move(q));
        remaining.erase(remaining.begin());
      }
    }
  }
  if (accepted.size() * 2 < n) {
    throw Error(ErrorCode::GenerationParseError, "too few valid questions after retries",
                "valid=" + std::to_string(accepted.size()) + " requested=" + std::to_string(n));
  }

  Quiz quiz;
  quiz.quiz_id = make_id("quiz");
  quiz.course_id = request.course_id;
  quiz.scope = request.scope;
  quiz.questions = std::move(accepted);
  quiz.created_by = "gen-" + generator_.id() + "-" + make_id("run").substr(4);
  quiz.requested = request.n_questions;
  if (quiz.questions.size() < n) {
    quiz.warnings.push_back("shortfall: generated " + std::to_string(quiz.questions.size()) + " of " +
                            std::to_string(n) + " questions");
  }
  return create_quiz(std::move(quiz));
}

void QuizService::check_grounded(const std::string& course_id, const std::vector<Question>& questions) const {
  for (const auto& q : questions) {
    q.validate();
    for (const auto& c : q.citations) {
      auto chunk = catalog_.chunk(course_id, c.chunk_id);
      if (!chunk) invalid("citation refers to a chunk outside the course", c.chunk_id);
      if (chunk->text.find(c.fragment) == std::string::npos) invalid("citation fragment is not in the chunk", c.chunk_id);
      if (chunk->page_number != c.page_number || chunk->document_id != c.document_id)
        invalid("citation page does not match the chunk", c.chunk_id);
    }
  }
}

Quiz QuizService::persist(const Quiz& quiz, int expected_version) {
  Quiz next = quiz;
  next.revision = expected_version + 1;
  store::EntityRecord r;
  r.kind = store::EntityKind::quiz;
  r.entity_id = next.quiz_id;
  r.course_id = next.course_id;
  r.created_at = next.created_at;
  r.version = expected_version;
  r.body = next.to_json();
  next.revision = static_cast<int>(catalog_.store().persist_entity(std::move(r)));
  return next;
}

Quiz QuizService::create_quiz(Quiz draft) {
  catalog_.course(draft.course_id);
  if (draft.quiz_id.empty()) draft.quiz_id = make_id("quiz");
  if (draft.questions.empty()) invalid("quiz has no questions", draft.quiz_id);
  for (std::size_t i = 0; i < draft.questions.size(); ++i) {
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "-q%02zu", i + 1);
    draft.questions[i].question_id = draft.quiz_id + suffix;
  }
  check_grounded(draft.course_id, draft.questions);
  draft.review_state = ReviewState::unreviewed;
  draft.reviewed_by.reset();
  if (draft.requested == 0) draft.requested = static_cast<int>(draft.questions.size());
  if (draft.created_at == 0) draft.created_at = now_millis();
  return persist(draft, 0);
}

Quiz QuizService::get(const std::string& quiz_id) const {
  auto r = catalog_.store().get(store::EntityKind::quiz, quiz_id);
  if (!r) throw Error(ErrorCode::UnknownQuiz, "unknown quiz", quiz_id);
  auto q = Quiz::from_json(r->body);
  q.revision = static_cast<int>(r->version);
  return q;
}

Quiz QuizService::view(const std::string& quiz_id, Role role) const {
  auto q = get(quiz_id);
  if (role == Role::student && !visible_to_students(q.review_state))
    throw Error(ErrorCode::UnknownQuiz, "unknown quiz", quiz_id);
  return q;
}

std::vector<Quiz> QuizService::quizzes(const std::string& course_id, Role role) const {
  catalog_.course(course_id);
  store::EntityFilter f;
  f.course_id = course_id;
  std::vector<Quiz> out;
  for (const auto& r : catalog_.store().fetch_entities(store::EntityKind::quiz, f)) {
    auto q = Quiz::from_json(r.body);
    q.revision = static_cast<int>(r.version);
    if (role == Role::student && !visible_to_students(q.review_state)) continue;
    out.push_back(std::move(q));
  }
  std::sort(out.begin(), out.end(), [](const Quiz& a, const Quiz& b) {
    return a.created_at != b.created_at ? a.created_at < b.created_at : a.quiz_id < b.quiz_id;
  });
  return out;
}

Quiz QuizService::transition_review_state(const std::string& quiz_id, ReviewAction action,
                                          const std::string& actor_id, Role role,
                                          std::optional<int> expected_revision,
                                          const nlohmann::json& edited_payload) {
  if (role == Role::student) throw Error(ErrorCode::ForbiddenRole, "review needs a teacher", actor_id);
  auto quiz = get(quiz_id);
  if (expected_revision && *expected_revision != quiz.revision) {
    throw Error(ErrorCode::VersionConflict, "quiz changed since it was loaded",
                "expected=" + std::to_string(*expected_revision) + " actual=" + std::to_string(quiz.revision));
  }
  const auto next = next_review_state(quiz.review_state, action);
  if (!next) {
    throw Error(ErrorCode::IllegalTransition, "illegal review transition",
                std::string(to_string(quiz.review_state)) + " -> " + std::string(to_string(action)));
  }
  const int current = quiz.revision;
  if (action == ReviewAction::edit) {
    if (!edited_payload.is_object() || !edited_payload.contains("questions") || !edited_payload["questions"].is_array())
      invalid("edit needs a questions array");
    std::vector<Question> edited;
    for (const auto& item : edited_payload["questions"]) edited.push_back(Question::from_json(item));
    if (edited.empty()) invalid("quiz has no questions", quiz_id);
    std::set<std::string> ids;
    for (const auto& q : quiz.questions) ids.insert(q.question_id);
    std::set<std::string> used;
    int fresh = 0;
    for (auto& q : edited) {
      if (q.question_id.empty() || !ids.count(q.question_id) || !used.insert(q.question_id).second) {
        char suffix[24];
        std::snprintf(suffix, sizeof suffix, "-e%d-%02d", current, ++fresh);
        q.question_id = quiz_id + suffix;
      }
    }
    check_grounded(quiz.course_id, edited);
    quiz.questions = std::move(edited);
    quiz.reviewed_by.reset();
  } else {
    quiz.reviewed_by = actor_id;
  }
  quiz.review_state = *next;
  return persist(quiz, current);
}

QuizAttempt QuizService::grade_attempt(const std::string& quiz_id, const nlohmann::json& answers,
                                       const std::string& user_id) {
  const auto quiz = get(quiz_id);
  if (quiz.review_state != ReviewState::published)
    throw Error(ErrorCode::QuizNotPublished, "quiz is not published", quiz_id);
  auto attempt = score_answers(quiz, answers);
  attempt.attempt_id = make_id("attempt");
  attempt.user_id = user_id;
  attempt.submitted_at = now_millis();

  store::EntityRecord r;
  r.kind = store::EntityKind::attempt;
  r.entity_id = attempt.attempt_id;
  r.course_id = quiz.course_id;
  r.created_at = attempt.submitted_at;
  r.body = attempt.to_json();
  catalog_.store().persist_entity(std::move(r));

  if (progress_) {
    progress::InteractionEvent e;
    e.user_id = user_id;
    e.course_id = quiz.course_id;
    e.kind = progress::InteractionKind::quiz_attempt;
    e.timestamp = attempt.submitted_at;
    std::set<std::string> chunks;
    for (const auto& q : quiz.questions) {
      for (const auto& c : q.citations) chunks.insert(c.chunk_id);
    }
    e.chunk_ids.assign(chunks.begin(), chunks.end());
    progress_->record_interaction(e);
  }
  return attempt;
}

std::string QuizService::export_moodle_xml(const std::string& quiz_id) const {
  return quiz::export_moodle_xml(get(quiz_id));
}

}  // namespace ragtutor::quiz
