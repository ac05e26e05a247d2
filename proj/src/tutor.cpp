#include "ragtutor/tutor.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ragtutor/error.hpp"
#include "ragtutor/text.hpp"

namespace ragtutor::tutor {

namespace {

constexpr Mode kModes[] = {Mode::quick, Mode::deep_understanding, Mode::exam_coach};
constexpr Discipline kDisciplines[] = {Discipline::stem, Discipline::humanities};

}  // namespace

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::quick: return "quick";
    case Mode::deep_understanding: return "deep_understanding";
    case Mode::exam_coach: return "exam_coach";
  }
  return "quick";
}

Mode parse_mode(std::string_view name) {
  for (auto m : kModes) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown mode", std::string(name));
}

std::string_view directive_for(Mode mode) {
  switch (mode) {
    case Mode::quick: return kQuickDirective;
    case Mode::deep_understanding: return kDeepDirective;
    case Mode::exam_coach: return kExamCoachDirective;
  }
  return kQuickDirective;
}

double default_temperature(Discipline discipline) { return discipline == Discipline::stem ? 0.3 : 0.1; }

TemplateSet TemplateSet::defaults() {
  TemplateSet t;
  t.set(Mode::quick, Discipline::stem,
        "You tutor a technical course. State the fact or result asked for and keep notation exactly as "
        "the sources write it.");
  t.set(Mode::quick, Discipline::humanities,
        "You tutor a humanities course. State the point asked for in plain language and name the source "
        "it comes from.");
  t.set(Mode::deep_understanding, Discipline::stem,
        "You tutor a technical course. Lead the student toward the method through questions and point to "
        "the definitions or formulas worth revisiting.");
  t.set(Mode::deep_understanding, Discipline::humanities,
        "You tutor a humanities course. Lead the student toward their own reading through questions and "
        "point to the passages worth rereading.");
  t.set(Mode::exam_coach, Discipline::stem,
        "You coach for a technical exam. State the givens, apply the relevant rules one at a time and "
        "check edge cases before concluding.");
  t.set(Mode::exam_coach, Discipline::humanities,
        "You coach for a humanities exam. State the claim, support each step with evidence from the "
        "sources and close with a conclusion.");
  return t;
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
  auto t = defaults();
  for (auto m : kModes) {
    for (auto d : kDisciplines) {
      const auto path = dir / (std::string(to_string(m)) + "." + std::string(to_string(d)) + ".txt");
      std::ifstream in(path);
      if (!in) continue;
      std::ostringstream ss;
      ss << in.rdbuf();
      t.set(m, d, std::string(trim(ss.str())));
    }
  }
  t.validate();
  return t;
}

const std::string& TemplateSet::get(Mode mode, Discipline discipline) const {
  return templates_.at({mode, discipline});
}

void TemplateSet::set(Mode mode, Discipline discipline, std::string text) {
  templates_[{mode, discipline}] = std::move(text);
}

void TemplateSet::validate() const {
  for (auto d : kDisciplines) {
    std::set<std::string> seen;
    for (auto m : kModes) {
      auto it = templates_.find({m, d});
      if (it == templates_.end() || is_blank(it->second))
        throw Error(ErrorCode::ValidationFailed, "mode template is empty",
                    std::string(to_string(m)) + "." + std::string(to_string(d)));
      if (!seen.insert(it->second).second)
        throw Error(ErrorCode::ValidationFailed, "mode templates must differ",
                    std::string(to_string(m)) + "." + std::string(to_string(d)));
    }
  }
}

ModeProfile default_profile(Mode mode, Discipline discipline, const TemplateSet& templates) {
  ModeProfile p;
  p.mode = mode;
  p.discipline = discipline;
  p.temperature = default_temperature(discipline);
  p.top_k = index::kDefaultTopK;
  p.system_template = templates.get(mode, discipline);
  return p;
}

nlohmann::json Citation::to_json() const {
  return {{"chunk_id", chunk_id},       {"document_id", document_id}, {"document_title", document_title},
          {"page_number", page_number}, {"fragment", fragment},       {"score", score}};
}

std::string render_context_block(const std::vector<ContextPassage>& passages) {
  std::string out;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    if (i > 0) out += "\n";
    out += "[S" + std::to_string(i + 1) + "] " + passages[i].title + ", page " +
           std::to_string(passages[i].hit.payload.page_number) + "\n";
    out += passages[i].text;
    out += "\n";
  }
  return out;
}

ComposedPrompt compose_prompt(std::string_view prompt, const std::vector<ContextPassage>& passages,
                              const ModeProfile& profile, const std::vector<HistoryTurn>& history,
                              std::string_view refusal_text) {
  std::vector<ContextPassage> used(passages.begin(),
                                   passages.begin() + std::min<std::size_t>(passages.size(), profile.top_k));
  std::string system;
  system += std::string(kGroundingInstruction) + "\n";
  system += "If the context is empty or does not contain the answer, reply exactly: " +
            std::string(refusal_text) + "\n";
  system += "Mode: " + std::string(to_string(profile.mode)) + "\n";
  system += std::string(directive_for(profile.mode)) + "\n";
  system += profile.system_template + "\n";
  system += "Cite the sources you use by their markers, for example [S1].\n";
  system += "\nContext:\n";
  system += render_context_block(used);

  const std::size_t first = history.size() > kHistoryTurns ? history.size() - kHistoryTurns : 0;
  if (first < history.size()) {
    system += "\nConversation so far:\n";
    for (std::size_t i = first; i < history.size(); ++i) {
      system += "Student: " + history[i].prompt + "\n";
      system += "Tutor: " + history[i].answer + "\n";
    }
  }
  return {system, std::string(prompt)};
}

std::string truncate_fragment(std::string_view text, std::size_t max_codepoints) {
  text = trim(text);
  const auto offsets = codepoint_offsets(text);
  const std::size_t n = offsets.size() - 1;
  if (n <= max_codepoints) return std::string(text);
  const auto decoded = utf8_decode(text);
  std::size_t cut = max_codepoints;
  if (!is_unicode_space(decoded[cut])) {
    std::size_t back = cut;
    while (back > 0 && !is_unicode_space(decoded[back - 1])) --back;
    if (back > 0) cut = back;
  }
  return std::string(trim(text.substr(0, offsets[cut])));
}

std::vector<Citation> extract_citations(std::string_view answer, const std::vector<ContextPassage>& passages) {
  std::vector<Citation> out;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    const auto& p = passages[i];
    const std::string marker = "[S" + std::to_string(i + 1) + "]";
    std::optional<std::size_t> from;
    if (answer.find(marker) != std::string_view::npos) {
      from = 0;
    } else {
      const auto offsets = codepoint_offsets(p.text);
      const std::size_t n = offsets.size() - 1;
      for (std::size_t s = 0; s + kMinSharedSpan <= n; ++s) {
        const std::string_view span(p.text.data() + offsets[s], offsets[s + kMinSharedSpan] - offsets[s]);
        if (answer.find(span) != std::string_view::npos) {
          from = offsets[s];
          break;
        }
      }
    }
    if (!from) continue;
    Citation c;
    c.chunk_id = p.hit.chunk_id;
    c.document_id = p.hit.payload.document_id;
    c.document_title = p.title;
    c.page_number = p.hit.payload.page_number;
    c.fragment = truncate_fragment(std::string_view(p.text).substr(*from));
    c.score = p.hit.score;
    out.push_back(std::move(c));
  }
  return out;
}

nlohmann::json ChatTurn::to_json() const {
  nlohmann::json hits = nlohmann::json::array();
  for (const auto& h : retrieved) {
    hits.push_back({{"chunk_id", h.chunk_id},
                    {"score", h.score},
                    {"document_id", h.payload.document_id},
                    {"page_number", h.payload.page_number},
                    {"ordinal", h.payload.ordinal}});
  }
  nlohmann::json cites = nlohmann::json::array();
  for (const auto& c : citations) cites.push_back(c.to_json());
  nlohmann::json j = {{"turn_id", turn_id},
                      {"session_id", session_id},
                      {"course_id", course_id},
                      {"user_id", user_id},
                      {"prompt", prompt},
                      {"mode", to_string(mode)},
                      {"top_k", top_k},
                      {"temperature", temperature},
                      {"retrieved", hits},
                      {"answer", answer},
                      {"citations", cites},
                      {"status", status == TurnStatus::completed ? "completed" : "failed"},
                      {"refused", refused},
                      {"sequence", sequence},
                      {"created_at", created_at},
                      {"completed_at", completed_at},
                      {"provider_usage", {{"tokens_in", tokens_in}, {"tokens_out", tokens_out}}}};
  if (!error.empty()) j["error"] = error;
  return j;
}

ChatTurn ChatTurn::from_json(const nlohmann::json& j) {
  ChatTurn t;
  t.turn_id = j.at("turn_id").get<std::string>();
  t.session_id = j.at("session_id").get<std::string>();
  t.course_id = j.at("course_id").get<std::string>();
  t.user_id = j.at("user_id").get<std::string>();
  t.prompt = j.at("prompt").get<std::string>();
  t.mode = parse_mode(j.at("mode").get<std::string>());
  t.top_k = j.value("top_k", index::kDefaultTopK);
  t.temperature = j.value("temperature", 0.3);
  for (const auto& h : j.value("retrieved", nlohmann::json::array())) {
    t.retrieved.push_back({h.at("chunk_id").get<std::string>(),
                           h.at("score").get<double>(),
                           {h.at("document_id").get<std::string>(), h.at("page_number").get<int>(),
                            h.at("ordinal").get<int>()}});
  }
  t.answer = j.value("answer", std::string());
  for (const auto& c : j.value("citations", nlohmann::json::array())) {
    t.citations.push_back({c.at("chunk_id").get<std::string>(), c.at("document_id").get<std::string>(),
                           c.at("document_title").get<std::string>(), c.at("page_number").get<int>(),
                           c.at("fragment").get<std::string>(), c.at("score").get<double>()});
  }
  t.status = j.value("status", std::string("completed")) == "failed" ? TurnStatus::failed : TurnStatus::completed;
  t.refused = j.value("refused", false);
  t.error = j.value("error", std::string());
  t.sequence = j.value("sequence", 0);
  t.created_at = j.value("created_at", std::int64_t{0});
  t.completed_at = j.value("completed_at", std::int64_t{0});
  if (j.contains("provider_usage")) {
    t.tokens_in = j["provider_usage"].value("tokens_in", 0);
    t.tokens_out = j["provider_usage"].value("tokens_out", 0);
  }
  return t;
}

Tutor::Tutor(Catalog& catalog, index::VectorIndex& index, embeddings::EmbeddingProvider& embedder,
             generation::GenerationProvider& generator, progress::ProgressTracker* progress,
             TemplateSet templates, TutorOptions options)
    : catalog_(catalog),
      index_(index),
      embedder_(embedder),
      generator_(generator),
      progress_(progress),
      templates_(std::move(templates)),
      options_(std::move(options)) {
  templates_.validate();
}

ModeProfile Tutor::profile(Mode mode, Discipline discipline) const {
  std::shared_lock lock(templates_mu_);
  auto p = default_profile(mode, discipline, templates_);
  if (options_.top_k) p.top_k = *options_.top_k;
  if (options_.temperature) p.temperature = *options_.temperature;
  return p;
}

void Tutor::set_templates(TemplateSet templates) {
  templates.validate();
  std::unique_lock lock(templates_mu_);
  templates_ = std::move(templates);
}

std::mutex& Tutor::session_lock(const std::string& session_id) {
  std::lock_guard lock(sessions_mu_);
  auto& slot = session_locks_[session_id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

std::string Tutor::open_session(const std::string& course_id, const std::string& user_id) {
  catalog_.course(course_id);
  store::EntityRecord r;
  r.kind = store::EntityKind::session;
  r.entity_id = make_id("session");
  r.course_id = course_id;
  r.body = {{"user_id", user_id}};
  catalog_.store().persist_entity(r);
  return r.entity_id;
}

std::string Tutor::session_owner(const std::string& course_id, const std::string& session_id) const {
  auto r = catalog_.store().get(store::EntityKind::session, session_id);
  if (!r || r->course_id != course_id) throw Error(ErrorCode::NotFound, "unknown session", session_id);
  return r->body.at("user_id").get<std::string>();
}

std::vector<ChatTurn> Tutor::turns(const std::string& course_id, const std::string& session_id) const {
  session_owner(course_id, session_id);
  store::EntityFilter f;
  f.course_id = course_id;
  std::vector<ChatTurn> out;
  for (const auto& r : catalog_.store().fetch_entities(store::EntityKind::turn, f)) {
    if (r.body.at("session_id") != session_id) continue;
    out.push_back(ChatTurn::from_json(r.body));
  }
  std::sort(out.begin(), out.end(), [](const ChatTurn& a, const ChatTurn& b) { return a.sequence < b.sequence; });
  return out;
}

std::vector<ContextPassage> Tutor::retrieve(const std::string& course_id, std::string_view query, int top_k) const {
  std::vector<ContextPassage> out;
  if (!index_.has_collection(course_id) || index_.size(course_id) == 0) return out;
  const auto q = embeddings::embed_text(query, embedder_);
  std::map<std::string, std::string> titles;
  for (const auto& hit : index_.query_top_k(course_id, q, top_k)) {
    auto chunk = catalog_.chunk(course_id, hit.chunk_id);
    if (!chunk) continue;
    auto& title = titles[hit.payload.document_id];
    if (title.empty()) {
      auto doc = catalog_.document(course_id, hit.payload.document_id);
      title = doc ? doc->title : hit.payload.document_id;
    }
    out.push_back({hit, chunk->text, title});
  }
  return out;
}

void Tutor::persist_turn(const ChatTurn& turn) {
  store::EntityRecord r;
  r.kind = store::EntityKind::turn;
  r.entity_id = turn.turn_id;
  r.course_id = turn.course_id;
  r.created_at = turn.created_at;
  r.body = turn.to_json();
  catalog_.store().persist_entity(std::move(r));
}

ChatTurn Tutor::answer_question(const std::string& course_id, const std::string& session_id,
                                const std::string& user_id, std::string_view prompt, Mode mode) {
  if (is_blank(prompt)) throw Error(ErrorCode::EmptyPrompt, "prompt is empty");
  const auto course = catalog_.course(course_id);
  std::lock_guard session_guard(session_lock(session_id));
  if (session_owner(course_id, session_id) != user_id)
    throw Error(ErrorCode::Forbidden, "session belongs to another user", session_id);

  const auto previous = turns(course_id, session_id);
  const auto profile = this->profile(mode, course.discipline);

  ChatTurn turn;
  turn.sequence = static_cast<int>(previous.size());
  char suffix[16];
  std::snprintf(suffix, sizeof suffix, "-t%05d", turn.sequence);
  turn.turn_id = session_id + suffix;
  turn.session_id = session_id;
  turn.course_id = course_id;
  turn.user_id = user_id;
  turn.prompt = std::string(prompt);
  turn.mode = mode;
  turn.top_k = profile.top_k;
  turn.temperature = profile.temperature;
  turn.created_at = now_millis();

  const auto passages = retrieve(course_id, prompt, profile.top_k);
  for (const auto& p : passages) turn.retrieved.push_back(p.hit);

  if (passages.empty()) {
    turn.answer = options_.refusal_text;
    turn.refused = true;
  } else {
    std::vector<HistoryTurn> history;
    for (const auto& t : previous) {
      if (t.status == TurnStatus::completed) history.push_back({t.prompt, t.answer});
    }
    if (history.size() > static_cast<std::size_t>(options_.history_turns))
      history.erase(history.begin(), history.end() - options_.history_turns);
    const auto composed = compose_prompt(prompt, passages, profile, history, options_.refusal_text);
    try {
      const auto result = generator_.generate(
          {composed.system, composed.user, profile.temperature, options_.max_output_tokens});
      if (is_blank(result.text)) throw Error(ErrorCode::ProviderUnavailable, "generation returned an empty answer");
      turn.answer = result.text;
      turn.tokens_in = result.tokens_in;
      turn.tokens_out = result.tokens_out;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ProviderUnavailable) throw;
      turn.status = TurnStatus::failed;
      turn.error = std::string(ragtutor::to_string(e.code())) + ": " + e.what();
      turn.completed_at = now_millis();
      persist_turn(turn);
      throw;
    }
    turn.citations = extract_citations(turn.answer, passages);
  }
  turn.completed_at = now_millis();
  persist_turn(turn);

  if (progress_ && !turn.citations.empty()) {
    progress::InteractionEvent event;
    event.user_id = user_id;
    event.course_id = course_id;
    event.kind = progress::InteractionKind::chat_citation;
    event.timestamp = turn.created_at;
    for (const auto& c : turn.citations) event.chunk_ids.push_back(c.chunk_id);
    progress_->record_interaction(event);
  }
  return turn;
}

}  // namespace ragtutor::tutor
