#include "ragtutor/progress.hpp"

#include <algorithm>
#include <mutex>

#include "ragtutor/error.hpp"
#include "ragtutor/text.hpp"

namespace ragtutor::progress {

std::string_view to_string(InteractionKind kind) {
  switch (kind) {
    case InteractionKind::chat_citation: return "chat_citation";
    case InteractionKind::quiz_explanation_view: return "quiz_explanation_view";
    case InteractionKind::quiz_attempt: return "quiz_attempt";
  }
  return "chat_citation";
}

std::string_view to_string(Status status) {
  switch (status) {
    case Status::not_started: return "not_started";
    case Status::in_progress: return "in_progress";
    case Status::completed: return "completed";
  }
  return "not_started";
}

InteractionKind parse_interaction_kind(std::string_view name) {
  for (auto k : {InteractionKind::chat_citation, InteractionKind::quiz_explanation_view,
                 InteractionKind::quiz_attempt}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown interaction kind", std::string(name));
}

nlohmann::json InteractionEvent::to_json() const {
  return {{"user_id", user_id},     {"course_id", course_id}, {"kind", to_string(kind)},
          {"chunk_ids", chunk_ids}, {"timestamp", timestamp}};
}

nlohmann::json CoverageReport::to_json() const {
  nlohmann::json materials_json = nlohmann::json::array();
  for (const auto& m : materials) {
    materials_json.push_back({{"document_id", m.document_id},
                              {"title", m.title},
                              {"status", to_string(m.status)},
                              {"coverage", m.coverage},
                              {"interaction_count", m.interaction_count},
                              {"touched_chunks", m.touched_chunks},
                              {"total_chunks", m.total_chunks}});
  }
  return {{"user_id", user_id},
          {"course_id", course_id},
          {"materials", materials_json},
          {"aggregate", {{"touched_chunks", touched_chunks}, {"total_chunks", total_chunks}, {"coverage", aggregate}}}};
}

Status derive_status(double coverage, int interaction_count, const ProgressOptions& options) {
  if (interaction_count == 0) return Status::not_started;
  if (coverage >= options.completion_threshold && interaction_count >= options.min_interactions)
    return Status::completed;
  return Status::in_progress;
}

ProgressTracker::ProgressTracker(store::Store& store, Catalog& catalog, ProgressOptions options)
    : store_(store), catalog_(catalog), options_(options) {
  for (const auto& r : store_.fetch_entities(store::EntityKind::event)) {
    InteractionEvent e;
    e.user_id = r.body.at("user_id").get<std::string>();
    e.course_id = r.course_id;
    e.kind = parse_interaction_kind(r.body.at("kind").get<std::string>());
    e.chunk_ids = r.body.at("chunk_ids").get<std::vector<std::string>>();
    e.timestamp = r.body.at("timestamp").get<std::int64_t>();
    std::map<std::string, std::string> doc_of;
    const auto docs = r.body.value("document_ids", std::vector<std::string>());
    for (std::size_t i = 0; i < docs.size() && i < e.chunk_ids.size(); ++i) doc_of[e.chunk_ids[i]] = docs[i];
    apply_locked(e, doc_of);
  }
}

void ProgressTracker::apply_locked(const InteractionEvent& event,
                                   const std::map<std::string, std::string>& doc_of) {
  auto& st = state_[{event.course_id, event.user_id}];
  const int kind = static_cast<int>(event.kind);
  for (const auto& chunk_id : event.chunk_ids) {
    if (!st.keys.insert({chunk_id, kind, event.timestamp}).second) continue;
    auto it = doc_of.find(chunk_id);
    if (it == doc_of.end()) continue;
    st.touched[it->second].insert(chunk_id);
    st.interactions[it->second].insert({kind, event.timestamp});
  }
}

bool ProgressTracker::record_interaction(const InteractionEvent& event) {
  if (event.user_id.empty() || event.course_id.empty())
    throw Error(ErrorCode::InvalidArgument, "interaction needs a user and a course");
  if (event.chunk_ids.empty() && event.kind != InteractionKind::quiz_attempt)
    throw Error(ErrorCode::InvalidArgument, "citation and explanation events need chunk ids");

  std::map<std::string, std::string> doc_of;
  std::vector<std::string> documents;
  for (const auto& id : event.chunk_ids) {
    auto chunk = catalog_.chunk(event.course_id, id);
    if (!chunk) throw Error(ErrorCode::CourseMismatch, "chunk does not belong to the course", id);
    doc_of[id] = chunk->document_id;
    documents.push_back(chunk->document_id);
  }

  auto sorted = event.chunk_ids;
  std::sort(sorted.begin(), sorted.end());
  std::string key = event.user_id + '\n' + event.course_id + '\n' + std::string(to_string(event.kind)) +
                    '\n' + std::to_string(event.timestamp);
  for (const auto& id : sorted) key += '\n' + id;

  std::unique_lock lock(mu_);
  const int kind = static_cast<int>(event.kind);
  auto& st = state_[{event.course_id, event.user_id}];
  bool fresh = event.chunk_ids.empty();
  for (const auto& id : event.chunk_ids) fresh = fresh || !st.keys.count({id, kind, event.timestamp});
  const auto event_id = "evt-" + sha256_hex(key).substr(0, 24);
  if (!fresh || store_.get(store::EntityKind::event, event_id)) return false;

  store::EntityRecord r;
  r.kind = store::EntityKind::event;
  r.entity_id = event_id;
  r.course_id = event.course_id;
  r.created_at = event.timestamp > 0 ? event.timestamp : now_millis();
  r.body = {{"user_id", event.user_id},     {"kind", to_string(event.kind)},
            {"chunk_ids", event.chunk_ids}, {"document_ids", documents},
            {"timestamp", event.timestamp}};
  store_.persist_entity(std::move(r));
  apply_locked(event, doc_of);
  return true;
}

CoverageReport ProgressTracker::course_coverage(const std::string& user_id,
                                                const std::string& course_id) const {
  catalog_.course(course_id);
  const auto docs = catalog_.documents(course_id);
  CoverageReport report;
  report.user_id = user_id;
  report.course_id = course_id;

  std::shared_lock lock(mu_);
  auto it = state_.find({course_id, user_id});
  const UserState* st = it == state_.end() ? nullptr : &it->second;
  for (const auto& d : docs) {
    MaterialStatus m;
    m.document_id = d.document_id;
    m.title = d.title;
    m.total_chunks = d.chunk_count;
    if (st) {
      if (auto t = st->touched.find(d.document_id); t != st->touched.end())
        m.touched_chunks = static_cast<int>(t->second.size());
      if (auto n = st->interactions.find(d.document_id); n != st->interactions.end())
        m.interaction_count = static_cast<int>(n->second.size());
    }
    m.coverage = m.total_chunks > 0 ? static_cast<double>(m.touched_chunks) / m.total_chunks : 0.0;
    m.status = derive_status(m.coverage, m.interaction_count, options_);
    report.touched_chunks += m.touched_chunks;
    report.total_chunks += m.total_chunks;
    report.materials.push_back(std::move(m));
  }
  report.aggregate =
      report.total_chunks > 0 ? static_cast<double>(report.touched_chunks) / report.total_chunks : 0.0;
  return report;
}

std::vector<CoverageReport> ProgressTracker::course_overview(const std::string& course_id) const {
  catalog_.course(course_id);
  std::vector<std::string> users;
  {
    std::shared_lock lock(mu_);
    for (const auto& [key, _] : state_) {
      if (key.first == course_id) users.push_back(key.second);
    }
  }
  std::vector<CoverageReport> out;
  for (const auto& u : users) out.push_back(course_coverage(u, course_id));
  return out;
}

LogPage ProgressTracker::export_logs(const std::string& course_id, int page, int page_size,
                                     const std::optional<std::string>& user_id) const {
  catalog_.course(course_id);
  if (page < 0 || page_size < 1) throw Error(ErrorCode::InvalidArgument, "bad log page request");
  store::EntityFilter f;
  f.course_id = course_id;
  struct Row {
    std::int64_t at;
    std::string id;
    nlohmann::json line;
  };
  std::vector<Row> rows;
  for (const auto& r : store_.fetch_entities(store::EntityKind::event, f)) {
    if (user_id && r.body.at("user_id") != *user_id) continue;
    rows.push_back({r.created_at, r.entity_id,
                    {{"type", "interaction"}, {"id", r.entity_id}, {"at", r.created_at}, {"user_id", r.body["user_id"]},
                     {"kind", r.body["kind"]}, {"chunk_ids", r.body["chunk_ids"]}}});
  }
  for (const auto& r : store_.fetch_entities(store::EntityKind::turn, f)) {
    if (user_id && r.body.at("user_id") != *user_id) continue;
    rows.push_back({r.created_at, r.entity_id,
                    {{"type", "chat_turn"},
                     {"id", r.entity_id},
                     {"at", r.created_at},
                     {"user_id", r.body["user_id"]},
                     {"session_id", r.body["session_id"]},
                     {"mode", r.body["mode"]},
                     {"status", r.body["status"]},
                     {"prompt", r.body["prompt"]},
                     {"answer", r.body.value("answer", std::string())}}});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.at != b.at) return a.at < b.at;
    return a.id < b.id;
  });
  LogPage out;
  out.page = page;
  out.page_size = page_size;
  const std::size_t begin = static_cast<std::size_t>(page) * static_cast<std::size_t>(page_size);
  for (std::size_t i = begin; i < rows.size() && i < begin + static_cast<std::size_t>(page_size); ++i)
    out.ndjson += rows[i].line.dump() + "\n";
  out.has_more = rows.size() > begin + static_cast<std::size_t>(page_size);
  return out;
}

}  // namespace ragtutor::progress
