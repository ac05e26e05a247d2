#include "ragtutor/intent.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "ragtutor/error.hpp"
#include "ragtutor/text.hpp"

namespace ragtutor::intent {

std::string_view to_string(IntentLabel label) {
  switch (label) {
    case IntentLabel::explanation: return "explanation";
    case IntentLabel::test_generation: return "test_generation";
    case IntentLabel::material_generation: return "material_generation";
  }
  return "explanation";
}

IntentLabel parse_label(std::string_view name) {
  for (auto l : kAllLabels) {
    if (to_string(l) == name) return l;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown intent label", std::string(name));
}

IntentModel fit_centroids(const ExemplarSet& exemplars, embeddings::EmbeddingProvider& provider,
                          double margin_threshold) {
  if (margin_threshold < 0) throw Error(ErrorCode::InvalidArgument, "margin threshold must be >= 0");
  IntentModel model;
  model.exemplars = exemplars;
  model.margin_threshold = margin_threshold;
  model.provider_id = provider.id();
  for (auto label : kAllLabels) {
    auto it = exemplars.find(label);
    const std::size_t n = it == exemplars.end() ? 0 : it->second.size();
    if (n < kMinExemplars)
      throw Error(ErrorCode::InsufficientExemplars, "each label needs at least 5 exemplars",
                  std::string(to_string(label)) + " has " + std::to_string(n));
    const auto vectors = embeddings::embed_texts(it->second, provider);
    std::vector<double> mean(static_cast<std::size_t>(provider.dimension()), 0.0);
    for (const auto& v : vectors) {
      for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += v.values[d];
    }
    embeddings::normalize(mean);
    model.centroids[label] = {std::move(mean), provider.id()};
  }
  return model;
}

IntentResult decide(const std::map<IntentLabel, double>& scores, double margin_threshold) {
  IntentResult r;
  bool have_best = false, have_second = false;
  double second = 0.0;
  for (auto label : kAllLabels) {
    auto it = scores.find(label);
    if (it == scores.end()) continue;
    const double s = it->second;
    if (!have_best || s > r.score) {
      if (have_best) {
        second = r.score;
        r.runner_up = r.label;
        have_second = true;
      }
      r.label = label;
      r.score = s;
      have_best = true;
    } else if (!have_second || s > second) {
      second = s;
      r.runner_up = label;
      have_second = true;
    }
  }
  r.margin = have_second ? r.score - second : r.score;
  r.low_confidence = r.margin < margin_threshold;
  return r;
}

IntentResult classify_intent(std::string_view prompt, const IntentModel& model,
                             embeddings::EmbeddingProvider& provider) {
  if (is_blank(prompt)) throw Error(ErrorCode::EmptyPrompt, "prompt is empty");
  const auto q = embeddings::embed_text(prompt, provider);
  std::map<IntentLabel, double> scores;
  for (const auto& [label, centroid] : model.centroids) scores[label] = embeddings::cosine_similarity(q, centroid);
  return decide(scores, model.margin_threshold);
}

ExemplarSet load_exemplars(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "exemplar file not found", path.string());
  ExemplarSet out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& [key, list] : j.items()) out[parse_label(key)] = list.get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedPayload, "exemplar file is not a label -> [text] map", e.what());
  }
  return out;
}

}  // namespace ragtutor::intent
