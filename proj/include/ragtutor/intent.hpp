#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ragtutor/embeddings.hpp"

namespace ragtutor::intent {

enum class IntentLabel { explanation, test_generation, material_generation };

inline constexpr std::array<IntentLabel, 3> kAllLabels = {
    IntentLabel::explanation, IntentLabel::test_generation, IntentLabel::material_generation};
inline constexpr int kMinExemplars = 5;
inline constexpr double kDefaultMarginThreshold = 0.05;

std::string_view to_string(IntentLabel label);
/// Throws InvalidArgument.
IntentLabel parse_label(std::string_view name);

using ExemplarSet = std::map<IntentLabel, std::vector<std::string>>;

struct IntentModel {
  std::map<IntentLabel, embeddings::EmbeddingVector> centroids;
  ExemplarSet exemplars;
  double margin_threshold = kDefaultMarginThreshold;
  std::string provider_id;
};

struct IntentResult {
  IntentLabel label = IntentLabel::explanation;
  double score = 0.0;
  IntentLabel runner_up = IntentLabel::explanation;
  double margin = 0.0;
  bool low_confidence = false;
};

/// Throws InsufficientExemplars when a label is missing or has fewer than 5 exemplars.
IntentModel fit_centroids(const ExemplarSet& exemplars, embeddings::EmbeddingProvider& provider,
                          double margin_threshold = kDefaultMarginThreshold);

/// Throws EmptyPrompt.
IntentResult classify_intent(std::string_view prompt, const IntentModel& model,
                             embeddings::EmbeddingProvider& provider);

/// Picks the best label from per-label scores. Ties go to the earlier label in kAllLabels.
IntentResult decide(const std::map<IntentLabel, double>& scores, double margin_threshold);

/// JSON object label -> [strings]. Throws NotFound or MalformedPayload.
ExemplarSet load_exemplars(const std::filesystem::path& path);

}  // namespace ragtutor::intent
