#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ragtutor {

enum class ErrorCode {
  InvalidArgument,
  UnsupportedFormat,
  MalformedPayload,
  EmptyDocument,
  EmptyText,
  EmptyPrompt,
  DimensionMismatch,
  ProviderUnavailable,
  CourseMismatch,
  UnknownCourse,
  InsufficientExemplars,
  IllegalTransition,
  ForbiddenRole,
  ValidationFailed,
  QuizNotPublished,
  UnknownQuiz,
  NotApproved,
  GenerationParseError,
  VersionConflict,
  SchemaViolation,
  TooLarge,
  IntegrityError,
  NotFound,
  Unauthenticated,
  Forbidden,
  UnknownJob,
  QueueFull,
  JudgeUnavailable,
  CorruptSnapshot,
  Internal,
};

std::string_view to_string(ErrorCode code);

/// HTTP status used by the gateway when an error escapes a handler.
int http_status(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace ragtutor
