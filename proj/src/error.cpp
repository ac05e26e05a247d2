#include "ragtutor/error.hpp"

namespace ragtutor {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::MalformedPayload: return "MalformedPayload";
    case ErrorCode::EmptyDocument: return "EmptyDocument";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::EmptyPrompt: return "EmptyPrompt";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::CourseMismatch: return "CourseMismatch";
    case ErrorCode::UnknownCourse: return "UnknownCourse";
    case ErrorCode::InsufficientExemplars: return "InsufficientExemplars";
    case ErrorCode::IllegalTransition: return "IllegalTransition";
    case ErrorCode::ForbiddenRole: return "ForbiddenRole";
    case ErrorCode::ValidationFailed: return "ValidationFailed";
    case ErrorCode::QuizNotPublished: return "QuizNotPublished";
    case ErrorCode::UnknownQuiz: return "UnknownQuiz";
    case ErrorCode::NotApproved: return "NotApproved";
    case ErrorCode::GenerationParseError: return "GenerationParseError";
    case ErrorCode::VersionConflict: return "VersionConflict";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::IntegrityError: return "IntegrityError";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Unauthenticated: return "Unauthenticated";
    case ErrorCode::Forbidden: return "Forbidden";
    case ErrorCode::UnknownJob: return "UnknownJob";
    case ErrorCode::QueueFull: return "QueueFull";
    case ErrorCode::JudgeUnavailable: return "JudgeUnavailable";
    case ErrorCode::CorruptSnapshot: return "CorruptSnapshot";
    case ErrorCode::Internal: return "Internal";
  }
  return "Internal";
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::Unauthenticated: return 401;
    case ErrorCode::Forbidden:
    case ErrorCode::ForbiddenRole: return 403;
    case ErrorCode::UnknownCourse:
    case ErrorCode::UnknownQuiz:
    case ErrorCode::UnknownJob:
    case ErrorCode::NotFound: return 404;
    case ErrorCode::VersionConflict:
    case ErrorCode::IllegalTransition: return 409;
    case ErrorCode::TooLarge: return 413;
    case ErrorCode::UnsupportedFormat: return 415;
    case ErrorCode::QueueFull: return 429;
    case ErrorCode::ProviderUnavailable:
    case ErrorCode::JudgeUnavailable: return 503;
    case ErrorCode::Internal:
    case ErrorCode::IntegrityError:
    case ErrorCode::CorruptSnapshot: return 500;
    default: return 400;
  }
}

}  // namespace ragtutor
