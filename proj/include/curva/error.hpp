#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace curva {

enum class ErrorCode {
  InvalidArgument,
  InvalidDomain,
  SingularOperator,
  IterationDiverged,
  NonPositiveConformalFactor,
  NonPositiveInput,
  BracketViolation,
  MonotonicityBroken,
  MaxIterExceeded,
  BracketEscape,
  NotApplicable,
  NoConstantWorks,
  BoundsCheckFailed,
  ConditionFailed,
  NoShiftWorks,
  BudgetInfeasible,
  MinimizerDegenerate,
  CannotOrder,
  SearchFailed,
  ClassificationError,
  CertificationFailed,
  AllFailed,
  ParseError,
  UnknownKey,
  ExpressionError,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidDomain: return "InvalidDomain";
    case ErrorCode::SingularOperator: return "SingularOperator";
    case ErrorCode::IterationDiverged: return "IterationDiverged";
    case ErrorCode::NonPositiveConformalFactor: return "NonPositiveConformalFactor";
    case ErrorCode::NonPositiveInput: return "NonPositiveInput";
    case ErrorCode::BracketViolation: return "BracketViolation";
    case ErrorCode::MonotonicityBroken: return "MonotonicityBroken";
    case ErrorCode::MaxIterExceeded: return "MaxIterExceeded";
    case ErrorCode::BracketEscape: return "BracketEscape";
    case ErrorCode::NotApplicable: return "NotApplicable";
    case ErrorCode::NoConstantWorks: return "NoConstantWorks";
    case ErrorCode::BoundsCheckFailed: return "BoundsCheckFailed";
    case ErrorCode::ConditionFailed: return "ConditionFailed";
    case ErrorCode::NoShiftWorks: return "NoShiftWorks";
    case ErrorCode::BudgetInfeasible: return "BudgetInfeasible";
    case ErrorCode::MinimizerDegenerate: return "MinimizerDegenerate";
    case ErrorCode::CannotOrder: return "CannotOrder";
    case ErrorCode::SearchFailed: return "SearchFailed";
    case ErrorCode::ClassificationError: return "ClassificationError";
    case ErrorCode::CertificationFailed: return "CertificationFailed";
    case ErrorCode::AllFailed: return "AllFailed";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::ExpressionError: return "ExpressionError";
  }
  return "Unknown";
}

// Typed failure carrying the pipeline stage that produced it.
class Failure : public std::runtime_error {
 public:
  Failure(ErrorCode code, std::string stage, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + " [" + stage + "]: " + detail),
        code_(code),
        stage_(std::move(stage)),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& stage() const noexcept { return stage_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string stage_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& stage, const std::string& detail) {
  throw Failure(code, stage, detail);
}

}  // namespace curva
