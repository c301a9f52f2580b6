#pragma once

#include <stdexcept>
#include <string>

namespace sentinel {

enum class ErrorCode {
  Ok = 0,
  InvalidInput,
  NumericalFailure,
  DegenerateDistribution,
  InsufficientClients,
  AlreadyRegistered,
  Unregistered,
  NoOpenRound,
  DuplicateSubmission,
  UnknownRound,
  IntegrityError,
  PurgedError,
  IoError,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::Ok: return "Ok";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::DegenerateDistribution: return "DegenerateDistribution";
    case ErrorCode::InsufficientClients: return "InsufficientClients";
    case ErrorCode::AlreadyRegistered: return "AlreadyRegistered";
    case ErrorCode::Unregistered: return "Unregistered";
    case ErrorCode::NoOpenRound: return "NoOpenRound";
    case ErrorCode::DuplicateSubmission: return "DuplicateSubmission";
    case ErrorCode::UnknownRound: return "UnknownRound";
    case ErrorCode::IntegrityError: return "IntegrityError";
    case ErrorCode::PurgedError: return "PurgedError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace sentinel
