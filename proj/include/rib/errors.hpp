#pragma once

#include <stdexcept>
#include <string>

namespace rib {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  NotIdentityCovariance,
  DegenerateObjective,
  BetaTooLarge,
  RankDeficient,
  NonFinite,
  SingularCovariance,
  ZeroFisher,
  ZeroProbe,
  Config,
  Io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotIdentityCovariance: return "NotIdentityCovariance";
    case ErrorCode::DegenerateObjective: return "DegenerateObjective";
    case ErrorCode::BetaTooLarge: return "BetaTooLarge";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::ZeroFisher: return "ZeroFisher";
    case ErrorCode::ZeroProbe: return "ZeroProbe";
    case ErrorCode::Config: return "Config";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Numeric failures map to CLI exit code 2, everything else to 1.
inline bool is_numeric(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::Config:
    case ErrorCode::Io:
      return false;
    default:
      return true;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace rib
