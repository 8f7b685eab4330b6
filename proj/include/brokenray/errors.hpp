#pragma once

#include <stdexcept>
#include <string>

namespace brokenray {

enum class ErrorKind {
  InvalidSubspace,
  DimensionMismatch,
  UnknownCluster,
  NotUnitVector,
  DegenerateBasePoint,
  ParameterOutOfRange,
  EnergyMismatch,
  ZeroSpeed,
  SideUnavailable,
  ChannelClosed,
  DegenerateSegment,
  NotDiscrete,
  TransversalityFailure,
  RankDeficient,
  ConservationViolation,
  Infeasible,
  InvalidInput,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidSubspace: return "InvalidSubspace";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::UnknownCluster: return "UnknownCluster";
    case ErrorKind::NotUnitVector: return "NotUnitVector";
    case ErrorKind::DegenerateBasePoint: return "DegenerateBasePoint";
    case ErrorKind::ParameterOutOfRange: return "ParameterOutOfRange";
    case ErrorKind::EnergyMismatch: return "EnergyMismatch";
    case ErrorKind::ZeroSpeed: return "ZeroSpeed";
    case ErrorKind::SideUnavailable: return "SideUnavailable";
    case ErrorKind::ChannelClosed: return "ChannelClosed";
    case ErrorKind::DegenerateSegment: return "DegenerateSegment";
    case ErrorKind::NotDiscrete: return "NotDiscrete";
    case ErrorKind::TransversalityFailure: return "TransversalityFailure";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::ConservationViolation: return "ConservationViolation";
    case ErrorKind::Infeasible: return "Infeasible";
    case ErrorKind::InvalidInput: return "InvalidInput";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace brokenray
