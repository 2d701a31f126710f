#pragma once

#include "pmesii/domain.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pmesii {

struct ObservationReport {
  std::string source_id;
  int week_reported = 0;
  int week_measured = 0;
  Vector readings;                          // meaningful where present
  Eigen::Array<bool, Eigen::Dynamic, 1> present;
  double reliability = 1.0;
};

struct EstimatedState {
  int week = 0;
  Vector values;
  Vector confidence; // 0 exactly where no report covered the variable
  Eigen::Array<bool, Eigen::Dynamic, 1> carried; // value carried forward, not observed
  int report_count = 0;

  State state() const { return State{week, values}; }
};

/// Report issued at `week_reported` about the truth `delay` weeks earlier:
/// clamp01(truth + bias + noise), each variable independently missing.
/// `truth` must cover week max(0, week_reported - delay). Throws UnknownSourceError.
ObservationReport observe(const Trajectory &truth, const ChannelSpec &channel,
                          std::string_view source_id, int week_reported, std::uint64_t seed);

/// Single-state form: the report describes exactly `truth`, issued `delay`
/// weeks after truth.week.
ObservationReport observe(const State &truth, const ChannelSpec &channel, std::string_view source_id,
                          std::uint64_t seed);

/// Reliability-weighted mean per variable, dropping the single lowest and
/// highest reading when four or more are present. A variable no report covers
/// keeps `previous`'s value (or 0.5 without one) with confidence 0.
/// Throws EmptyInputError.
EstimatedState fuse(std::span<const ObservationReport> reports, Index variable_count,
                    const EstimatedState *previous = nullptr);

/// Reports from every source in the channel for one week.
std::vector<ObservationReport> observe_all(const Trajectory &truth, const ChannelSpec &channel,
                                           int week_reported, std::uint64_t seed);

} // namespace pmesii
