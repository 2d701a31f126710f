#include "pmesii/observation.hpp"

#include "pmesii/rng.hpp"

#include <algorithm>
#include <random>

namespace pmesii {

namespace {

ObservationReport make_report(const Vector &truth, const SourceSpec &source, int week_reported,
                              int week_measured, std::uint64_t seed) {
  const Index n = truth.size();
  ObservationReport report;
  report.source_id = source.id;
  report.week_reported = week_reported;
  report.week_measured = week_measured;
  report.reliability = source.reliability;
  report.readings = Vector::Zero(n);
  report.present = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n, true);
  Rng rng = make_rng({seed, fnv1a(source.id),
                      static_cast<std::uint64_t>(week_reported)});
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    const double z = noise(rng);
    const double u = coin(rng);
    if (u < source.missing_prob) {
      report.present[i] = false;
      continue;
    }
    report.readings[i] = std::clamp(truth[i] + source.bias + source.noise_std * z, 0.0, 1.0);
  }
  return report;
}

const SourceSpec &require_source(const ChannelSpec &channel, std::string_view source_id) {
  const SourceSpec *source = channel.find(source_id);
  if (!source)
    throw UnknownSourceError("unknown observation source '" + std::string(source_id) + "'");
  return *source;
}

} // namespace

ObservationReport observe(const Trajectory &truth, const ChannelSpec &channel,
                          std::string_view source_id, int week_reported, std::uint64_t seed) {
  const auto &source = require_source(channel, source_id);
  const int measured = std::max(truth.first_week, week_reported - source.delay_weeks);
  if (!truth.covers(measured))
    throw RangeError("truth does not cover week " + std::to_string(measured));
  return make_report(truth.at(measured), source, week_reported, measured, seed);
}

ObservationReport observe(const State &truth, const ChannelSpec &channel, std::string_view source_id,
                          std::uint64_t seed) {
  const auto &source = require_source(channel, source_id);
  return make_report(truth.values, source, truth.week + source.delay_weeks, truth.week, seed);
}

std::vector<ObservationReport> observe_all(const Trajectory &truth, const ChannelSpec &channel,
                                           int week_reported, std::uint64_t seed) {
  std::vector<ObservationReport> out;
  out.reserve(channel.sources.size());
  for (const auto &source : channel.sources)
    out.push_back(observe(truth, channel, source.id, week_reported, seed));
  return out;
}

EstimatedState fuse(std::span<const ObservationReport> reports, Index variable_count,
                    const EstimatedState *previous) {
  if (reports.empty())
    throw EmptyInputError("fuse: no reports");
  EstimatedState est;
  est.week = 0;
  for (const auto &r : reports) {
    if (r.readings.size() != variable_count || r.present.size() != variable_count)
      throw DimensionError("fuse: report '" + r.source_id + "' has the wrong variable count");
    est.week = std::max(est.week, r.week_measured);
  }
  est.report_count = static_cast<int>(reports.size());
  est.values = Vector::Zero(variable_count);
  est.confidence = Vector::Zero(variable_count);
  est.carried = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(variable_count, false);

  struct Reading {
    double value;
    double weight;
    auto operator<=>(const Reading &) const = default;
  };
  std::vector<Reading> readings;
  for (Index i = 0; i < variable_count; ++i) {
    readings.clear();
    for (const auto &r : reports)
      if (r.present[i])
        readings.push_back({r.readings[i], r.reliability});
    if (readings.empty()) {
      est.values[i] = (previous && previous->values.size() == variable_count) ? previous->values[i] : 0.5;
      est.carried[i] = true;
      continue;
    }
    // total order on (value, weight) keeps the result independent of report order
    std::sort(readings.begin(), readings.end());
    std::span<const Reading> kept(readings);
    if (kept.size() >= 4)
      kept = kept.subspan(1, kept.size() - 2);
    // offsets from the smallest kept reading: unanimous readings fuse exactly
    const double base = kept.front().value;
    double wsum = 0.0, offset = 0.0;
    for (const auto &r : kept) {
      wsum += r.weight;
      offset += r.weight * (r.value - base);
    }
    const double mean = base + offset / wsum;
    double var = 0.0;
    for (const auto &r : kept)
      var += r.weight * (r.value - mean) * (r.value - mean);
    var /= wsum;
    // values in [0,1] have standard deviation at most 0.5
    const double agreement = std::max(0.0, 1.0 - std::sqrt(var) / 0.5);
    const double k = static_cast<double>(readings.size());
    est.values[i] = mean;
    est.confidence[i] = (k / (k + 1.0)) * (0.5 + 0.5 * agreement);
  }
  return est;
}

} // namespace pmesii
