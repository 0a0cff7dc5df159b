#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fdf/error.hpp"

namespace fdf {

/// Distance scores; a claim is accepted when its score is <= the threshold.
struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

struct RocPoint {
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

/// Scores of one probe against every enrolled identity.
struct ProbeRanking {
  std::string true_identity;
  std::vector<std::pair<std::string, double>> candidates;
};

struct MetricsReport {
  double eer = 0.0;
  double eer_threshold = 0.0;
  double crr = 0.0; // percent
  double di = 0.0;
  std::size_t genuine_count = 0;
  std::size_t impostor_count = 0;
  std::vector<RocPoint> roc;
};

template <typename Sample>
using SubjectSamples = std::map<std::string, std::vector<Sample>>;

template <typename Sample>
struct ProtocolPipeline {
  std::function<void(const std::string& subject, std::span<const Sample> gallery)> enroll;
  std::function<double(const Sample& probe, const std::string& template_subject)> score;
};

struct ProtocolResult {
  ScoreSet scores;
  std::vector<ProbeRanking> rankings; // empty unless requested
};

/**
 * Enrolls every gallery subject, then scores each probe against every
 * enrolled template. Genuine pairs share the identity; all others are
 * impostor pairs. For S subjects with P probes each this yields S*P genuine
 * and S*(S-1)*P impostor scores.
 */
template <typename Sample>
ProtocolResult run_protocol(const SubjectSamples<Sample>& gallery, const SubjectSamples<Sample>& probes,
                            const ProtocolPipeline<Sample>& pipeline, bool keep_rankings = true) {
  if (gallery.size() < 2) throw ProtocolError("protocol: need at least two gallery subjects");
  for (const auto& [subject, samples] : probes)
    if (!gallery.contains(subject))
      throw ProtocolError("protocol: probe subject '" + subject + "' has no gallery samples");
  for (const auto& [subject, samples] : gallery) {
    if (samples.empty()) throw ProtocolError("protocol: gallery subject '" + subject + "' is empty");
    pipeline.enroll(subject, std::span<const Sample>(samples));
  }

  ProtocolResult result;
  for (const auto& [truth, samples] : probes)
    for (const Sample& probe : samples) {
      ProbeRanking ranking;
      if (keep_rankings) {
        ranking.true_identity = truth;
        ranking.candidates.reserve(gallery.size());
      }
      for (const auto& [subject, unused] : gallery) {
        const double s = pipeline.score(probe, subject);
        (subject == truth ? result.scores.genuine : result.scores.impostor).push_back(s);
        if (keep_rankings) ranking.candidates.emplace_back(subject, s);
      }
      if (keep_rankings) result.rankings.push_back(std::move(ranking));
    }
  return result;
}

/// far: impostor fraction with score <= t; frr: genuine fraction with score > t.
std::pair<double, double> far_frr(const ScoreSet& scores, double threshold);

/// Equal error rate on the convex hull of the empirical ROC, interpolated
/// linearly between the hull vertices that bracket far == frr.
EerResult eer(const ScoreSet& scores);

/// Rank-1 identification rate in percent; ties count as failures.
double crr_rank1(std::span<const ProbeRanking> rankings);

/// |mu_g - mu_i| / sqrt((var_g + var_i) / 2) with sample variances.
double decidability_index(const ScoreSet& scores);

/// Evenly spaced thresholds over the observed score range.
std::vector<RocPoint> roc_curve(const ScoreSet& scores, std::size_t grid_size = 1000);

/// CSV with header threshold,far,frr,gar.
void export_roc(const ScoreSet& scores, const std::filesystem::path& path, std::size_t grid_size = 1000);
std::string roc_csv(const ScoreSet& scores, std::size_t grid_size = 1000);

MetricsReport compute_metrics(const ProtocolResult& result, std::size_t roc_grid = 1000);

/// JSON metrics report (the ROC lives in its own CSV).
std::string metrics_json(const MetricsReport& report, int bit_length);
void write_metrics_report(const MetricsReport& report, int bit_length, const std::filesystem::path& path);

/// Linear-interpolated percentile, q in [0, 1].
double percentile(std::vector<double> values, double q);

} // namespace fdf
