#include "fdf/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace fdf {

namespace {

void require_nonempty(const ScoreSet& scores, const char* what) {
  if (scores.genuine.empty() || scores.impostor.empty())
    throw UndefinedMetricError(std::string(what) + ": genuine and impostor scores must be nonempty");
}

double fraction_at_most(const std::vector<double>& sorted, double t) {
  const auto n = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
  return static_cast<double>(n) / static_cast<double>(sorted.size());
}

std::vector<double> sorted_copy(const std::vector<double>& v) {
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  return s;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

} // namespace

std::pair<double, double> far_frr(const ScoreSet& scores, double threshold) {
  require_nonempty(scores, "far_frr");
  const auto impostor_accepted =
      std::count_if(scores.impostor.begin(), scores.impostor.end(), [&](double s) { return s <= threshold; });
  const auto genuine_rejected =
      std::count_if(scores.genuine.begin(), scores.genuine.end(), [&](double s) { return s > threshold; });
  return {static_cast<double>(impostor_accepted) / static_cast<double>(scores.impostor.size()),
          static_cast<double>(genuine_rejected) / static_cast<double>(scores.genuine.size())};
}

EerResult eer(const ScoreSet& scores) {
  require_nonempty(scores, "eer");
  const std::vector<double> g = sorted_copy(scores.genuine);
  const std::vector<double> im = sorted_copy(scores.impostor);

  std::vector<double> thresholds(g);
  thresholds.insert(thresholds.end(), im.begin(), im.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  // Operating points, starting below every score (accept nothing).
  std::vector<RocPoint> points;
  points.reserve(thresholds.size() + 1);
  points.push_back({std::nextafter(thresholds.front(), -std::numeric_limits<double>::infinity()), 0.0, 1.0});
  for (double t : thresholds) points.push_back({t, fraction_at_most(im, t), 1.0 - fraction_at_most(g, t)});

  // Lower convex hull in the (far, frr) plane.
  std::sort(points.begin(), points.end(), [](const RocPoint& a, const RocPoint& b) {
    return a.far != b.far ? a.far < b.far : a.frr < b.frr;
  });
  std::vector<RocPoint> hull;
  for (const RocPoint& p : points) {
    while (hull.size() >= 2) {
      const RocPoint& o = hull[hull.size() - 2];
      const RocPoint& a = hull.back();
      const double cross = (a.far - o.far) * (p.frr - o.frr) - (a.frr - o.frr) * (p.far - o.far);
      if (cross > 0.0) break;
      hull.pop_back();
    }
    hull.push_back(p);
  }

  for (std::size_t i = 0; i < hull.size(); ++i) {
    const double diff = hull[i].frr - hull[i].far;
    if (diff > 0.0) continue;
    if (diff == 0.0 || i == 0) return {hull[i].far, hull[i].threshold};
    const RocPoint& a = hull[i - 1];
    const RocPoint& b = hull[i];
    const double da = a.frr - a.far;
    const double alpha = da / (da - diff);
    return {a.far + alpha * (b.far - a.far), a.threshold + alpha * (b.threshold - a.threshold)};
  }
  return {hull.back().far, hull.back().threshold}; // unreachable: the last point has frr = 0
}

double crr_rank1(std::span<const ProbeRanking> rankings) {
  if (rankings.empty()) throw UndefinedMetricError("crr: no probes");
  std::size_t correct = 0;
  for (const ProbeRanking& r : rankings) {
    if (r.candidates.empty()) throw UndefinedMetricError("crr: probe without candidate scores");
    double own = std::numeric_limits<double>::infinity();
    double best_other = std::numeric_limits<double>::infinity();
    for (const auto& [identity, score] : r.candidates) {
      if (identity == r.true_identity)
        own = std::min(own, score);
      else
        best_other = std::min(best_other, score);
    }
    if (own < best_other) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(rankings.size());
}

double decidability_index(const ScoreSet& scores) {
  if (scores.genuine.size() < 2 || scores.impostor.size() < 2)
    throw UndefinedMetricError("decidability index: need at least two scores per class");
  auto moments = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss / (n - 1.0)};
  };
  const auto [mg, vg] = moments(scores.genuine);
  const auto [mi, vi] = moments(scores.impostor);
  const double pooled = (vg + vi) / 2.0;
  if (!(pooled > 0.0)) throw UndefinedMetricError("decidability index: zero combined variance");
  return std::abs(mg - mi) / std::sqrt(pooled);
}

std::vector<RocPoint> roc_curve(const ScoreSet& scores, std::size_t grid_size) {
  require_nonempty(scores, "roc");
  if (grid_size < 2) throw UndefinedMetricError("roc: grid needs at least two thresholds");
  const std::vector<double> g = sorted_copy(scores.genuine);
  const std::vector<double> im = sorted_copy(scores.impostor);
  const double lo = std::min(g.front(), im.front());
  double hi = std::max(g.back(), im.back());
  if (!(hi > lo)) hi = lo + 1e-9;

  std::vector<RocPoint> roc;
  roc.reserve(grid_size);
  for (std::size_t k = 0; k < grid_size; ++k) {
    const double t = k + 1 == grid_size
                         ? hi
                         : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(grid_size - 1);
    roc.push_back({t, fraction_at_most(im, t), 1.0 - fraction_at_most(g, t)});
  }
  return roc;
}

std::string roc_csv(const ScoreSet& scores, std::size_t grid_size) {
  std::string csv = "threshold,far,frr,gar\n";
  for (const RocPoint& p : roc_curve(scores, grid_size)) {
    csv += format_number(p.threshold) + ',' + format_number(p.far) + ',' + format_number(p.frr) + ',' +
           format_number(1.0 - p.frr) + '\n';
  }
  return csv;
}

void export_roc(const ScoreSet& scores, const std::filesystem::path& path, std::size_t grid_size) {
  const std::string csv = roc_csv(scores, grid_size);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("export_roc: cannot write " + path.string());
  out << csv;
  if (!out) throw IoError("export_roc: write failed for " + path.string());
}

MetricsReport compute_metrics(const ProtocolResult& result, std::size_t roc_grid) {
  MetricsReport report;
  const EerResult e = eer(result.scores);
  report.eer = e.eer;
  report.eer_threshold = e.threshold;
  report.crr = crr_rank1(result.rankings);
  report.di = decidability_index(result.scores);
  report.genuine_count = result.scores.genuine.size();
  report.impostor_count = result.scores.impostor.size();
  report.roc = roc_curve(result.scores, roc_grid);
  return report;
}

std::string metrics_json(const MetricsReport& report, int bit_length) {
  const nlohmann::json j = {{"schema", 1},
                            {"bit_length", bit_length},
                            {"eer", report.eer},
                            {"eer_percent", 100.0 * report.eer},
                            {"eer_threshold", report.eer_threshold},
                            {"crr_percent", report.crr},
                            {"di", report.di},
                            {"genuine_count", report.genuine_count},
                            {"impostor_count", report.impostor_count}};
  return j.dump(2) + "\n";
}

void write_metrics_report(const MetricsReport& report, int bit_length, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("metrics report: cannot write " + path.string());
  out << metrics_json(report, bit_length);
  if (!out) throw IoError("metrics report: write failed for " + path.string());
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw UndefinedMetricError("percentile: no values");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

} // namespace fdf
