#pragma once

// Source detection on a recovered PSDR and scoring against ground truth.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "invdiff/grid.hpp"

namespace invdiff {

struct Location {
  long m = 0;
  long n = 0;
  double score = 0.0;

  bool operator==(const Location&) const = default;
};

struct DetectionResult {
  std::vector<Location> locations;  // score descending
  double threshold = 0.0;           // absolute threshold that was applied

  void write_csv(std::ostream& os) const {
    os << "m,n,score\n";
    char buf[96];
    for (const auto& l : locations) {
      std::snprintf(buf, sizeof buf, "%ld,%ld,%.17g\n", l.m, l.n, l.score);
      os << buf;
    }
  }
};

struct MatchPair {
  std::size_t detection = 0;
  std::size_t truth = 0;
  double distance = 0.0;
};

struct MatchReport {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<MatchPair> pairs;

  void write_csv(std::ostream& os) const {
    char buf[160];
    os << "tp,fp,fn,precision,recall,f1\n";
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g,%.17g,%.17g\n", true_positives, false_positives,
                  false_negatives, precision, recall, f1);
    os << buf << "\ndetection,truth,distance\n";
    for (const auto& p : pairs) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g\n", p.detection, p.truth, p.distance);
      os << buf;
    }
  }
};

struct DetectConfig {
  double rel_threshold = 0.05;
  long min_separation = 4;
  double match_radius = 4.0;
};

/// Per-pixel secreted mass: sum over supported bins of sqrt(width_k) * a_k.
inline Image aggregate_map(const PsdrTensor& a, const SigmaGrid& grid) {
  if (a.bins() != grid.bins()) throw std::invalid_argument("aggregate_map: bin count mismatch");
  Image out(a.rows(), a.cols());
  auto dst = out.values();
  for (std::size_t k = 0; k < a.bins(); ++k) {
    if (!grid.in_support(k)) continue;
    const double s = std::sqrt(grid.width(k));
    const auto plane = a.plane(k);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * plane[i];
  }
  return out;
}

/// Local maxima (>= all 8 neighbours) above rel_threshold * max, then greedy
/// suppression of anything within Chebyshev distance min_separation of a
/// stronger detection. Ties go to the smaller (m, n).
inline DetectionResult find_sources(const Image& map, double rel_threshold, long min_separation) {
  if (!(rel_threshold > 0.0 && rel_threshold < 1.0)) {
    throw std::invalid_argument("find_sources: rel_threshold must be in (0, 1)");
  }
  if (min_separation < 1) throw std::invalid_argument("find_sources: min_separation must be positive");
  DetectionResult result;
  const double peak = map.max();
  if (!(peak > 0.0)) return result;
  result.threshold = rel_threshold * peak;

  const auto M = static_cast<long>(map.rows());
  const auto N = static_cast<long>(map.cols());
  std::vector<Location> candidates;
  for (long m = 0; m < M; ++m) {
    for (long n = 0; n < N; ++n) {
      const double v = map(static_cast<std::size_t>(m), static_cast<std::size_t>(n));
      if (!(v > result.threshold)) continue;
      bool is_max = true;
      for (long dm = -1; dm <= 1 && is_max; ++dm) {
        for (long dn = -1; dn <= 1; ++dn) {
          const long mm = m + dm;
          const long nn = n + dn;
          if ((dm == 0 && dn == 0) || mm < 0 || nn < 0 || mm >= M || nn >= N) continue;
          if (map(static_cast<std::size_t>(mm), static_cast<std::size_t>(nn)) > v) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) candidates.push_back({m, n, v});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Location& a, const Location& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.m != b.m) return a.m < b.m;
    return a.n < b.n;
  });
  for (const auto& c : candidates) {
    const bool suppressed = std::any_of(result.locations.begin(), result.locations.end(), [&](const Location& kept) {
      return std::max(std::abs(kept.m - c.m), std::abs(kept.n - c.n)) <= min_separation;
    });
    if (!suppressed) result.locations.push_back(c);
  }
  return result;
}

inline void finalize_scores(MatchReport& r, std::size_t detections, std::size_t truths) {
  r.true_positives = r.pairs.size();
  r.false_positives = detections - r.true_positives;
  r.false_negatives = truths - r.true_positives;
  if (detections > 0) {
    r.precision = static_cast<double>(r.true_positives) / static_cast<double>(detections);
  } else {
    r.precision = truths == 0 ? 1.0 : 0.0;
  }
  r.recall = truths > 0 ? static_cast<double>(r.true_positives) / static_cast<double>(truths) : 1.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
}

/// Greedy matching: detections in descending score order each take the
/// nearest unmatched truth within radius (ties to the lower truth index).
inline MatchReport match_and_score(const DetectionResult& detected, const std::vector<Location>& truth, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("match_and_score: radius must be positive");
  MatchReport report;
  std::vector<bool> taken(truth.size(), false);
  std::vector<std::size_t> order(detected.locations.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detected.locations[a].score > detected.locations[b].score;
  });
  for (std::size_t d : order) {
    const auto& det = detected.locations[d];
    std::size_t best = truth.size();
    double best_dist = 0.0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      if (taken[t]) continue;
      const double dist = std::hypot(static_cast<double>(det.m - truth[t].m), static_cast<double>(det.n - truth[t].n));
      if (dist <= radius && (best == truth.size() || dist < best_dist)) {
        best = t;
        best_dist = dist;
      }
    }
    if (best < truth.size()) {
      taken[best] = true;
      report.pairs.push_back({d, best, best_dist});
    }
  }
  finalize_scores(report, detected.locations.size(), truth.size());
  return report;
}

}  // namespace invdiff
