#include "behaveformer/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

namespace bf {

Scalar verification_score(const EnrollmentProfile& profile, const Vector& sample) {
  if (profile.embeddings.empty()) {
    throw std::invalid_argument("verification_score: empty enrollment profile for user " +
                                profile.user);
  }
  Scalar sum = 0.0;
  for (const Vector& e : profile.embeddings) {
    if (e.size() != sample.size()) {
      throw std::invalid_argument("verification_score: embedding dimension mismatch");
    }
    sum += (e - sample).norm();
  }
  return sum / static_cast<Scalar>(profile.embeddings.size());
}

DetCurve compute_det(const std::vector<Scalar>& genuine, const std::vector<Scalar>& impostor) {
  if (genuine.empty() || impostor.empty()) {
    throw std::invalid_argument("compute_det: need both genuine and impostor scores");
  }

  std::set<Scalar> union_scores(genuine.begin(), genuine.end());
  union_scores.insert(impostor.begin(), impostor.end());
  std::vector<Scalar> thresholds;
  thresholds.push_back(*union_scores.begin() - 1.0);  // accept nothing
  thresholds.insert(thresholds.end(), union_scores.begin(), union_scores.end());

  std::vector<Scalar> gen_sorted(genuine), imp_sorted(impostor);
  std::sort(gen_sorted.begin(), gen_sorted.end());
  std::sort(imp_sorted.begin(), imp_sorted.end());
  const auto frac_at_most = [](const std::vector<Scalar>& v, Scalar t) {
    const auto it = std::upper_bound(v.begin(), v.end(), t);
    return static_cast<Scalar>(it - v.begin()) / static_cast<Scalar>(v.size());
  };

  DetCurve curve;
  for (Scalar t : thresholds) {
    const Scalar far = frac_at_most(imp_sorted, t);
    const Scalar frr = 1.0 - frac_at_most(gen_sorted, t);
    curve.points.push_back({t, far, frr});
  }

  // FAR - FRR is non-decreasing along the sweep, from -1 up to +1.
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    const Scalar d = curve.points[i].far - curve.points[i].frr;
    if (d >= 0.0) {
      if (d == 0.0 || i == 0) {
        curve.eer = curve.points[i].far;
        curve.eer_threshold = curve.points[i].threshold;
      } else {
        const DetPoint& a = curve.points[i - 1];
        const DetPoint& b = curve.points[i];
        const Scalar da = a.far - a.frr;
        const Scalar t = -da / (d - da);
        curve.eer = a.far + t * (b.far - a.far);
        curve.eer_threshold = a.threshold + t * (b.threshold - a.threshold);
      }
      return curve;
    }
  }
  // FAR never reaches FRR within the sweep (all scores accepted still rejects
  // nothing genuine): the final point is the crossing.
  curve.eer = curve.points.back().far;
  curve.eer_threshold = curve.points.back().threshold;
  return curve;
}

Scalar per_user_mean_eer(const std::vector<UserScores>& users) {
  if (users.empty()) throw std::invalid_argument("per_user_mean_eer: no users");
  Scalar sum = 0.0;
  for (const UserScores& u : users) sum += compute_det(u.genuine, u.impostor).eer;
  return sum / static_cast<Scalar>(users.size());
}

namespace {

bool uniform_label(const ScoredTimeline& tl, SampleLabel label) {
  return std::all_of(tl.samples.begin(), tl.samples.end(),
                     [label](const ScoredSample& s) { return s.label == label; });
}

// Longest duration over maximal runs of samples matching `pred`.
Scalar worst_run_seconds(const ScoredTimeline& tl, bool reject_runs, Scalar threshold) {
  Scalar worst = 0.0;
  std::size_t i = 0;
  while (i < tl.samples.size()) {
    const bool hit = (tl.samples[i].score > threshold) == reject_runs;
    if (!hit) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < tl.samples.size() &&
           ((tl.samples[j + 1].score > threshold) == reject_runs))
      ++j;
    worst = std::max(worst, tl.samples[j].timestamp - tl.samples[i].timestamp);
    i = j + 1;
  }
  return worst;
}

}  // namespace

CaMetrics ca_metrics(const std::vector<ScoredTimeline>& timelines, Scalar threshold) {
  if (timelines.empty()) throw std::invalid_argument("ca_metrics: no timelines");
  for (const ScoredTimeline& tl : timelines) {
    if (tl.samples.empty()) {
      throw std::invalid_argument("ca_metrics: empty timeline for claimed user " + tl.claimed_user);
    }
    if (!uniform_label(tl, tl.samples.front().label)) {
      throw std::invalid_argument("ca_metrics: timeline for claimed user " + tl.claimed_user +
                                  " mixes genuine and impostor samples");
    }
    for (std::size_t i = 1; i < tl.samples.size(); ++i) {
      if (tl.samples[i].timestamp < tl.samples[i - 1].timestamp) {
        throw std::invalid_argument("ca_metrics: timestamps must be non-decreasing");
      }
    }
  }

  CaMetrics out;
  int genuine_count = 0, impostor_count = 0;
  Scalar usability_sum = 0.0, tcr_sum = 0.0;
  for (const ScoredTimeline& tl : timelines) {
    if (tl.samples.front().label == SampleLabel::Genuine) {
      ++genuine_count;
      std::size_t accepted = 0;
      for (const ScoredSample& s : tl.samples)
        if (s.score <= threshold) ++accepted;
      usability_sum += static_cast<Scalar>(accepted) / static_cast<Scalar>(tl.samples.size());
      out.frwi_minutes = std::max(out.frwi_minutes, worst_run_seconds(tl, true, threshold) / 60.0);
    } else {
      ++impostor_count;
      const Scalar t0 = tl.samples.front().timestamp;
      bool rejected = false;
      for (const ScoredSample& s : tl.samples) {
        if (s.score > threshold) {
          tcr_sum += s.timestamp - t0;
          rejected = true;
          break;
        }
      }
      if (!rejected) {
        tcr_sum += tl.samples.back().timestamp - t0;
        ++out.never_rejected_impostors;
      }
      out.fawi_minutes = std::max(out.fawi_minutes, worst_run_seconds(tl, false, threshold) / 60.0);
    }
  }
  if (genuine_count > 0) out.usability = usability_sum / static_cast<Scalar>(genuine_count);
  if (impostor_count > 0) out.tcr_seconds = tcr_sum / static_cast<Scalar>(impostor_count);
  return out;
}

Scalar silhouette(const std::vector<Vector>& embeddings, const std::vector<std::string>& labels) {
  if (embeddings.size() != labels.size()) {
    throw std::invalid_argument("silhouette: one label per embedding required");
  }
  const std::size_t n = embeddings.size();
  std::map<std::string, std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < n; ++i) clusters[labels[i]].push_back(i);
  if (clusters.size() < 2) {
    throw std::invalid_argument("silhouette: need at least two distinct labels");
  }

  Scalar total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& own = clusters.at(labels[i]);
    if (own.size() == 1) continue;  // singleton scores 0 by convention

    Scalar a = 0.0;
    for (std::size_t j : own)
      if (j != i) a += (embeddings[i] - embeddings[j]).norm();
    a /= static_cast<Scalar>(own.size() - 1);

    Scalar b = std::numeric_limits<Scalar>::infinity();
    for (const auto& [label, members] : clusters) {
      if (label == labels[i]) continue;
      Scalar d = 0.0;
      for (std::size_t j : members) d += (embeddings[i] - embeddings[j]).norm();
      b = std::min(b, d / static_cast<Scalar>(members.size()));
    }
    const Scalar denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<Scalar>(n);
}

}  // namespace bf
