#pragma once

#include <string>
#include <vector>

#include "behaveformer/types.hpp"

namespace bf {

/// Stored enrollment embeddings for one claimed identity.
struct EnrollmentProfile {
  std::string user;
  std::vector<Vector> embeddings;
};

/// Mean Euclidean distance from the enrollment embeddings to a verification
/// sample; lower means more likely genuine.
Scalar verification_score(const EnrollmentProfile& profile, const Vector& sample);

struct DetPoint {
  Scalar threshold;
  Scalar far;  // accepted impostors / impostors at score <= threshold
  Scalar frr;  // rejected genuine / genuine
};

/// Threshold sweep over the union of scores, with the equal-error point
/// linearly interpolated at the FAR/FRR crossing.
struct DetCurve {
  std::vector<DetPoint> points;
  Scalar eer = 0.0;
  Scalar eer_threshold = 0.0;
};

DetCurve compute_det(const std::vector<Scalar>& genuine, const std::vector<Scalar>& impostor);

/// Per-claimed-identity score lists for the averaged-EER variant.
struct UserScores {
  std::string user;
  std::vector<Scalar> genuine;
  std::vector<Scalar> impostor;
};

/// Computes one DET per user and averages the per-user EERs with equal weight.
Scalar per_user_mean_eer(const std::vector<UserScores>& users);

enum class SampleLabel { Genuine, Impostor };

struct ScoredSample {
  Scalar timestamp;  // seconds, non-decreasing within a timeline
  Scalar score;
  SampleLabel label;
};

/// Ordered verification scores against one claimed identity. All samples of a
/// timeline carry the same label: a genuine timeline is the identity's own
/// traffic, an impostor timeline is one other user's.
struct ScoredTimeline {
  std::string claimed_user;
  std::vector<ScoredSample> samples;
};

struct CaMetrics {
  Scalar usability = 0.0;     // fraction of genuine samples accepted, averaged per timeline
  Scalar tcr_seconds = 0.0;   // mean time from first sample to first reject, impostor timelines
  Scalar frwi_minutes = 0.0;  // longest false-reject run across genuine timelines
  Scalar fawi_minutes = 0.0;  // longest false-accept run across impostor timelines
  int never_rejected_impostors = 0;  // impostor timelines that contributed their full duration
};

/// Continuous-authentication metrics at a fixed decision threshold
/// (accept iff score <= threshold). Single-sample runs have zero duration;
/// impostor timelines that are never rejected contribute their full duration
/// to TCR and are counted in never_rejected_impostors.
CaMetrics ca_metrics(const std::vector<ScoredTimeline>& timelines, Scalar threshold);

/// Mean silhouette score with Euclidean distance; singleton clusters score 0.
Scalar silhouette(const std::vector<Vector>& embeddings, const std::vector<std::string>& labels);

}  // namespace bf
