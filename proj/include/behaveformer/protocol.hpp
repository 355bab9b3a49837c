#pragma once

#include <string>
#include <vector>

#include "behaveformer/evaluation.hpp"
#include "behaveformer/model.hpp"
#include "behaveformer/storage.hpp"

namespace bf {

/// Outcome of the enrollment-verification protocol over one user set: pooled
/// and per-user score lists, per-claimed-identity timelines (one genuine
/// timeline per user, one impostor timeline per ordered user pair) and the
/// verification embeddings with their true user labels.
struct ProtocolResult {
  std::vector<Scalar> genuine;
  std::vector<Scalar> impostor;
  std::vector<UserScores> per_user;
  std::vector<ScoredTimeline> timelines;
  std::vector<ScoreRecord> records;
  std::vector<Vector> embeddings;
  std::vector<std::string> embedding_labels;
  DetCurve det;
};

/// Enrolls the first `enroll` sessions of each user (capped to leave at least
/// one verification sample) and scores every remaining session against every
/// claimed identity. Users with fewer than two usable sessions are skipped.
ProtocolResult run_verification_protocol(BehaveFormerParams& params, const FeatureStore& store,
                                         const std::vector<std::string>& users, int enroll);

}  // namespace bf
