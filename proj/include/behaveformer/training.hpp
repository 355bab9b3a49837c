#pragma once

#include <random>
#include <set>
#include <string>
#include <vector>

#include "behaveformer/checkpoint.hpp"
#include "behaveformer/graph.hpp"
#include "behaveformer/model.hpp"
#include "behaveformer/storage.hpp"

namespace bf {

/// Anchor and positive come from one user, the negative from another; the
/// anchor and positive are distinct sessions.
struct Triplet {
  const SessionFeatures* anchor = nullptr;
  const SessionFeatures* positive = nullptr;
  const SessionFeatures* negative = nullptr;
};

struct TrainConfig {
  Scalar margin = 1.0;          // hinge margin
  Scalar learning_rate = 0.001;
  int batch_users = 16;         // users drawn per batch (one triplet each)
  int seqs_per_user = 2;        // sessions drawn per user (anchor + positive)
  int epochs = 50;
  int batches_per_epoch = 0;    // 0: one pass worth of train sessions
  int patience = 10;            // early stop on validation EER
  int enroll = 5;               // enrollment samples for validation EER
  std::uint64_t seed = 0;
  std::set<std::string> frozen_prefixes;  // parameter prefixes excluded from updates
};

/// Hinge loss max(0, D(a,p) - D(a,n) + margin) with Euclidean embedding
/// distances; zero subgradient at the hinge.
Var triplet_loss(Graph& g, Var anchor, Var positive, Var negative, Scalar margin);
Scalar triplet_loss_value(const Vector& anchor, const Vector& positive, const Vector& negative,
                          Scalar margin);

/// One batch of triplets: `batch_users` users drawn without replacement (all
/// eligible users when fewer), a distinct anchor/positive pair per user, and a
/// negative from another drawn user. Deterministic given the rng state.
std::vector<Triplet> sample_triplets(const FeatureStore& store,
                                     const std::vector<std::string>& users, int batch_users,
                                     std::mt19937_64& rng);

struct EpochRecord {
  int epoch = 0;
  Scalar train_loss = 0.0;
  Scalar val_eer = 0.0;
};

struct TrainResult {
  BehaveFormerParams params;  // best-validation parameters
  std::vector<EpochRecord> history;
  Scalar best_val_eer = 1.0;
  int best_epoch = 0;
};

/// Adam-on-triplet-loss training loop with per-epoch validation EER, best
/// checkpoint retention and early stopping. Aborts with the offending epoch on
/// a non-finite loss.
TrainResult train(BehaveFormerParams params, const FeatureStore& store, const TrainConfig& config);

/// Continues training from a checkpoint after verifying that the tower shapes
/// match the feature store; `config.frozen_prefixes` pins listed submodules.
TrainResult fine_tune(const Checkpoint& checkpoint, const FeatureStore& store,
                      const TrainConfig& config);

void save_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace bf
