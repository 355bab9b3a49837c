#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "behaveformer/corpus.hpp"
#include "behaveformer/evaluation.hpp"
#include "behaveformer/features.hpp"

namespace bf {

/// One session's extracted (and normalized) feature matrices plus the global
/// end timestamp of its source window, used for timeline assembly.
struct SessionFeatures {
  std::string user;
  std::string session;
  Scalar end_time = 0.0;
  Matrix keystroke;
  std::optional<Matrix> imu;
};

struct FeatureStore {
  std::string dataset;
  std::string keystroke_schema;
  std::vector<Sensor> sensors;  // empty = keystroke-only
  Index window = kDefaultKeystrokeWindow;
  std::vector<SessionFeatures> sessions;  // ordered by (user, session)
  UserSplits splits;
  std::map<std::string, NormalizerState> normalizers;
  std::vector<std::string> notes;  // sessions dropped during extraction

  Index keystroke_channels() const;
  Index imu_channels() const { return 12 * static_cast<Index>(sensors.size()); }
  std::vector<const SessionFeatures*> of_user(const std::string& user) const;
};

/// Runs the full extraction pipeline over a corpus: per-session keystroke
/// windows, IMU synchronization/resampling over the keystroke span, the
/// derivative/spectrum features, a user split, and min-max normalization
/// fitted on the training users only.
FeatureStore extract_features(const Corpus& corpus, const SplitSpec& split, Index window,
                              const std::vector<Sensor>& sensors);

void save_feature_store(const FeatureStore& store, const std::filesystem::path& dir);
FeatureStore load_feature_store(const std::filesystem::path& dir);

// Score files: one `user,label,score` row per verification attempt.
struct ScoreRecord {
  std::string user;  // claimed identity
  SampleLabel label;
  Scalar score;
};
void save_scores(const std::vector<ScoreRecord>& scores, const std::filesystem::path& path);
std::vector<ScoreRecord> load_scores(const std::filesystem::path& path);

/// DET curve as `threshold,far,frr` rows.
void save_det_csv(const DetCurve& curve, const std::filesystem::path& path);
/// Standalone SVG plot of the DET trade-off with the equal-error point marked.
void save_det_svg(const DetCurve& curve, const std::filesystem::path& path);

/// Fixed-format float used by every text artifact, chosen to round-trip.
std::string format_number(Scalar v);

/// Run manifest: command, seed, config digest and an FNV-1a hash per artifact.
void write_run_manifest(const std::filesystem::path& dir, const std::string& command,
                        std::uint64_t seed, const std::string& config_digest,
                        const std::vector<std::filesystem::path>& artifacts);

}  // namespace bf
