#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "behaveformer/features.hpp"

namespace bf {

/// Declares which columns a dataset provides: whether keystroke rows carry a
/// release-time column and which IMU sensors exist.
struct SchemaManifest {
  std::string name;
  bool release_times = true;
  std::vector<Sensor> sensors;  // empty means keystroke-only

  FeatureSchema keystroke_schema() const {
    return release_times ? full_keystroke_schema() : humidb_keystroke_schema();
  }
};

SchemaManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const SchemaManifest& manifest, const std::filesystem::path& path);

struct Session {
  EventLog keystrokes;
  std::optional<ImuLog> imu;
};

struct LoadReport {
  std::size_t sessions_loaded = 0;
  std::size_t sessions_dropped = 0;
  std::size_t users_dropped = 0;
  std::vector<std::string> notes;
};

struct Corpus {
  std::string name;
  SchemaManifest manifest;
  std::map<std::pair<std::string, std::string>, Session> sessions;  // (user, session)

  std::vector<std::string> users() const;
  std::size_t session_count(const std::string& user) const;
};

/// Loads keystroke.csv (and imu.csv when the manifest lists sensors) from a
/// corpus directory. Sessions missing a required sensor are dropped and
/// reported; malformed rows raise with their file and line number.
Corpus ingest(const std::filesystem::path& dir, const SchemaManifest& manifest,
              LoadReport* report = nullptr);

/// Writes a corpus back out in the ingest file layout.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

struct SplitSpec {
  std::uint64_t seed = 0;
  std::size_t train = 0;
  std::size_t test = 0;
  std::size_t validation = 0;
};

struct UserSplits {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::vector<std::string> validation;
};

/// Seeded shuffle into pairwise-disjoint user sets of the requested sizes.
UserSplits split_users(const Corpus& corpus, const SplitSpec& spec);

/// Synthetic behavioural corpus: each user draws a latent profile (log-normal
/// hold/gap location, per-axis IMU sinusoid amplitude/frequency/phase) once;
/// sessions sample timings and IMU traces around it. `theta` scales inter-user
/// profile dispersion relative to the intra-session noise. Sessions are laid
/// out on a shared global clock so downstream timelines are ordered.
Corpus synthesize(std::size_t users, std::size_t sessions, Scalar theta, std::uint64_t seed);

}  // namespace bf
