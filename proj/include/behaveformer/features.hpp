#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "behaveformer/types.hpp"

namespace bf {

// Fixed keystroke window and IMU resampling length used throughout.
inline constexpr Index kDefaultKeystrokeWindow = 50;
inline constexpr Index kImuRows = 100;
inline constexpr Scalar kImuRangeLo = 0.0;
inline constexpr Scalar kImuRangeHi = 10.0;

struct KeyEvent {
  int key_code = 0;
  Scalar press_time = 0.0;               // seconds
  std::optional<Scalar> release_time;    // absent for datasets without key-up events
};

/// Raw per-session keystroke events, sorted by press time.
struct EventLog {
  std::string user;
  std::string session;
  std::vector<KeyEvent> events;
};

enum class Sensor { Accelerometer = 0, Gyroscope = 1, Magnetometer = 2 };

const char* sensor_name(Sensor s);
std::optional<Sensor> sensor_from_name(const std::string& name);
/// All sensors in their canonical concatenation order.
std::vector<Sensor> all_sensors();

struct ImuSample {
  Scalar t = 0.0;  // seconds
  Scalar x = 0.0, y = 0.0, z = 0.0;
};

/// Timestamped accelerometer/gyroscope/magnetometer triples for one session.
struct ImuLog {
  std::string user;
  std::string session;
  std::array<std::vector<ImuSample>, 3> samples;  // indexed by Sensor

  const std::vector<ImuSample>& of(Sensor s) const { return samples[static_cast<std::size_t>(s)]; }
  std::vector<ImuSample>& of(Sensor s) { return samples[static_cast<std::size_t>(s)]; }
};

struct FeatureSchema {
  std::string name;
  std::vector<std::string> channels;

  Index channel_count() const { return static_cast<Index>(channels.size()); }
  bool is_keystroke() const { return name != "imu"; }
};

FeatureSchema full_keystroke_schema();    // 10 channels, needs release times
FeatureSchema humidb_keystroke_schema();  // 3 channels, press times only
FeatureSchema imu_schema(const std::vector<Sensor>& enabled);  // 12 per sensor

/// Fixed-shape feature matrix for one session and one schema.
struct FeatureSequence {
  Matrix values;  // N x M
  std::string schema;
  std::string user;
  std::string session;
};

/// Hold latency, di/tri-gram timings and normalized key code per window row.
/// Rows whose di/tri-gram partners fall outside the log are zero in those
/// channels; short logs are zero-padded and long ones truncated to `window`.
FeatureSequence extract_keystroke_features(const EventLog& log, const FeatureSchema& schema,
                                           Index window = kDefaultKeystrokeWindow);

/// Averages one sensor's samples into `bins` equal time slices of
/// [t_start, t_end]; empty interior bins are linearly interpolated and empty
/// edge bins copy the nearest filled bin. Throws when no sample falls inside
/// the window.
Matrix resample_sensor(const std::vector<ImuSample>& samples, Scalar t_start, Scalar t_end,
                       Index bins = kImuRows);

/// Resamples every enabled sensor of a session log (see resample_sensor).
std::map<Sensor, Matrix> synchronize_resample(const ImuLog& imu, Scalar t_start, Scalar t_end,
                                              const std::vector<Sensor>& enabled,
                                              Index bins = kImuRows);

/// Per sensor and axis: raw value, first/second discrete derivative and DFT
/// magnitude, concatenated over sensors in canonical order -> N x 12*|sensors|.
FeatureSequence extract_imu_features(const std::map<Sensor, Matrix>& resampled,
                                     const std::vector<Sensor>& enabled);

/// Per-channel min-max scaling state. Keystroke schemas pass through
/// untouched (their channels are seconds or already in [0,1]).
struct NormalizerState {
  std::string schema;
  Scalar range_lo = kImuRangeLo;
  Scalar range_hi = kImuRangeHi;
  bool passthrough = false;
  bool fitted = false;
  RowVector channel_min;
  RowVector channel_max;
};

/// Fits per-channel minima/maxima on training-split sequences only.
NormalizerState fit_normalizer(const std::vector<FeatureSequence>& train_sequences,
                               const FeatureSchema& schema, Scalar range_lo = kImuRangeLo,
                               Scalar range_hi = kImuRangeHi);

/// Min-max scales into [range_lo, range_hi]; constant channels map to the
/// range minimum. Throws on unfitted state or schema mismatch.
FeatureSequence apply_normalizer(const NormalizerState& state, const FeatureSequence& seq);

}  // namespace bf
