#include "behaveformer/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>

#include <unsupported/Eigen/FFT>

namespace bf {

const char* sensor_name(Sensor s) {
  switch (s) {
    case Sensor::Accelerometer: return "accelerometer";
    case Sensor::Gyroscope: return "gyroscope";
    case Sensor::Magnetometer: return "magnetometer";
  }
  return "?";
}

std::optional<Sensor> sensor_from_name(const std::string& name) {
  if (name == "accelerometer") return Sensor::Accelerometer;
  if (name == "gyroscope") return Sensor::Gyroscope;
  if (name == "magnetometer") return Sensor::Magnetometer;
  return std::nullopt;
}

std::vector<Sensor> all_sensors() {
  return {Sensor::Accelerometer, Sensor::Gyroscope, Sensor::Magnetometer};
}

FeatureSchema full_keystroke_schema() {
  return {"full-keystroke",
          {"HL", "DU_di", "UD_di", "DD_di", "UU_di", "DU_tri", "UD_tri", "DD_tri", "UU_tri", "ASCII"}};
}

FeatureSchema humidb_keystroke_schema() {
  return {"humidb-keystroke", {"DD_di", "DD_tri", "ASCII"}};
}

FeatureSchema imu_schema(const std::vector<Sensor>& enabled) {
  static const char* kAxis[] = {"x", "y", "z"};
  static const char* kKind[] = {"", "d", "dd", "fft_"};
  static const char* kPrefix[] = {"acc", "gyr", "mag"};
  FeatureSchema s{"imu", {}};
  for (Sensor sensor : all_sensors()) {
    if (std::find(enabled.begin(), enabled.end(), sensor) == enabled.end()) continue;
    const char* p = kPrefix[static_cast<int>(sensor)];
    for (int kind = 0; kind < 4; ++kind)
      for (int axis = 0; axis < 3; ++axis)
        s.channels.push_back(std::string(p) + "_" + kKind[kind] + kAxis[axis]);
  }
  return s;
}

FeatureSequence extract_keystroke_features(const EventLog& log, const FeatureSchema& schema,
                                           Index window) {
  if (!schema.is_keystroke()) {
    throw std::invalid_argument("extract_keystroke_features: schema '" + schema.name +
                                "' is not a keystroke schema");
  }
  if (log.events.empty()) {
    throw std::invalid_argument("extract_keystroke_features: empty event log for session " +
                                log.session);
  }
  const bool full = schema.name == "full-keystroke";
  if (full) {
    for (const KeyEvent& e : log.events)
      if (!e.release_time) {
        throw std::invalid_argument(
            "extract_keystroke_features: full schema requires release times (session " +
            log.session + ")");
      }
  }

  const auto& ev = log.events;
  const Index live = std::min<Index>(window, static_cast<Index>(ev.size()));
  const auto press = [&](Index i) { return ev[static_cast<std::size_t>(i)].press_time; };
  const auto rel = [&](Index i) { return *ev[static_cast<std::size_t>(i)].release_time; };
  const auto ascii = [&](Index i) {
    return std::clamp(ev[static_cast<std::size_t>(i)].key_code / 255.0, 0.0, 1.0);
  };

  Matrix x = Matrix::Zero(window, schema.channel_count());
  const Index n = static_cast<Index>(ev.size());
  for (Index i = 0; i < live; ++i) {
    const bool di = i + 1 < n;
    const bool tri = i + 2 < n;
    if (full) {
      x(i, 0) = rel(i) - press(i);
      if (di) {
        x(i, 1) = rel(i + 1) - press(i);
        x(i, 2) = press(i + 1) - rel(i);
        x(i, 3) = press(i + 1) - press(i);
        x(i, 4) = rel(i + 1) - rel(i);
      }
      if (tri) {
        x(i, 5) = rel(i + 2) - press(i);
        x(i, 6) = press(i + 2) - rel(i);
        x(i, 7) = press(i + 2) - press(i);
        x(i, 8) = rel(i + 2) - rel(i);
      }
      x(i, 9) = ascii(i);
    } else {
      if (di) x(i, 0) = press(i + 1) - press(i);
      if (tri) x(i, 1) = press(i + 2) - press(i);
      x(i, 2) = ascii(i);
    }
  }
  return {std::move(x), schema.name, log.user, log.session};
}

Matrix resample_sensor(const std::vector<ImuSample>& samples, Scalar t_start, Scalar t_end,
                       Index bins) {
  if (!(t_start < t_end)) {
    throw std::invalid_argument("resample_sensor: window start must precede its end");
  }
  Matrix sums = Matrix::Zero(bins, 3);
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(bins);
  const Scalar span = t_end - t_start;
  for (const ImuSample& s : samples) {
    if (s.t < t_start || s.t > t_end) continue;
    Index b = static_cast<Index>((s.t - t_start) / span * static_cast<Scalar>(bins));
    if (b >= bins) b = bins - 1;  // sample exactly at t_end
    sums.row(b) += Eigen::RowVector3d(s.x, s.y, s.z);
    counts(b) += 1;
  }
  if (counts.sum() == 0) {
    throw std::runtime_error("resample_sensor: no samples inside the window");
  }

  Matrix out(bins, 3);
  for (Index b = 0; b < bins; ++b)
    if (counts(b) > 0) out.row(b) = sums.row(b) / static_cast<Scalar>(counts(b));

  // Fill gaps: interior bins interpolate between neighbours, edges copy them.
  Index prev = -1;
  for (Index b = 0; b < bins; ++b) {
    if (counts(b) == 0) continue;
    if (prev < 0) {
      for (Index e = 0; e < b; ++e) out.row(e) = out.row(b);
    } else if (prev + 1 < b) {
      for (Index e = prev + 1; e < b; ++e) {
        const Scalar w = static_cast<Scalar>(e - prev) / static_cast<Scalar>(b - prev);
        out.row(e) = (1.0 - w) * out.row(prev) + w * out.row(b);
      }
    }
    prev = b;
  }
  for (Index e = prev + 1; e < bins; ++e) out.row(e) = out.row(prev);
  return out;
}

std::map<Sensor, Matrix> synchronize_resample(const ImuLog& imu, Scalar t_start, Scalar t_end,
                                              const std::vector<Sensor>& enabled, Index bins) {
  std::map<Sensor, Matrix> out;
  for (Sensor s : enabled) {
    try {
      out[s] = resample_sensor(imu.of(s), t_start, t_end, bins);
    } catch (const std::runtime_error&) {
      throw std::runtime_error(std::string("synchronize_resample: no ") + sensor_name(s) +
                               " samples inside the window (session " + imu.session + ")");
    }
  }
  return out;
}

namespace {

// Forward difference with the last entry replicated.
Vector forward_diff(const Vector& x) {
  const Index n = x.size();
  Vector d(n);
  for (Index i = 0; i + 1 < n; ++i) d(i) = x(i + 1) - x(i);
  d(n - 1) = n > 1 ? d(n - 2) : 0.0;
  return d;
}

Vector dft_magnitude(const Vector& x) {
  Eigen::FFT<Scalar> fft;
  std::vector<std::complex<Scalar>> freq;
  std::vector<Scalar> time(x.data(), x.data() + x.size());
  fft.fwd(freq, time);
  Vector mag(x.size());
  for (Index i = 0; i < x.size(); ++i) mag(i) = std::abs(freq[static_cast<std::size_t>(i)]);
  return mag;
}

}  // namespace

FeatureSequence extract_imu_features(const std::map<Sensor, Matrix>& resampled,
                                     const std::vector<Sensor>& enabled) {
  const FeatureSchema schema = imu_schema(enabled);
  Index rows = -1;
  for (Sensor s : enabled) {
    const auto it = resampled.find(s);
    if (it == resampled.end()) {
      throw std::invalid_argument(std::string("extract_imu_features: missing resampled data for ") +
                                  sensor_name(s));
    }
    if (it->second.cols() != 3) {
      throw std::invalid_argument(std::string("extract_imu_features: ") + sensor_name(s) +
                                  " matrix must have 3 columns");
    }
    if (rows < 0) rows = it->second.rows();
    if (it->second.rows() != rows) {
      throw std::invalid_argument("extract_imu_features: sensors disagree on row count");
    }
  }

  Matrix x(rows, schema.channel_count());
  Index base = 0;
  for (Sensor s : all_sensors()) {
    if (std::find(enabled.begin(), enabled.end(), s) == enabled.end()) continue;
    const Matrix& raw = resampled.at(s);
    for (Index axis = 0; axis < 3; ++axis) {
      const Vector v = raw.col(axis);
      const Vector d1 = forward_diff(v);
      x.col(base + axis) = v;
      x.col(base + 3 + axis) = d1;
      x.col(base + 6 + axis) = forward_diff(d1);
      x.col(base + 9 + axis) = dft_magnitude(v);
    }
    base += 12;
  }
  return {std::move(x), schema.name, "", ""};
}

NormalizerState fit_normalizer(const std::vector<FeatureSequence>& train_sequences,
                               const FeatureSchema& schema, Scalar range_lo, Scalar range_hi) {
  if (train_sequences.empty()) {
    throw std::invalid_argument("fit_normalizer: no training sequences");
  }
  NormalizerState st;
  st.schema = schema.name;
  st.range_lo = range_lo;
  st.range_hi = range_hi;
  st.passthrough = schema.is_keystroke();
  st.fitted = true;
  if (st.passthrough) return st;

  const Index m = schema.channel_count();
  st.channel_min = RowVector::Constant(m, std::numeric_limits<Scalar>::infinity());
  st.channel_max = RowVector::Constant(m, -std::numeric_limits<Scalar>::infinity());
  for (const FeatureSequence& seq : train_sequences) {
    if (seq.schema != schema.name || seq.values.cols() != m) {
      throw std::invalid_argument("fit_normalizer: sequence schema '" + seq.schema +
                                  "' does not match '" + schema.name + "'");
    }
    st.channel_min = st.channel_min.cwiseMin(seq.values.colwise().minCoeff());
    st.channel_max = st.channel_max.cwiseMax(seq.values.colwise().maxCoeff());
  }
  return st;
}

FeatureSequence apply_normalizer(const NormalizerState& state, const FeatureSequence& seq) {
  if (!state.fitted) {
    throw std::invalid_argument("apply_normalizer: normalizer has not been fitted");
  }
  if (seq.schema != state.schema) {
    throw std::invalid_argument("apply_normalizer: sequence schema '" + seq.schema +
                                "' does not match fitted schema '" + state.schema + "'");
  }
  if (state.passthrough) return seq;
  if (seq.values.cols() != state.channel_min.size()) {
    throw std::invalid_argument("apply_normalizer: channel count mismatch");
  }

  FeatureSequence out = seq;
  const Scalar width = state.range_hi - state.range_lo;
  for (Index c = 0; c < out.values.cols(); ++c) {
    const Scalar lo = state.channel_min(c), hi = state.channel_max(c);
    if (hi > lo) {
      out.values.col(c) = ((out.values.col(c).array() - lo) / (hi - lo) * width + state.range_lo).matrix();
    } else {
      out.values.col(c).setConstant(state.range_lo);
    }
  }
  return out;
}

}  // namespace bf
