#include "behaveformer/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "behaveformer/digest.hpp"

namespace bf {

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

SchemaManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  SchemaManifest m;
  m.name = j.at("name").get<std::string>();
  m.release_times = j.at("release_times").get<bool>();
  for (const auto& s : j.value("sensors", nlohmann::json::array())) {
    const auto sensor = sensor_from_name(s.get<std::string>());
    if (!sensor) throw std::runtime_error("load_manifest: unknown sensor '" + s.get<std::string>() + "'");
    m.sensors.push_back(*sensor);
  }
  return m;
}

void save_manifest(const SchemaManifest& manifest, const std::filesystem::path& path) {
  nlohmann::json j;
  j["name"] = manifest.name;
  j["release_times"] = manifest.release_times;
  auto sensors = nlohmann::json::array();
  for (Sensor s : manifest.sensors) sensors.push_back(sensor_name(s));
  j["sensors"] = sensors;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_manifest: cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<std::string> Corpus::users() const {
  std::vector<std::string> out;
  for (const auto& [key, session] : sessions)
    if (out.empty() || out.back() != key.first) out.push_back(key.first);
  return out;
}

std::size_t Corpus::session_count(const std::string& user) const {
  std::size_t n = 0;
  for (const auto& [key, session] : sessions)
    if (key.first == user) ++n;
  return n;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

Scalar parse_number(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  Scalar v;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": not a number: '" + s + "'");
  }
  if (used != s.size()) throw std::runtime_error(where + ": trailing characters in '" + s + "'");
  return v;
}

int parse_int(const std::string& s, const std::string& where) {
  const Scalar v = parse_number(s, where);
  if (v != std::floor(v)) throw std::runtime_error(where + ": expected an integer, got '" + s + "'");
  return static_cast<int>(v);
}

}  // namespace

Corpus ingest(const std::filesystem::path& dir, const SchemaManifest& manifest, LoadReport* report) {
  Corpus corpus;
  corpus.name = manifest.name;
  corpus.manifest = manifest;
  LoadReport local;
  LoadReport& rep = report ? *report : local;

  const std::filesystem::path key_path = dir / "keystroke.csv";
  std::ifstream key_file(key_path);
  if (!key_file) throw std::runtime_error("ingest: cannot open " + key_path.string());
  const std::size_t expected_cols = manifest.release_times ? 5 : 4;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(key_file, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = key_path.filename().string() + ":" + std::to_string(line_no);
    const auto fields = split_csv(line);
    if (fields.size() != expected_cols) {
      throw std::runtime_error(where + ": expected " + std::to_string(expected_cols) +
                               " columns, got " + std::to_string(fields.size()));
    }
    KeyEvent ev;
    ev.key_code = parse_int(fields[2], where);
    ev.press_time = parse_number(fields[3], where);
    if (manifest.release_times) {
      ev.release_time = parse_number(fields[4], where);
      if (*ev.release_time < ev.press_time) {
        throw std::runtime_error(where + ": release time precedes press time");
      }
    }
    Session& s = corpus.sessions[{fields[0], fields[1]}];
    s.keystrokes.user = fields[0];
    s.keystrokes.session = fields[1];
    s.keystrokes.events.push_back(ev);
  }
  for (auto& [key, session] : corpus.sessions) {
    std::stable_sort(session.keystrokes.events.begin(), session.keystrokes.events.end(),
                     [](const KeyEvent& a, const KeyEvent& b) { return a.press_time < b.press_time; });
  }

  if (!manifest.sensors.empty()) {
    const std::filesystem::path imu_path = dir / "imu.csv";
    std::ifstream imu_file(imu_path);
    if (!imu_file) throw std::runtime_error("ingest: cannot open " + imu_path.string());
    line_no = 0;
    while (std::getline(imu_file, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      const std::string where = imu_path.filename().string() + ":" + std::to_string(line_no);
      const auto fields = split_csv(line);
      if (fields.size() != 7) {
        throw std::runtime_error(where + ": expected 7 columns, got " + std::to_string(fields.size()));
      }
      const auto sensor = sensor_from_name(fields[2]);
      if (!sensor || std::find(manifest.sensors.begin(), manifest.sensors.end(), *sensor) ==
                         manifest.sensors.end()) {
        throw std::runtime_error(where + ": sensor '" + fields[2] + "' not in the manifest");
      }
      const auto it = corpus.sessions.find({fields[0], fields[1]});
      if (it == corpus.sessions.end()) continue;  // IMU without keystrokes is unusable
      if (!it->second.imu) {
        it->second.imu = ImuLog{fields[0], fields[1], {}};
      }
      it->second.imu->of(*sensor).push_back({parse_number(fields[3], where),
                                             parse_number(fields[4], where),
                                             parse_number(fields[5], where),
                                             parse_number(fields[6], where)});
    }
    for (auto& [key, session] : corpus.sessions) {
      if (!session.imu) continue;
      for (Sensor s : manifest.sensors) {
        auto& samples = session.imu->of(s);
        std::stable_sort(samples.begin(), samples.end(),
                         [](const ImuSample& a, const ImuSample& b) { return a.t < b.t; });
        for (std::size_t i = 1; i < samples.size(); ++i) {
          if (samples[i].t == samples[i - 1].t) {
            throw std::runtime_error("ingest: duplicate " + std::string(sensor_name(s)) +
                                     " timestamp in session " + key.second + " of user " + key.first);
          }
        }
      }
    }

    // Sessions must carry every required sensor.
    std::vector<std::string> users_before = corpus.users();
    for (auto it = corpus.sessions.begin(); it != corpus.sessions.end();) {
      bool complete = it->second.imu.has_value();
      if (complete) {
        for (Sensor s : manifest.sensors) complete = complete && !it->second.imu->of(s).empty();
      }
      if (!complete) {
        rep.notes.push_back("dropped session " + it->first.second + " of user " + it->first.first +
                            ": missing IMU data");
        ++rep.sessions_dropped;
        it = corpus.sessions.erase(it);
      } else {
        ++it;
      }
    }
    const std::vector<std::string> users_after = corpus.users();
    for (const std::string& u : users_before) {
      if (std::find(users_after.begin(), users_after.end(), u) == users_after.end()) {
        ++rep.users_dropped;
        rep.notes.push_back("dropped user " + u + ": no sessions left");
      }
    }
  }
  rep.sessions_loaded = corpus.sessions.size();
  if (corpus.sessions.empty()) throw std::runtime_error("ingest: corpus is empty after filtering");
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_manifest(corpus.manifest, dir / "manifest.json");

  char buf[64];
  const auto num = [&buf](Scalar v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };

  std::ofstream key_file(dir / "keystroke.csv");
  if (!key_file) throw std::runtime_error("save_corpus: cannot write keystroke.csv");
  for (const auto& [key, session] : corpus.sessions) {
    for (const KeyEvent& e : session.keystrokes.events) {
      key_file << key.first << ',' << key.second << ',' << e.key_code << ',' << num(e.press_time);
      if (corpus.manifest.release_times) key_file << ',' << num(e.release_time.value());
      key_file << '\n';
    }
  }

  if (!corpus.manifest.sensors.empty()) {
    std::ofstream imu_file(dir / "imu.csv");
    if (!imu_file) throw std::runtime_error("save_corpus: cannot write imu.csv");
    for (const auto& [key, session] : corpus.sessions) {
      if (!session.imu) continue;
      for (Sensor s : corpus.manifest.sensors) {
        for (const ImuSample& sm : session.imu->of(s)) {
          imu_file << key.first << ',' << key.second << ',' << sensor_name(s) << ',' << num(sm.t)
                   << ',' << num(sm.x) << ',' << num(sm.y) << ',' << num(sm.z) << '\n';
        }
      }
    }
  }
}

UserSplits split_users(const Corpus& corpus, const SplitSpec& spec) {
  std::vector<std::string> users = corpus.users();
  const std::size_t need = spec.train + spec.test + spec.validation;
  if (need > users.size()) {
    throw std::invalid_argument("split_users: requested " + std::to_string(need) + " users, corpus has " +
                                std::to_string(users.size()));
  }
  std::mt19937_64 rng(spec.seed);
  // Explicit Fisher-Yates keeps the shuffle stable across standard libraries.
  for (std::size_t i = users.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(users[i - 1], users[j]);
  }
  UserSplits out;
  std::size_t at = 0;
  out.train.assign(users.begin() + at, users.begin() + at + spec.train);
  at += spec.train;
  out.test.assign(users.begin() + at, users.begin() + at + spec.test);
  at += spec.test;
  out.validation.assign(users.begin() + at, users.begin() + at + spec.validation);
  return out;
}

namespace {

constexpr Scalar kSessionSpacing = 120.0;  // seconds between session starts
constexpr Scalar kIntraNoise = 0.12;       // log-space within-session spread
constexpr Scalar kImuRateHz = 40.0;

struct AxisProfile {
  Scalar amplitude, frequency, phase, offset;
};

}  // namespace

Corpus synthesize(std::size_t users, std::size_t sessions, Scalar theta, std::uint64_t seed) {
  if (users < 2 || sessions < 2) {
    throw std::invalid_argument("synthesize: need at least 2 users and 2 sessions each");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> gauss(0.0, 1.0);
  std::uniform_real_distribution<Scalar> uni(0.0, 1.0);

  Corpus corpus;
  corpus.name = "synthetic";
  corpus.manifest = {"synthetic", true, all_sensors()};

  const Scalar profile_sd = theta * kIntraNoise;
  const Scalar sensor_base[3] = {1.0, 0.5, 30.0};

  for (std::size_t u = 0; u < users; ++u) {
    char uid[16];
    std::snprintf(uid, sizeof(uid), "u%03zu", u);

    const Scalar log_hold = std::log(0.08) + profile_sd * gauss(rng);
    const Scalar log_gap = std::log(0.15) + profile_sd * gauss(rng);
    AxisProfile imu_profile[3][3];
    for (int s = 0; s < 3; ++s)
      for (int a = 0; a < 3; ++a) {
        imu_profile[s][a] = {sensor_base[s] * std::exp(profile_sd * gauss(rng)),
                             0.8 * std::exp(profile_sd * gauss(rng)),
                             2.0 * M_PI * uni(rng),
                             sensor_base[s] * profile_sd * gauss(rng)};
      }

    for (std::size_t sess = 0; sess < sessions; ++sess) {
      char sid[16];
      std::snprintf(sid, sizeof(sid), "s%03zu", sess);
      const Scalar t0 = static_cast<Scalar>(sess) * kSessionSpacing;

      Session session;
      session.keystrokes.user = uid;
      session.keystrokes.session = sid;
      const std::size_t keys = 55 + static_cast<std::size_t>(rng() % 16);
      Scalar t = t0;
      Scalar last_event = t0;
      for (std::size_t k = 0; k < keys; ++k) {
        const Scalar hold = std::exp(log_hold + kIntraNoise * gauss(rng));
        const Scalar gap = std::exp(log_gap + kIntraNoise * gauss(rng));
        KeyEvent ev;
        ev.key_code = 97 + static_cast<int>(rng() % 26);
        ev.press_time = t;
        ev.release_time = t + hold;
        last_event = std::max(last_event, *ev.release_time);
        session.keystrokes.events.push_back(ev);
        t += gap;
      }
      last_event = std::max(last_event, t);

      ImuLog imu;
      imu.user = uid;
      imu.session = sid;
      const Scalar duration = last_event - t0;
      const std::size_t samples = static_cast<std::size_t>(duration * kImuRateHz) + 2;
      for (int s = 0; s < 3; ++s) {
        auto& stream = imu.samples[static_cast<std::size_t>(s)];
        for (std::size_t i = 0; i < samples; ++i) {
          const Scalar ts = t0 + static_cast<Scalar>(i) / kImuRateHz;
          ImuSample sample;
          sample.t = ts;
          Scalar* axes[3] = {&sample.x, &sample.y, &sample.z};
          for (int a = 0; a < 3; ++a) {
            const AxisProfile& p = imu_profile[s][a];
            *axes[a] = p.offset +
                       p.amplitude * std::sin(2.0 * M_PI * p.frequency * (ts - t0) + p.phase) +
                       0.1 * sensor_base[s] * gauss(rng);
          }
          stream.push_back(sample);
        }
      }
      session.imu = std::move(imu);
      corpus.sessions[{uid, sid}] = std::move(session);
    }
  }
  return corpus;
}

}  // namespace bf
