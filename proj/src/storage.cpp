#include "behaveformer/storage.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "behaveformer/digest.hpp"
#include "behaveformer/json_io.hpp"

namespace bf {

std::string format_number(Scalar v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Index FeatureStore::keystroke_channels() const {
  return keystroke_schema == "full-keystroke" ? 10 : 3;
}

std::vector<const SessionFeatures*> FeatureStore::of_user(const std::string& user) const {
  std::vector<const SessionFeatures*> out;
  for (const SessionFeatures& s : sessions)
    if (s.user == user) out.push_back(&s);
  return out;
}

namespace {

// Keystroke channels are seconds or already in [0,1]; their normalizer is a
// pure pass-through and needs no fitting data.
NormalizerState passthrough_normalizer(const std::string& schema) {
  NormalizerState st;
  st.schema = schema;
  st.passthrough = true;
  st.fitted = true;
  st.range_lo = 0.0;
  st.range_hi = 1.0;
  return st;
}

}  // namespace

FeatureStore extract_features(const Corpus& corpus, const SplitSpec& split, Index window,
                              const std::vector<Sensor>& sensors) {
  for (Sensor s : sensors) {
    if (std::find(corpus.manifest.sensors.begin(), corpus.manifest.sensors.end(), s) ==
        corpus.manifest.sensors.end()) {
      throw std::invalid_argument(std::string("extract_features: sensor ") + sensor_name(s) +
                                  " is not available in dataset '" + corpus.name + "'");
    }
  }

  FeatureStore store;
  store.dataset = corpus.name;
  store.window = window;
  store.sensors = sensors;
  const FeatureSchema key_schema = corpus.manifest.keystroke_schema();
  store.keystroke_schema = key_schema.name;
  store.splits = split_users(corpus, split);

  for (const auto& [key, session] : corpus.sessions) {
    SessionFeatures out;
    out.user = key.first;
    out.session = key.second;
    const EventLog& log = session.keystrokes;
    if (log.events.empty()) continue;

    Scalar t_first = log.events.front().press_time;
    Scalar t_last = t_first;
    for (const KeyEvent& e : log.events) {
      t_last = std::max(t_last, e.press_time);
      if (e.release_time) t_last = std::max(t_last, *e.release_time);
    }
    out.end_time = t_last;
    out.keystroke = extract_keystroke_features(log, key_schema, window).values;

    if (!sensors.empty()) {
      if (!session.imu) {
        store.notes.push_back("dropped session " + key.second + " of user " + key.first +
                              ": no IMU log");
        continue;
      }
      try {
        const auto resampled = synchronize_resample(*session.imu, t_first, t_last, sensors);
        out.imu = extract_imu_features(resampled, sensors).values;
      } catch (const std::runtime_error& e) {
        store.notes.push_back("dropped session " + key.second + " of user " + key.first + ": " +
                              e.what());
        continue;
      }
    }
    store.sessions.push_back(std::move(out));
  }
  if (store.sessions.empty()) {
    throw std::runtime_error("extract_features: no sessions survived extraction");
  }

  // Normalizers are fitted on the training split only, then applied everywhere.
  store.normalizers[key_schema.name] = passthrough_normalizer(key_schema.name);
  if (!sensors.empty()) {
    const FeatureSchema imu_sch = imu_schema(sensors);
    std::vector<FeatureSequence> train_seqs;
    for (const SessionFeatures& s : store.sessions) {
      if (std::find(store.splits.train.begin(), store.splits.train.end(), s.user) ==
          store.splits.train.end())
        continue;
      if (s.imu) train_seqs.push_back({*s.imu, imu_sch.name, s.user, s.session});
    }
    if (train_seqs.empty()) {
      throw std::runtime_error("extract_features: no training-split IMU sequences to fit on");
    }
    NormalizerState norm = fit_normalizer(train_seqs, imu_sch);
    for (SessionFeatures& s : store.sessions) {
      if (s.imu) s.imu = apply_normalizer(norm, {*s.imu, imu_sch.name, s.user, s.session}).values;
    }
    store.normalizers[imu_sch.name] = std::move(norm);
  }
  return store;
}

namespace {

void write_feature_csv(const std::filesystem::path& path, const std::string& dataset,
                       const std::string& schema, Index window,
                       const std::vector<SessionFeatures>& sessions, bool imu) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_feature_store: cannot write " + path.string());
  out << "# dataset=" << dataset << " schema=" << schema << " window=" << window << "\n";
  out << "user,session,end_time,row,values...\n";
  for (const SessionFeatures& s : sessions) {
    if (imu && !s.imu) continue;
    const Matrix& m = imu ? *s.imu : s.keystroke;
    for (Index i = 0; i < m.rows(); ++i) {
      out << s.user << ',' << s.session << ',' << format_number(s.end_time) << ',' << i;
      for (Index j = 0; j < m.cols(); ++j) out << ',' << format_number(m(i, j));
      out << '\n';
    }
  }
}

struct ParsedFeatures {
  std::map<std::pair<std::string, std::string>, std::pair<Scalar, std::vector<std::vector<Scalar>>>> rows;
};

ParsedFeatures read_feature_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_feature_store: cannot open " + path.string());
  ParsedFeatures parsed;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.rfind("user,", 0) == 0) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() < 5) {
      throw std::runtime_error(path.filename().string() + ":" + std::to_string(line_no) +
                               ": malformed feature row");
    }
    auto& entry = parsed.rows[{fields[0], fields[1]}];
    entry.first = std::stod(fields[2]);
    std::vector<Scalar> values;
    for (std::size_t i = 4; i < fields.size(); ++i) values.push_back(std::stod(fields[i]));
    entry.second.push_back(std::move(values));
  }
  return parsed;
}

Matrix rows_to_matrix(const std::vector<std::vector<Scalar>>& rows) {
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

}  // namespace

void save_feature_store(const FeatureStore& store, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_feature_csv(dir / "features_keystroke.csv", store.dataset, store.keystroke_schema,
                    store.window, store.sessions, false);
  if (!store.sensors.empty()) {
    write_feature_csv(dir / "features_imu.csv", store.dataset, "imu", kImuRows, store.sessions, true);
  }

  std::ofstream splits(dir / "splits.csv");
  if (!splits) throw std::runtime_error("save_feature_store: cannot write splits.csv");
  splits << "user_id,split\n";
  for (const std::string& u : store.splits.train) splits << u << ",train\n";
  for (const std::string& u : store.splits.test) splits << u << ",test\n";
  for (const std::string& u : store.splits.validation) splits << u << ",validation\n";

  nlohmann::json meta;
  meta["dataset"] = store.dataset;
  meta["keystroke_schema"] = store.keystroke_schema;
  meta["window"] = store.window;
  auto sensors = nlohmann::json::array();
  for (Sensor s : store.sensors) sensors.push_back(sensor_name(s));
  meta["sensors"] = sensors;
  meta["normalizers"] = store.normalizers;
  meta["notes"] = store.notes;
  std::ofstream meta_out(dir / "store.json");
  if (!meta_out) throw std::runtime_error("save_feature_store: cannot write store.json");
  meta_out << meta.dump(2) << "\n";
}

FeatureStore load_feature_store(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "store.json");
  if (!meta_in) throw std::runtime_error("load_feature_store: cannot open " + (dir / "store.json").string());
  nlohmann::json meta;
  meta_in >> meta;

  FeatureStore store;
  store.dataset = meta.at("dataset").get<std::string>();
  store.keystroke_schema = meta.at("keystroke_schema").get<std::string>();
  store.window = meta.at("window").get<Index>();
  for (const auto& s : meta.at("sensors")) {
    const auto sensor = sensor_from_name(s.get<std::string>());
    if (!sensor) throw std::runtime_error("load_feature_store: unknown sensor in store.json");
    store.sensors.push_back(*sensor);
  }
  store.normalizers = meta.at("normalizers").get<std::map<std::string, NormalizerState>>();
  if (meta.contains("notes")) store.notes = meta.at("notes").get<std::vector<std::string>>();

  ParsedFeatures keys = read_feature_csv(dir / "features_keystroke.csv");
  ParsedFeatures imu;
  if (!store.sensors.empty()) imu = read_feature_csv(dir / "features_imu.csv");

  for (const auto& [id, entry] : keys.rows) {
    SessionFeatures s;
    s.user = id.first;
    s.session = id.second;
    s.end_time = entry.first;
    s.keystroke = rows_to_matrix(entry.second);
    if (!store.sensors.empty()) {
      const auto it = imu.rows.find(id);
      if (it == imu.rows.end()) {
        throw std::runtime_error("load_feature_store: session " + id.second + " of user " + id.first +
                                 " lacks IMU features");
      }
      s.imu = rows_to_matrix(it->second.second);
    }
    store.sessions.push_back(std::move(s));
  }
  if (store.sessions.empty()) throw std::runtime_error("load_feature_store: empty feature store");

  std::ifstream splits_in(dir / "splits.csv");
  if (!splits_in) throw std::runtime_error("load_feature_store: cannot open splits.csv");
  std::string line;
  while (std::getline(splits_in, line)) {
    if (line.empty() || line == "user_id,split") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("load_feature_store: malformed splits.csv");
    const std::string user = line.substr(0, comma);
    const std::string split = line.substr(comma + 1);
    if (split == "train")
      store.splits.train.push_back(user);
    else if (split == "test")
      store.splits.test.push_back(user);
    else if (split == "validation")
      store.splits.validation.push_back(user);
    else
      throw std::runtime_error("load_feature_store: unknown split '" + split + "'");
  }
  return store;
}

void save_scores(const std::vector<ScoreRecord>& scores, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_scores: cannot write " + path.string());
  out << "user,label,score\n";
  for (const ScoreRecord& r : scores) {
    out << r.user << ',' << (r.label == SampleLabel::Genuine ? "genuine" : "impostor") << ','
        << format_number(r.score) << '\n';
  }
}

std::vector<ScoreRecord> load_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_scores: cannot open " + path.string());
  std::vector<ScoreRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "user,label,score") continue;
    std::stringstream ss(line);
    std::string user, label, score;
    if (!std::getline(ss, user, ',') || !std::getline(ss, label, ',') || !std::getline(ss, score)) {
      throw std::runtime_error(path.filename().string() + ":" + std::to_string(line_no) +
                               ": malformed score row");
    }
    if (label != "genuine" && label != "impostor") {
      throw std::runtime_error(path.filename().string() + ":" + std::to_string(line_no) +
                               ": unknown label '" + label + "'");
    }
    out.push_back({user, label == "genuine" ? SampleLabel::Genuine : SampleLabel::Impostor,
                   std::stod(score)});
  }
  if (out.empty()) throw std::runtime_error("load_scores: no scores in " + path.string());
  return out;
}

void save_det_csv(const DetCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_det_csv: cannot write " + path.string());
  out << "threshold,far,frr\n";
  for (const DetPoint& p : curve.points) {
    out << format_number(p.threshold) << ',' << format_number(p.far) << ',' << format_number(p.frr)
        << '\n';
  }
}

void save_det_svg(const DetCurve& curve, const std::filesystem::path& path) {
  const int size = 440, margin = 50, plot = size - 2 * margin;
  const auto x_of = [&](Scalar far) { return margin + far * plot; };
  const auto y_of = [&](Scalar frr) { return size - margin - frr * plot; };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_det_svg: cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
  out << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "  <line x1=\"" << margin << "\" y1=\"" << size - margin << "\" x2=\"" << size - margin
      << "\" y2=\"" << size - margin << "\" stroke=\"black\"/>\n";
  out << "  <line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
      << size - margin << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const Scalar f = tick / 4.0;
    out << "  <text x=\"" << x_of(f) - 8 << "\" y=\"" << size - margin + 18
        << "\" font-size=\"11\">" << f << "</text>\n";
    out << "  <text x=\"" << margin - 32 << "\" y=\"" << y_of(f) + 4 << "\" font-size=\"11\">" << f
        << "</text>\n";
  }
  out << "  <text x=\"" << size / 2 - 60 << "\" y=\"" << size - 10
      << "\" font-size=\"12\">false accept rate</text>\n";
  out << "  <text x=\"14\" y=\"" << size / 2 + 50
      << "\" font-size=\"12\" transform=\"rotate(-90 14 " << size / 2 + 50
      << ")\">false reject rate</text>\n";

  out << "  <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
  for (const DetPoint& p : curve.points) out << x_of(p.far) << ',' << y_of(p.frr) << ' ';
  out << "\"/>\n";
  out << "  <circle cx=\"" << x_of(curve.eer) << "\" cy=\"" << y_of(curve.eer)
      << "\" r=\"4\" fill=\"crimson\"/>\n";
  out << "  <text x=\"" << x_of(curve.eer) + 8 << "\" y=\"" << y_of(curve.eer) - 6
      << "\" font-size=\"11\">EER " << format_number(curve.eer) << "</text>\n";
  out << "</svg>\n";
}

void write_run_manifest(const std::filesystem::path& dir, const std::string& command,
                        std::uint64_t seed, const std::string& config_digest,
                        const std::vector<std::filesystem::path>& artifacts) {
  nlohmann::json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config_digest"] = config_digest;
  nlohmann::json hashes = nlohmann::json::object();
  for (const auto& a : artifacts) {
    std::ifstream in(a, std::ios::binary);
    if (!in) throw std::runtime_error("write_run_manifest: missing artifact " + a.string());
    const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    hashes[a.filename().string()] = to_hex(fnv1a64(data.data(), data.size()));
  }
  j["artifacts"] = hashes;
  std::ofstream out(dir / "run_manifest.json");
  if (!out) throw std::runtime_error("write_run_manifest: cannot write run_manifest.json");
  out << j.dump(2) << "\n";
}

}  // namespace bf
