#include "behaveformer/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "behaveformer/checkpoint.hpp"
#include "behaveformer/corpus.hpp"
#include "behaveformer/digest.hpp"
#include "behaveformer/json_io.hpp"
#include "behaveformer/protocol.hpp"
#include "behaveformer/storage.hpp"
#include "behaveformer/training.hpp"

namespace bf {

namespace fs = std::filesystem;

namespace {

std::vector<Sensor> parse_modalities(const std::string& flags) {
  bool k = false;
  std::vector<Sensor> sensors;
  for (char c : flags) {
    switch (std::toupper(static_cast<unsigned char>(c))) {
      case 'K': k = true; break;
      case 'A': sensors.push_back(Sensor::Accelerometer); break;
      case 'G': sensors.push_back(Sensor::Gyroscope); break;
      case 'M': sensors.push_back(Sensor::Magnetometer); break;
      default:
        throw CLI::ValidationError("--modalities", std::string("unknown modality '") + c + "'");
    }
  }
  if (!k) {
    throw CLI::ValidationError("--modalities", "keystroke (K) is the anchor modality and must be present");
  }
  std::sort(sensors.begin(), sensors.end());
  sensors.erase(std::unique(sensors.begin(), sensors.end()), sensors.end());
  return sensors;
}

void apply_tower_overrides(StdatConfig& cfg, const nlohmann::json& j) {
  if (j.contains("gre_components")) cfg.gre_components = j.at("gre_components").get<int>();
  if (j.contains("blocks")) cfg.blocks = j.at("blocks").get<int>();
  if (j.contains("temporal_heads")) cfg.temporal_heads = j.at("temporal_heads").get<int>();
  if (j.contains("channel_heads")) cfg.channel_heads = j.at("channel_heads").get<int>();
  if (j.contains("fnn_hidden")) cfg.fnn_hidden = j.at("fnn_hidden").get<Index>();
  if (j.contains("dropout_rate")) cfg.dropout_rate = j.at("dropout_rate").get<Scalar>();
  if (j.contains("conv_kernels")) cfg.conv_kernels = j.at("conv_kernels").get<std::vector<int>>();
}

/// Tower shapes always come from the feature store; the config file and flags
/// adjust the architecture around them.
BehaveFormerConfig resolve_model_config(const FeatureStore& store, const nlohmann::json& model_json) {
  BehaveFormerConfig cfg;
  cfg.keystroke = store.keystroke_schema == "full-keystroke" ? aalto_keystroke_tower()
                                                             : humidb_keystroke_tower();
  cfg.keystroke.seq_len = store.window;
  cfg.keystroke.channels = store.keystroke_channels();
  if (model_json.contains("keystroke")) apply_tower_overrides(cfg.keystroke, model_json.at("keystroke"));

  const bool dual = !store.sensors.empty() && model_json.value("dual", true);
  if (dual) {
    StdatConfig imu = imu_tower(store.imu_channels());
    if (model_json.contains("imu")) apply_tower_overrides(imu, model_json.at("imu"));
    cfg.imu = imu;
  }
  if (model_json.contains("fused_dim")) cfg.fused_dim = model_json.at("fused_dim").get<Index>();
  cfg.validate();
  return cfg;
}

nlohmann::json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  nlohmann::json j;
  in >> j;
  return j;
}

TrainConfig resolve_train_config(const nlohmann::json& train_json) {
  TrainConfig cfg;
  if (train_json.contains("margin")) cfg.margin = train_json.at("margin").get<Scalar>();
  if (train_json.contains("learning_rate")) cfg.learning_rate = train_json.at("learning_rate").get<Scalar>();
  if (train_json.contains("batch_users")) cfg.batch_users = train_json.at("batch_users").get<int>();
  if (train_json.contains("epochs")) cfg.epochs = train_json.at("epochs").get<int>();
  if (train_json.contains("batches_per_epoch"))
    cfg.batches_per_epoch = train_json.at("batches_per_epoch").get<int>();
  if (train_json.contains("patience")) cfg.patience = train_json.at("patience").get<int>();
  if (train_json.contains("enroll")) cfg.enroll = train_json.at("enroll").get<int>();
  if (train_json.contains("seed")) cfg.seed = train_json.at("seed").get<std::uint64_t>();
  return cfg;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"margin", cfg.margin},
          {"learning_rate", cfg.learning_rate},
          {"batch_users", cfg.batch_users},
          {"epochs", cfg.epochs},
          {"batches_per_epoch", cfg.batches_per_epoch},
          {"patience", cfg.patience},
          {"enroll", cfg.enroll},
          {"seed", cfg.seed},
          {"frozen_prefixes", std::vector<std::string>(cfg.frozen_prefixes.begin(),
                                                       cfg.frozen_prefixes.end())}};
}

struct TrainFlags {
  fs::path features;
  fs::path config_file;
  fs::path out = "out";
  int epochs = -1;
  int batch_users = -1;
  int patience = -1;
  int enroll = -1;
  int batches_per_epoch = -1;
  double lr = -1.0;
  double margin = -1.0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool keystroke_only = false;
  std::vector<std::string> freeze;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool finetune) {
  cmd->add_option("--features", f.features, "feature store directory")->required();
  cmd->add_option("--config", f.config_file, "JSON config file (flags override it)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--batch-users", f.batch_users, "users per batch");
  cmd->add_option("--batches-per-epoch", f.batches_per_epoch, "batches per epoch (0 = auto)");
  cmd->add_option("--patience", f.patience, "early-stop patience on validation EER");
  cmd->add_option("--enroll", f.enroll, "enrollment samples for validation EER");
  cmd->add_option("--lr", f.lr, "learning rate");
  cmd->add_option("--alpha", f.margin, "triplet margin");
  cmd->add_flag("--keystroke-only", f.keystroke_only, "ignore IMU features even if present");
  auto* seed_opt = cmd->add_option("--seed", f.seed, "training seed");
  seed_opt->each([&f](const std::string&) { f.seed_set = true; });
  if (finetune) {
    cmd->add_option("--freeze", f.freeze, "parameter name prefixes to freeze (repeatable)");
  }
}

struct ResolvedTraining {
  FeatureStore store;
  BehaveFormerConfig model_config;
  TrainConfig train_config;
  std::string digest;
};

ResolvedTraining resolve_training(const TrainFlags& f) {
  ResolvedTraining r;
  r.store = load_feature_store(f.features);
  nlohmann::json file_json = nlohmann::json::object();
  if (!f.config_file.empty()) file_json = load_json_file(f.config_file);

  nlohmann::json model_json = file_json.value("model", nlohmann::json::object());
  if (f.keystroke_only) model_json["dual"] = false;
  r.model_config = resolve_model_config(r.store, model_json);

  r.train_config = resolve_train_config(file_json.value("train", nlohmann::json::object()));
  if (f.epochs >= 0) r.train_config.epochs = f.epochs;
  if (f.batch_users >= 0) r.train_config.batch_users = f.batch_users;
  if (f.batches_per_epoch >= 0) r.train_config.batches_per_epoch = f.batches_per_epoch;
  if (f.patience >= 0) r.train_config.patience = f.patience;
  if (f.enroll >= 0) r.train_config.enroll = f.enroll;
  if (f.lr >= 0.0) r.train_config.learning_rate = f.lr;
  if (f.margin >= 0.0) r.train_config.margin = f.margin;
  if (f.seed_set) r.train_config.seed = f.seed;
  for (const std::string& prefix : f.freeze) {
    std::stringstream ss(prefix);
    std::string part;
    while (std::getline(ss, part, ','))
      if (!part.empty()) r.train_config.frozen_prefixes.insert(part);
  }

  nlohmann::json resolved;
  resolved["model"] = r.model_config;
  resolved["train"] = train_config_to_json(r.train_config);
  r.digest = to_hex(fnv1a64(resolved.dump()));
  return r;
}

void finish_training_run(const ResolvedTraining& r, const TrainResult& result,
                         const std::string& command, std::ostream& out, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  Checkpoint ck;
  ck.params = result.params;
  ck.normalizers = r.store.normalizers;
  ck.seed = r.train_config.seed;
  ck.config_digest = r.digest;
  save_checkpoint(ck, out_dir / "checkpoint.ckpt");
  save_history(result.history, out_dir / "history.csv");
  write_run_manifest(out_dir, command, r.train_config.seed, r.digest,
                     {out_dir / "checkpoint.ckpt", out_dir / "history.csv"});
  if (result.history.empty()) {
    out << command << ": wrote initial checkpoint (0 epochs)\n";
  } else {
    out << command << ": best validation EER " << format_number(result.best_val_eer) << " at epoch "
        << result.best_epoch << " (" << result.history.size() << " epochs run)\n";
  }
}

int cmd_synth(std::size_t users, std::size_t sessions, double theta, std::uint64_t seed,
              const fs::path& out_dir, std::ostream& out) {
  Corpus corpus = synthesize(users, sessions, theta, seed);
  save_corpus(corpus, out_dir);
  nlohmann::json cfg{{"users", users}, {"sessions", sessions}, {"theta", theta}, {"seed", seed}};
  std::vector<fs::path> artifacts{out_dir / "manifest.json", out_dir / "keystroke.csv",
                                  out_dir / "imu.csv"};
  write_run_manifest(out_dir, "synth", seed, to_hex(fnv1a64(cfg.dump())), artifacts);
  out << "synth: wrote " << corpus.sessions.size() << " sessions for " << users << " users to "
      << out_dir.string() << "\n";
  return 0;
}

int cmd_extract(const fs::path& corpus_dir, const fs::path& schema_path, Index window,
                const std::string& modalities, const SplitSpec& split, const fs::path& out_dir,
                std::ostream& out) {
  const fs::path manifest_path = schema_path.empty() ? corpus_dir / "manifest.json" : schema_path;
  SchemaManifest manifest = load_manifest(manifest_path);
  LoadReport report;
  Corpus corpus = ingest(corpus_dir, manifest, &report);

  std::vector<Sensor> sensors = parse_modalities(modalities);
  // Restrict to what the dataset actually records.
  std::vector<Sensor> available;
  for (Sensor s : sensors) {
    if (std::find(manifest.sensors.begin(), manifest.sensors.end(), s) != manifest.sensors.end()) {
      available.push_back(s);
    } else {
      throw std::runtime_error(std::string("extract: dataset '") + manifest.name +
                               "' has no " + sensor_name(s) + " data");
    }
  }

  FeatureStore store = extract_features(corpus, split, window, available);
  save_feature_store(store, out_dir);

  nlohmann::json cfg{{"window", window},
                     {"modalities", modalities},
                     {"split", {split.seed, split.train, split.test, split.validation}}};
  std::vector<fs::path> artifacts{out_dir / "features_keystroke.csv", out_dir / "splits.csv",
                                  out_dir / "store.json"};
  if (!store.sensors.empty()) artifacts.push_back(out_dir / "features_imu.csv");
  write_run_manifest(out_dir, "extract", split.seed, to_hex(fnv1a64(cfg.dump())), artifacts);

  out << "extract: " << store.sessions.size() << " sessions, keystroke " << store.window << "x"
      << store.keystroke_channels();
  if (!store.sensors.empty()) out << ", imu " << kImuRows << "x" << store.imu_channels();
  out << ", dropped " << report.sessions_dropped + store.notes.size() << "\n";
  return 0;
}

int cmd_evaluate(const fs::path& ckpt_path, const fs::path& features, int enroll,
                 const fs::path& out_dir, std::ostream& out) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  FeatureStore store = load_feature_store(features);
  if (store.splits.test.size() < 2) {
    throw std::runtime_error("evaluate: need at least 2 test users in the feature store splits");
  }
  ProtocolResult protocol = run_verification_protocol(ck.params, store, store.splits.test, enroll);

  const Scalar threshold = protocol.det.eer_threshold;
  const CaMetrics ca = ca_metrics(protocol.timelines, threshold);
  const Scalar sil = silhouette(protocol.embeddings, protocol.embedding_labels);

  fs::create_directories(out_dir);
  nlohmann::json report{{"eer", protocol.det.eer},
                        {"eer_per_user", per_user_mean_eer(protocol.per_user)},
                        {"eer_threshold", threshold},
                        {"usability", ca.usability},
                        {"tcr_s", ca.tcr_seconds},
                        {"frwi_min", ca.frwi_minutes},
                        {"fawi_min", ca.fawi_minutes},
                        {"silhouette", sil},
                        {"never_rejected_impostors", ca.never_rejected_impostors},
                        {"genuine_scores", protocol.genuine.size()},
                        {"impostor_scores", protocol.impostor.size()},
                        {"enroll", enroll}};
  std::ofstream report_out(out_dir / "report.json");
  report_out << report.dump(2) << "\n";
  report_out.close();
  save_scores(protocol.records, out_dir / "scores.csv");
  save_det_csv(protocol.det, out_dir / "det.csv");
  save_det_svg(protocol.det, out_dir / "det.svg");
  write_run_manifest(out_dir, "evaluate", 0, ck.config_digest,
                     {out_dir / "report.json", out_dir / "scores.csv", out_dir / "det.csv",
                      out_dir / "det.svg"});

  out << "evaluate: eer " << format_number(protocol.det.eer) << ", usability "
      << format_number(ca.usability) << ", tcr " << format_number(ca.tcr_seconds) << "s, frwi "
      << format_number(ca.frwi_minutes) << "min, fawi " << format_number(ca.fawi_minutes)
      << "min, silhouette " << format_number(sil) << "\n";
  return 0;
}

int cmd_det(const fs::path& scores_path, const fs::path& out_dir, std::ostream& out) {
  const std::vector<ScoreRecord> records = load_scores(scores_path);
  std::vector<Scalar> genuine, impostor;
  for (const ScoreRecord& r : records) {
    (r.label == SampleLabel::Genuine ? genuine : impostor).push_back(r.score);
  }
  DetCurve det = compute_det(genuine, impostor);
  fs::create_directories(out_dir);
  save_det_csv(det, out_dir / "det.csv");
  save_det_svg(det, out_dir / "det.svg");
  write_run_manifest(out_dir, "det", 0, to_hex(fnv1a64(scores_path.string())),
                     {out_dir / "det.csv", out_dir / "det.svg"});
  out << "det: eer " << format_number(det.eer) << " at threshold "
      << format_number(det.eer_threshold) << "\n";
  return 0;
}

int cmd_embed(const fs::path& ckpt_path, const fs::path& features, const fs::path& out_dir,
              std::ostream& out) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  FeatureStore store = load_feature_store(features);
  const bool dual = ck.params.imu.has_value();
  if (dual && store.sensors.empty()) {
    throw std::runtime_error("embed: model expects IMU features the store does not carry");
  }
  fs::create_directories(out_dir);
  std::ofstream csv(out_dir / "embeddings.csv");
  csv << "user,session";
  const Index dim = ck.params.imu ? ck.params.config.fused_dim : kEmbeddingDim;
  for (Index i = 0; i < dim; ++i) csv << ",e" << i;
  csv << "\n";
  for (const SessionFeatures& s : store.sessions) {
    const Vector e = embed_sequence(ck.params, s.keystroke, dual ? &s.imu.value() : nullptr);
    csv << s.user << ',' << s.session;
    for (Index i = 0; i < e.size(); ++i) csv << ',' << format_number(e(i));
    csv << "\n";
  }
  csv.close();
  write_run_manifest(out_dir, "embed", 0, ck.config_digest, {out_dir / "embeddings.csv"});
  out << "embed: wrote " << store.sessions.size() << " embeddings of dimension " << dim << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"behavioural continuous-authentication pipeline"};
  app.require_subcommand(1);

  // synth
  std::size_t users = 8, sessions = 4;
  double theta = 5.0;
  std::uint64_t synth_seed = 0;
  fs::path synth_out = "corpus";
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic behavioural corpus");
  synth_cmd->add_option("--users", users, "number of users");
  synth_cmd->add_option("--sessions", sessions, "sessions per user");
  synth_cmd->add_option("--theta", theta, "inter-user separability factor");
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--out", synth_out, "output corpus directory");

  // extract
  fs::path corpus_dir, schema_path, extract_out = "features";
  Index window = kDefaultKeystrokeWindow;
  std::string modalities = "KAGM";
  SplitSpec split;
  CLI::App* extract_cmd = app.add_subcommand("extract", "extract normalized feature sequences");
  extract_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  extract_cmd->add_option("--schema", schema_path, "schema manifest (default: corpus manifest.json)");
  extract_cmd->add_option("--window", window, "keystroke window length N");
  extract_cmd->add_option("--modalities", modalities, "modality flags, subset of KAGM (K required)");
  extract_cmd->add_option("--split-seed", split.seed, "user split seed");
  extract_cmd->add_option("--train-users", split.train, "training user count")->required();
  extract_cmd->add_option("--test-users", split.test, "test user count")->required();
  extract_cmd->add_option("--val-users", split.validation, "validation user count")->required();
  extract_cmd->add_option("--out", extract_out, "feature store directory");

  // train / finetune
  TrainFlags train_flags, ft_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model with triplet loss");
  add_train_flags(train_cmd, train_flags, false);
  CLI::App* ft_cmd = app.add_subcommand("finetune", "continue training from a checkpoint");
  fs::path ft_checkpoint;
  ft_cmd->add_option("--checkpoint", ft_checkpoint, "pretrained checkpoint")->required();
  add_train_flags(ft_cmd, ft_flags, true);

  // evaluate
  fs::path eval_ckpt, eval_features, eval_out = "eval";
  int eval_enroll = 5;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "enrollment-verification evaluation");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--features", eval_features, "feature store directory")->required();
  eval_cmd->add_option("--enroll", eval_enroll, "enrollment samples per test user");
  eval_cmd->add_option("--out", eval_out, "output directory");

  // det
  fs::path det_scores, det_out = "det";
  CLI::App* det_cmd = app.add_subcommand("det", "DET curve and EER from a score file");
  det_cmd->add_option("--scores", det_scores, "scores.csv with user,label,score rows")->required();
  det_cmd->add_option("--out", det_out, "output directory");

  // embed
  fs::path embed_ckpt, embed_features, embed_out = "embeddings";
  CLI::App* embed_cmd = app.add_subcommand("embed", "write session embeddings");
  embed_cmd->add_option("--checkpoint", embed_ckpt, "model checkpoint")->required();
  embed_cmd->add_option("--features", embed_features, "feature store directory")->required();
  embed_cmd->add_option("--out", embed_out, "output directory");

  std::vector<char*> argv;
  std::vector<std::string> owned{"behave"};
  owned.insert(owned.end(), args.begin(), args.end());
  for (std::string& s : owned) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
  }

  try {
    if (*synth_cmd) return cmd_synth(users, sessions, theta, synth_seed, synth_out, out);
    if (*extract_cmd)
      return cmd_extract(corpus_dir, schema_path, window, modalities, split, extract_out, out);
    if (*train_cmd) {
      ResolvedTraining r = resolve_training(train_flags);
      BehaveFormerParams params = init_behaveformer(r.model_config, r.train_config.seed);
      TrainResult result = train(params, r.store, r.train_config);
      finish_training_run(r, result, "train", out, train_flags.out);
      return 0;
    }
    if (*ft_cmd) {
      ResolvedTraining r = resolve_training(ft_flags);
      Checkpoint ck = load_checkpoint(ft_checkpoint);
      TrainResult result = fine_tune(ck, r.store, r.train_config);
      finish_training_run(r, result, "finetune", out, ft_flags.out);
      return 0;
    }
    if (*eval_cmd) return cmd_evaluate(eval_ckpt, eval_features, eval_enroll, eval_out, out);
    if (*det_cmd) return cmd_det(det_scores, det_out, out);
    if (*embed_cmd) return cmd_embed(embed_ckpt, embed_features, embed_out, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 1;
}

}  // namespace bf
