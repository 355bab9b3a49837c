#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "behaveformer/checkpoint.hpp"
#include "behaveformer/cli.hpp"
#include "behaveformer/storage.hpp"

using namespace bf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("bf_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_tiny_config(const fs::path& p) {
  std::ofstream out(p);
  out << R"({
    "model": {
      "keystroke": {"blocks": 1, "gre_components": 4, "fnn_hidden": 32},
      "imu": {"blocks": 1, "gre_components": 4, "fnn_hidden": 32}
    },
    "train": {"batch_users": 8, "enroll": 2, "patience": 10}
  })";
}

}  // namespace

TEST_CASE("unknown subcommands fail with usage, help succeeds") {
  CliResult bad = run({"frobnicate"});
  CHECK(bad.code != 0);
  CHECK(bad.err.find("Usage") != std::string::npos);

  CliResult help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("synth") != std::string::npos);
  CHECK(help.out.find("evaluate") != std::string::npos);

  CliResult none = run({});
  CHECK(none.code != 0);
}

TEST_CASE("modality flags must include keystroke and known letters") {
  TempDir dir;
  CliResult r = run({"synth", "--users", "4", "--sessions", "3", "--seed", "1", "--out",
                     (dir.path / "corpus").string()});
  REQUIRE(r.code == 0);
  CliResult no_k = run({"extract", "--corpus", (dir.path / "corpus").string(), "--modalities", "AG",
                        "--train-users", "2", "--test-users", "0", "--val-users", "2", "--out",
                        (dir.path / "f").string()});
  CHECK(no_k.code != 0);
  CliResult bogus = run({"extract", "--corpus", (dir.path / "corpus").string(), "--modalities",
                         "KX", "--train-users", "2", "--test-users", "0", "--val-users", "2",
                         "--out", (dir.path / "f").string()});
  CHECK(bogus.code != 0);
}

TEST_CASE("smoke pipeline: synth, extract, train, evaluate, det, embed") {
  TempDir dir;
  const fs::path corpus = dir.path / "corpus";
  const fs::path features = dir.path / "features";
  const fs::path model = dir.path / "model";
  const fs::path eval = dir.path / "eval";
  const fs::path cfg = dir.path / "config.json";
  write_tiny_config(cfg);

  REQUIRE(run({"synth", "--users", "8", "--sessions", "4", "--theta", "5", "--seed", "3", "--out",
               corpus.string()})
              .code == 0);
  CHECK(fs::exists(corpus / "keystroke.csv"));
  CHECK(fs::exists(corpus / "imu.csv"));
  CHECK(fs::exists(corpus / "run_manifest.json"));

  REQUIRE(run({"extract", "--corpus", corpus.string(), "--modalities", "K", "--split-seed", "5",
               "--train-users", "4", "--test-users", "2", "--val-users", "2", "--out",
               features.string()})
              .code == 0);
  CHECK(fs::exists(features / "features_keystroke.csv"));
  CHECK(fs::exists(features / "splits.csv"));

  CliResult trained = run({"train", "--features", features.string(), "--config", cfg.string(),
                           "--epochs", "5", "--seed", "9", "--out", model.string()});
  REQUIRE(trained.code == 0);
  CHECK(fs::exists(model / "checkpoint.ckpt"));
  CHECK(fs::exists(model / "history.csv"));
  CHECK(slurp(model / "history.csv").rfind("epoch,train_loss,val_eer", 0) == 0);

  CliResult evaluated = run({"evaluate", "--checkpoint", (model / "checkpoint.ckpt").string(),
                             "--features", features.string(), "--enroll", "2", "--out",
                             eval.string()});
  REQUIRE(evaluated.code == 0);
  const nlohmann::json report = nlohmann::json::parse(slurp(eval / "report.json"));
  for (const char* key : {"eer", "usability", "tcr_s", "frwi_min", "fawi_min", "silhouette"}) {
    CHECK(report.contains(key));
  }
  CHECK(fs::exists(eval / "det.csv"));
  CHECK(fs::exists(eval / "det.svg"));
  CHECK(slurp(eval / "det.csv").rfind("threshold,far,frr", 0) == 0);

  CliResult det = run({"det", "--scores", (eval / "scores.csv").string(), "--out",
                       (dir.path / "det").string()});
  REQUIRE(det.code == 0);
  CHECK(det.out.find("eer") != std::string::npos);

  CliResult embedded = run({"embed", "--checkpoint", (model / "checkpoint.ckpt").string(),
                            "--features", features.string(), "--out", (dir.path / "emb").string()});
  REQUIRE(embedded.code == 0);
  const std::string emb = slurp(dir.path / "emb" / "embeddings.csv");
  CHECK(emb.rfind("user,session,e0", 0) == 0);
  CHECK(emb.find(",e63") != std::string::npos);
}

TEST_CASE("identical seeds and configs give byte-identical artifacts") {
  TempDir dir;
  const fs::path corpus = dir.path / "corpus";
  const fs::path features = dir.path / "features";
  const fs::path cfg = dir.path / "config.json";
  write_tiny_config(cfg);
  REQUIRE(run({"synth", "--users", "6", "--sessions", "4", "--theta", "4", "--seed", "2", "--out",
               corpus.string()})
              .code == 0);
  REQUIRE(run({"extract", "--corpus", corpus.string(), "--modalities", "K", "--train-users", "2",
               "--test-users", "2", "--val-users", "2", "--out", features.string()})
              .code == 0);

  for (const char* tag : {"a", "b"}) {
    REQUIRE(run({"train", "--features", features.string(), "--config", cfg.string(), "--epochs",
                 "2", "--seed", "4", "--out", (dir.path / tag).string()})
                .code == 0);
    REQUIRE(run({"evaluate", "--checkpoint", (dir.path / tag / "checkpoint.ckpt").string(),
                 "--features", features.string(), "--enroll", "2", "--out",
                 (dir.path / tag / "eval").string()})
                .code == 0);
  }
  CHECK(slurp(dir.path / "a" / "history.csv") == slurp(dir.path / "b" / "history.csv"));
  CHECK(slurp(dir.path / "a" / "checkpoint.ckpt") == slurp(dir.path / "b" / "checkpoint.ckpt"));
  CHECK(slurp(dir.path / "a" / "eval" / "report.json") == slurp(dir.path / "b" / "eval" / "report.json"));
}

TEST_CASE("ablation flags resize the IMU features and the model input") {
  TempDir dir;
  const fs::path corpus = dir.path / "corpus";
  REQUIRE(run({"synth", "--users", "4", "--sessions", "3", "--theta", "3", "--seed", "6", "--out",
               corpus.string()})
              .code == 0);

  const std::vector<std::pair<std::string, Index>> combos{{"KA", 12}, {"KAG", 24}, {"KAGM", 36}};
  for (const auto& [flags, width] : combos) {
    const fs::path features = dir.path / ("f_" + flags);
    REQUIRE(run({"extract", "--corpus", corpus.string(), "--modalities", flags, "--train-users",
                 "2", "--test-users", "0", "--val-users", "2", "--out", features.string()})
                .code == 0);
    FeatureStore store = load_feature_store(features);
    CHECK(store.imu_channels() == width);
    REQUIRE(store.sessions.front().imu.has_value());
    CHECK(store.sessions.front().imu->cols() == width);

    // A zero-epoch train builds the model around the store shape.
    const fs::path model = dir.path / ("m_" + flags);
    REQUIRE(run({"train", "--features", features.string(), "--epochs", "0", "--out",
                 model.string()})
                .code == 0);
    Checkpoint ck = load_checkpoint(model / "checkpoint.ckpt");
    REQUIRE(ck.params.config.imu.has_value());
    CHECK(ck.params.config.imu->channels == width);
  }
}
