#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "behaveformer/corpus.hpp"
#include "behaveformer/protocol.hpp"
#include "behaveformer/training.hpp"
#include "testutil.hpp"

using namespace bf;
using bftest::random_matrix;

namespace {

BehaveFormerConfig mini_keystroke_config() {
  StdatConfig k;
  k.seq_len = 50;
  k.channels = 10;
  k.gre_components = 4;
  k.blocks = 1;
  k.temporal_heads = 5;
  k.channel_heads = 10;
  k.fnn_hidden = 32;
  BehaveFormerConfig c;
  c.keystroke = k;
  return c;
}

FeatureStore mini_store(std::size_t users, std::size_t sessions, Scalar theta, std::uint64_t seed,
                        std::size_t train, std::size_t test, std::size_t val) {
  Corpus corpus = synthesize(users, sessions, theta, seed);
  return extract_features(corpus, {seed, train, test, val}, 50, {});
}

}  // namespace

TEST_CASE("triplet loss matches its closed form") {
  Vector a = (Vector(2) << 0.0, 0.0).finished();
  Vector n = (Vector(2) << 1.0, 0.0).finished();
  // Anchor equals positive and the negative sits exactly at the margin.
  CHECK(triplet_loss_value(a, a, n, 1.0) == 0.0);
  // Fully degenerate triplet collapses to the margin.
  CHECK(triplet_loss_value(a, a, a, 1.0) == 1.0);

  Vector p2 = (Vector(1) << 2.0).finished();
  Vector n2 = (Vector(1) << 0.5).finished();
  Vector a2 = (Vector(1) << 0.0).finished();
  CHECK(triplet_loss_value(a2, p2, n2, 1.0) == doctest::Approx(2.5));

  CHECK_THROWS_AS(triplet_loss_value(a, a, a, 0.0), std::invalid_argument);
}

TEST_CASE("triplet loss is nonnegative and rigid-motion invariant") {
  std::mt19937_64 rng(1);
  Matrix q = Eigen::HouseholderQR<Matrix>(random_matrix(5, 5, rng)).householderQ();
  for (int trial = 0; trial < 50; ++trial) {
    Vector a = random_matrix(5, 1, rng), p = random_matrix(5, 1, rng), n = random_matrix(5, 1, rng);
    const Scalar base = triplet_loss_value(a, p, n, 1.0);
    CHECK(base >= 0.0);
    CHECK(std::abs(triplet_loss_value(Vector(q * a), Vector(q * p), Vector(q * n), 1.0) - base) <
          1e-9);
  }
}

TEST_CASE("triplet loss gradient matches finite differences away from the hinge") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a = random_matrix(4, 1, rng), p = random_matrix(4, 1, rng), n = random_matrix(4, 1, rng);
    const Scalar margin = 1.0;
    const Scalar value = triplet_loss_value(a, p, n, margin);
    if (std::abs(value) < 1e-3 || std::abs((a - p).norm() - (a - n).norm() + margin) < 1e-3) {
      continue;  // too close to the hinge for central differences
    }
    auto loss_fn = [&] { return triplet_loss_value(a, p, n, margin); };
    Graph g(Mode::Train);
    Var va = g.param(a), vp = g.param(p), vn = g.param(n);
    Var loss = triplet_loss(g, va, vp, vn, margin);
    g.backward(loss);
    CHECK(bftest::check_gradients({&a, &p, &n}, loss_fn, {g.grad(va), g.grad(vp), g.grad(vn)}) ==
          "");
  }
}

TEST_CASE("triplet sampling needs two eligible users") {
  FeatureStore store = mini_store(2, 3, 2.0, 3, 2, 0, 0);
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(sample_triplets(store, {store.splits.train[0]}, 4, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_triplets(store, {}, 4, rng), std::invalid_argument);
}

TEST_CASE("anchor/positive pairs enumerate both ordered pairs of a 2-session user") {
  FeatureStore store = mini_store(2, 2, 2.0, 4, 2, 0, 0);
  std::mt19937_64 rng(7);
  std::set<std::pair<const SessionFeatures*, const SessionFeatures*>> seen;
  for (int i = 0; i < 200; ++i) {
    for (const Triplet& t : sample_triplets(store, store.splits.train, 2, rng)) {
      CHECK(t.anchor->user == t.positive->user);
      CHECK(t.anchor->user != t.negative->user);
      CHECK(t.anchor != t.positive);
      if (t.anchor->user == store.splits.train[0]) seen.insert({t.anchor, t.positive});
    }
  }
  // Two sessions yield exactly the two ordered anchor/positive pairs.
  CHECK(seen.size() == 2);
}

TEST_CASE("triplet sampling is reproducible under a fixed seed") {
  FeatureStore store = mini_store(6, 3, 2.0, 5, 6, 0, 0);
  std::mt19937_64 r1(99), r2(99);
  for (int round = 0; round < 5; ++round) {
    auto a = sample_triplets(store, store.splits.train, 4, r1);
    auto b = sample_triplets(store, store.splits.train, 4, r2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].anchor == b[i].anchor);
      CHECK(a[i].positive == b[i].positive);
      CHECK(a[i].negative == b[i].negative);
    }
  }
}

TEST_CASE("zero-epoch training returns the initial parameters") {
  FeatureStore store = mini_store(6, 3, 2.0, 6, 4, 0, 2);
  BehaveFormerParams params = init_behaveformer(mini_keystroke_config(), 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  TrainResult result = train(params, store, cfg);
  CHECK(result.history.empty());
  bool identical = true;
  visit_params(params, [&](const std::string& name, Matrix& m, ParamKind) {
    Matrix* other = nullptr;
    visit_params(result.params, [&](const std::string& n2, Matrix& m2, ParamKind) {
      if (n2 == name) other = &m2;
    });
    identical = identical && other != nullptr && (m - *other).cwiseAbs().maxCoeff() == 0.0;
  });
  CHECK(identical);
}

TEST_CASE("training defaults follow the published optimizer settings") {
  TrainConfig cfg;
  CHECK(cfg.learning_rate == 0.001);
  CHECK(cfg.margin == 1.0);
}

TEST_CASE("training separates a synthetic corpus and is seed-reproducible") {
  FeatureStore store = mini_store(12, 6, 5.0, 42, 8, 0, 4);
  BehaveFormerParams params = init_behaveformer(mini_keystroke_config(), 7);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_users = 8;
  cfg.enroll = 2;
  cfg.patience = 30;
  cfg.seed = 11;

  TrainResult result = train(params, store, cfg);
  REQUIRE(!result.history.empty());
  CHECK(result.history.back().train_loss < result.history.front().train_loss);
  CHECK(result.best_val_eer < 0.10);

  // Identical config and seed reproduce the loss history exactly.
  TrainResult again = train(params, store, cfg);
  REQUIRE(again.history.size() == result.history.size());
  for (std::size_t i = 0; i < result.history.size(); ++i) {
    CHECK(again.history[i].train_loss == result.history[i].train_loss);
    CHECK(again.history[i].val_eer == result.history[i].val_eer);
  }
}

TEST_CASE("fine-tuning validates the checkpoint against the feature store") {
  FeatureStore humidb_like;
  humidb_like.dataset = "target";
  humidb_like.keystroke_schema = "humidb-keystroke";  // 3 channels
  humidb_like.window = 50;

  BehaveFormerParams pretrained = init_behaveformer(mini_keystroke_config(), 3);  // 10 channels
  Checkpoint ck{kCheckpointVersion, pretrained, {}, 0, ""};
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_WITH_AS(fine_tune(ck, humidb_like, cfg), doctest::Contains("keystroke tower"),
                       std::invalid_argument);

  FeatureStore store = mini_store(4, 3, 2.0, 8, 2, 0, 2);
  TrainResult result = fine_tune(ck, store, cfg);  // epochs=0: passthrough
  bool identical = true;
  visit_params(ck.params, [&](const std::string& name, Matrix& m, ParamKind) {
    visit_params(result.params, [&](const std::string& n2, Matrix& m2, ParamKind) {
      if (n2 == name) identical = identical && (m - m2).cwiseAbs().maxCoeff() == 0.0;
    });
  });
  CHECK(identical);
}

TEST_CASE("frozen prefixes keep their parameters fixed during training") {
  FeatureStore store = mini_store(6, 3, 3.0, 9, 4, 0, 2);
  BehaveFormerParams params = init_behaveformer(mini_keystroke_config(), 5);
  const Matrix gre_before = params.keystroke.gre.range_embed;
  const Matrix fnn_before = params.keystroke.fnn_w1;

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_users = 4;
  cfg.enroll = 1;
  cfg.frozen_prefixes = {"keystroke.gre"};
  TrainResult result = train(params, store, cfg);

  CHECK((result.params.keystroke.gre.range_embed - gre_before).cwiseAbs().maxCoeff() == 0.0);
  CHECK((result.params.keystroke.fnn_w1 - fnn_before).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("verification protocol pools scores and timelines per claimed identity") {
  FeatureStore store = mini_store(5, 4, 3.0, 10, 0, 3, 2);
  BehaveFormerParams params = init_behaveformer(mini_keystroke_config(), 2);
  ProtocolResult result = run_verification_protocol(params, store, store.splits.test, 2);

  const std::size_t users = 3, verif = 2;  // 4 sessions, 2 enrolled
  CHECK(result.genuine.size() == users * verif);
  CHECK(result.impostor.size() == users * (users - 1) * verif);
  CHECK(result.timelines.size() == users * users);
  CHECK(result.embeddings.size() == users * verif);
  for (const ScoredTimeline& tl : result.timelines) {
    for (std::size_t i = 1; i < tl.samples.size(); ++i) {
      CHECK(tl.samples[i].timestamp >= tl.samples[i - 1].timestamp);
    }
  }
  CHECK_THROWS_AS(run_verification_protocol(params, store, {store.splits.test[0]}, 2),
                  std::invalid_argument);
}
