#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "behaveformer/model.hpp"
#include "testutil.hpp"

using namespace bf;
using bftest::check_gradients;
using bftest::random_matrix;

namespace {

StdatConfig tiny_tower() {
  StdatConfig c;
  c.seq_len = 6;
  c.channels = 3;
  c.gre_components = 2;
  c.blocks = 1;
  c.temporal_heads = 3;
  c.channel_heads = 2;
  c.fnn_hidden = 8;
  c.dropout_rate = 0.1;
  return c;
}

}  // namespace

TEST_CASE("single-component GRE weights are all 1 and rows copy the range embedding") {
  StdatConfig cfg = tiny_tower();
  cfg.gre_components = 1;
  std::mt19937_64 rng(1);
  StdatParams p = init_stdat(cfg, rng);

  Graph g(Mode::Eval);
  BoundModel bound;  // bind just the tower
  BehaveFormerParams model;
  model.config.keystroke = cfg;
  model.keystroke = p;
  bound = bind_model(g, model, {}, false);

  Var w = gre_position_weights(g, bound.keystroke.gre_means, bound.keystroke.gre_log_sigma, 6);
  CHECK((w.value().array() - 1.0).abs().maxCoeff() < 1e-12);
  Var enc = gaussian_range_encode(g, bound.keystroke, 6);
  for (Index i = 0; i < 6; ++i)
    CHECK((enc.value().row(i) - p.gre.range_embed.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two Gaussians symmetric about the center weigh the center equally") {
  Graph g(Mode::Eval);
  const Index n = 9;  // center position 4
  Var means = g.input((Matrix(1, 2) << 2.0, 6.0).finished());
  Var log_sigma = g.input(Matrix::Constant(1, 2, std::log(1.7)));
  Var w = gre_position_weights(g, means, log_sigma, n);
  CHECK(w.value()(4, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w.value()(4, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("GRE position weights sum to 1 for random parameterizations") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Graph g(Mode::Eval);
    const Index k = 1 + static_cast<Index>(rng() % 6);
    Var means = g.input(random_matrix(1, k, rng, -5.0, 15.0));
    Var log_sigma = g.input(random_matrix(1, k, rng, -2.0, 2.0));
    Var w = gre_position_weights(g, means, log_sigma, 12);
    for (Index i = 0; i < 12; ++i) CHECK(std::abs(w.value().row(i).sum() - 1.0) < 1e-9);
  }
}

TEST_CASE("GRE default keeps 20 Gaussians") { CHECK(StdatConfig{}.gre_components == 20); }

TEST_CASE("attention with zero Q/K and identity V/O averages the rows") {
  std::mt19937_64 rng(3);
  Graph g(Mode::Eval);
  Matrix x = random_matrix(5, 4, rng);
  BoundMha mha;
  mha.wq.push_back(g.input(Matrix::Zero(4, 4)));
  mha.wk.push_back(g.input(Matrix::Zero(4, 4)));
  mha.wv.push_back(g.input(Matrix::Identity(4, 4)));
  mha.wo = g.input(Matrix::Identity(4, 4));

  std::vector<Var> attn;
  Var y = multi_head_self_attention(g, g.input(x), mha, &attn);
  const RowVector mean_row = x.colwise().mean();
  for (Index i = 0; i < 5; ++i) CHECK((y.value().row(i) - mean_row).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(attn.size() == 1);
  CHECK((attn[0].value().array() - 0.2).abs().maxCoeff() < 1e-12);
}

TEST_CASE("attention rows are distributions for random inputs") {
  std::mt19937_64 rng(4);
  Graph g(Mode::Eval);
  MhaParams p;
  BehaveFormerParams dummy;
  BoundMha mha;
  for (int h = 0; h < 2; ++h) {
    mha.wq.push_back(g.input(random_matrix(6, 3, rng)));
    mha.wk.push_back(g.input(random_matrix(6, 3, rng)));
    mha.wv.push_back(g.input(random_matrix(6, 3, rng)));
  }
  mha.wo = g.input(random_matrix(6, 6, rng));
  std::vector<Var> attn;
  multi_head_self_attention(g, g.input(random_matrix(7, 6, rng)), mha, &attn);
  REQUIRE(attn.size() == 2);
  for (const Var& a : attn)
    for (Index i = 0; i < a.rows(); ++i) {
      CHECK(std::abs(a.value().row(i).sum() - 1.0) < 1e-9);
      CHECK(a.value().row(i).minCoeff() >= 0.0);
      CHECK(a.value().row(i).maxCoeff() <= 1.0);
    }
}

TEST_CASE("single-row attention reduces to the V and output projections") {
  std::mt19937_64 rng(5);
  Graph g(Mode::Eval);
  Matrix x = random_matrix(1, 4, rng);
  Matrix wv = random_matrix(4, 4, rng), wo = random_matrix(4, 4, rng);
  BoundMha mha;
  mha.wq.push_back(g.input(random_matrix(4, 4, rng)));
  mha.wk.push_back(g.input(random_matrix(4, 4, rng)));
  mha.wv.push_back(g.input(wv));
  mha.wo = g.input(wo);
  Var y = multi_head_self_attention(g, g.input(x), mha);
  CHECK((y.value() - x * wv * wo).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dual attention blocks preserve shape on every preset") {
  std::mt19937_64 rng(6);
  for (StdatConfig cfg : {aalto_keystroke_tower(), hmog_keystroke_tower(), humidb_keystroke_tower(),
                          imu_tower()}) {
    cfg.blocks = 1;  // one block suffices for the shape property
    StdatParams p = init_stdat(cfg, rng);
    BehaveFormerParams model;
    model.config.keystroke = cfg;
    model.keystroke = std::move(p);
    Graph g(Mode::Eval);
    BoundModel bound = bind_model(g, model, {}, false);
    Var x = g.input(random_matrix(cfg.seq_len, cfg.channels, rng));
    Var y = dual_attention_block(g, x, bound.keystroke.blocks[0], cfg);
    CHECK(y.rows() == cfg.seq_len);
    CHECK(y.cols() == cfg.channels);
  }
}

TEST_CASE("keystroke presets carry the published head counts") {
  CHECK(aalto_keystroke_tower().temporal_heads == 5);
  CHECK(aalto_keystroke_tower().channel_heads == 10);
  CHECK(aalto_keystroke_tower().blocks == 6);
  CHECK(hmog_keystroke_tower().temporal_heads == 5);
  CHECK(hmog_keystroke_tower().blocks == 5);
  CHECK(humidb_keystroke_tower().temporal_heads == 3);
  CHECK(humidb_keystroke_tower().channel_heads == 10);
  CHECK(imu_tower().temporal_heads == 6);
  CHECK(imu_tower().channel_heads == 10);
  CHECK(imu_tower().blocks == 5);
}

TEST_CASE("zeroed attention and conv weights reduce the block to stacked layer norms") {
  StdatConfig cfg = tiny_tower();
  cfg.dropout_rate = 0.0;
  std::mt19937_64 rng(7);
  StdatParams p = init_stdat(cfg, rng);
  for (auto& blk : p.blocks) {
    for (auto* mha : {&blk.temporal, &blk.channel}) {
      for (auto& w : mha->wq) w.setZero();
      for (auto& w : mha->wk) w.setZero();
      for (auto& w : mha->wv) w.setZero();
      mha->wo.setZero();
    }
    for (auto& cb : blk.convs) cb.kernel.setZero();
  }
  BehaveFormerParams model;
  model.config.keystroke = cfg;
  model.keystroke = std::move(p);

  Graph g(Mode::Eval);
  BoundModel bound = bind_model(g, model, {}, false);
  Matrix x = random_matrix(cfg.seq_len, cfg.channels, rng);
  Var y = dual_attention_block(g, g.input(x), bound.keystroke.blocks[0], cfg);

  Var ones = g.input(Matrix::Ones(1, cfg.channels));
  Var zeros = g.input(Matrix::Zero(1, cfg.channels));
  Var expect = layer_norm(layer_norm(g.input(x), ones, zeros), ones, zeros);
  CHECK((y.value() - expect.value()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("stdat embeds into 64 dimensions, deterministically in eval mode") {
  StdatConfig cfg = tiny_tower();
  BehaveFormerConfig mc;
  mc.keystroke = cfg;
  BehaveFormerParams params = init_behaveformer(mc, 11);
  std::mt19937_64 rng(8);
  Matrix x = random_matrix(cfg.seq_len, cfg.channels, rng);

  Vector e1 = embed_sequence(params, x, nullptr);
  Vector e2 = embed_sequence(params, x, nullptr);
  REQUIRE(e1.size() == kEmbeddingDim);
  CHECK(std::memcmp(e1.data(), e2.data(), sizeof(Scalar) * e1.size()) == 0);
}

TEST_CASE("miniature stdat gradients match finite differences end to end") {
  StdatConfig cfg = tiny_tower();
  BehaveFormerConfig mc;
  mc.keystroke = cfg;
  BehaveFormerParams params = init_behaveformer(mc, 19);
  std::mt19937_64 rng(9);
  Matrix x = random_matrix(cfg.seq_len, cfg.channels, rng);
  const Matrix probe = random_matrix(kEmbeddingDim, 1, rng);

  auto loss_value = [&] {
    Graph g(Mode::Train, 77);
    BoundModel bound = bind_model(g, params);
    return sum_all(mul(behaveformer_forward(g, g.input(x), std::nullopt, bound), g.input(probe)))
        .value()(0, 0);
  };

  Graph g(Mode::Train, 77);
  BoundModel bound = bind_model(g, params);
  Var loss = sum_all(mul(behaveformer_forward(g, g.input(x), std::nullopt, bound), g.input(probe)));
  g.backward(loss);

  std::vector<Matrix*> storage;
  std::vector<Matrix> analytic;
  std::map<std::string, Matrix*> by_name;
  visit_params(params, [&](const std::string& name, Matrix& m, ParamKind kind) {
    if (kind == ParamKind::Trainable) by_name[name] = &m;
  });
  for (const auto& [name, var] : bound.slots) {
    storage.push_back(by_name.at(name));
    analytic.push_back(g.grad(var));
  }
  CHECK(check_gradients(storage, loss_value, analytic) == "");
}

TEST_CASE("keystroke-only composite equals the tower embedding and dual fuses 128 inputs") {
  BehaveFormerConfig mc;
  mc.keystroke = tiny_tower();
  BehaveFormerParams solo = init_behaveformer(mc, 3);
  std::mt19937_64 rng(10);
  Matrix xk = random_matrix(mc.keystroke.seq_len, mc.keystroke.channels, rng);

  Graph g(Mode::Eval);
  BoundModel bound = bind_model(g, solo, {}, false);
  Var composite = behaveformer_forward(g, g.input(xk), std::nullopt, bound);
  Var tower = stdat_forward(g, g.input(xk), bound.keystroke);
  CHECK((composite.value() - tower.value()).cwiseAbs().maxCoeff() == 0.0);

  StdatConfig imu_cfg = tiny_tower();
  imu_cfg.seq_len = 10;
  imu_cfg.channels = 4;
  imu_cfg.temporal_heads = 2;
  imu_cfg.channel_heads = 2;
  mc.imu = imu_cfg;
  BehaveFormerParams dual = init_behaveformer(mc, 4);
  CHECK(dual.fusion_w.cols() == 2 * kEmbeddingDim);
  CHECK(dual.fusion_w.rows() == mc.fused_dim);

  Matrix xi = random_matrix(imu_cfg.seq_len, imu_cfg.channels, rng);
  Graph g2(Mode::Eval);
  BoundModel bound2 = bind_model(g2, dual, {}, false);
  Var e = behaveformer_forward(g2, g2.input(xk), g2.input(xi), bound2);
  CHECK(e.rows() == mc.fused_dim);
  CHECK_THROWS_AS(behaveformer_forward(g2, g2.input(xk), std::nullopt, bound2),
                  std::invalid_argument);
}

TEST_CASE("permuting input rows changes the embedding") {
  BehaveFormerConfig mc;
  mc.keystroke = tiny_tower();
  BehaveFormerParams params = init_behaveformer(mc, 21);
  std::mt19937_64 rng(11);
  Matrix x = random_matrix(mc.keystroke.seq_len, mc.keystroke.channels, rng);
  Matrix permuted = x;
  permuted.row(0).swap(permuted.row(3));

  Vector a = embed_sequence(params, x, nullptr);
  Vector b = embed_sequence(params, permuted, nullptr);
  CHECK((a - b).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("bound slots agree with the visited trainable names") {
  BehaveFormerConfig mc;
  mc.keystroke = tiny_tower();
  StdatConfig imu_cfg = tiny_tower();
  imu_cfg.seq_len = 4;
  imu_cfg.channels = 2;
  imu_cfg.temporal_heads = 1;
  imu_cfg.channel_heads = 2;
  mc.imu = imu_cfg;
  BehaveFormerParams params = init_behaveformer(mc, 5);

  std::set<std::string> visited;
  visit_params(params, [&](const std::string& name, Matrix&, ParamKind kind) {
    if (kind == ParamKind::Trainable) visited.insert(name);
  });
  Graph g(Mode::Train);
  BoundModel bound = bind_model(g, params);
  std::set<std::string> bound_names;
  for (const auto& [name, var] : bound.slots) bound_names.insert(name);
  CHECK(visited == bound_names);

  // Frozen prefixes drop out of the slot list but still feed the forward pass.
  Graph g2(Mode::Train);
  BoundModel frozen = bind_model(g2, params, {"keystroke.gre", "fusion"});
  for (const auto& [name, var] : frozen.slots) {
    CHECK(name.rfind("keystroke.gre", 0) != 0);
    CHECK(name.rfind("fusion", 0) != 0);
  }
  CHECK(frozen.slots.size() < bound.slots.size());
}

TEST_CASE("configuration validation rejects bad head counts and shapes") {
  StdatConfig c = tiny_tower();
  c.temporal_heads = 2;  // does not divide 3 channels
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_tower();
  c.channel_heads = 4;  // does not divide 6 rows
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_tower();
  c.blocks = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_tower();
  c.conv_kernels = {2};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  StdatConfig good = tiny_tower();
  std::mt19937_64 rng(12);
  StdatParams p = init_stdat(good, rng);
  BehaveFormerParams model;
  model.config.keystroke = good;
  model.keystroke = std::move(p);
  Graph g(Mode::Eval);
  BoundModel bound = bind_model(g, model, {}, false);
  CHECK_THROWS_AS(stdat_forward(g, g.input(Matrix::Zero(5, 3)), bound.keystroke),
                  std::invalid_argument);
}
