#include "behaveformer/model.hpp"

#include <cmath>
#include <stdexcept>

namespace bf {

void StdatConfig::validate() const {
  if (seq_len < 1 || channels < 1) throw std::invalid_argument("StdatConfig: empty input shape");
  if (gre_components < 1) throw std::invalid_argument("StdatConfig: need at least one Gaussian");
  if (blocks < 1) throw std::invalid_argument("StdatConfig: need at least one dual attention block");
  if (temporal_heads < 1 || channels % temporal_heads != 0) {
    throw std::invalid_argument("StdatConfig: temporal heads (" + std::to_string(temporal_heads) +
                                ") must divide the channel count (" + std::to_string(channels) + ")");
  }
  if (channel_heads < 1 || seq_len % channel_heads != 0) {
    throw std::invalid_argument("StdatConfig: channel heads (" + std::to_string(channel_heads) +
                                ") must divide the sequence length (" + std::to_string(seq_len) + ")");
  }
  if (fnn_hidden < 1) throw std::invalid_argument("StdatConfig: FNN hidden width must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::invalid_argument("StdatConfig: dropout rate must be in [0,1)");
  }
  if (conv_kernels.empty()) throw std::invalid_argument("StdatConfig: no convolution kernels");
  for (int k : conv_kernels)
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("StdatConfig: kernels must be odd");
}

void BehaveFormerConfig::validate() const {
  keystroke.validate();
  if (imu) imu->validate();
  if (fused_dim < 1) throw std::invalid_argument("BehaveFormerConfig: fused dim must be positive");
}

StdatConfig aalto_keystroke_tower() {
  StdatConfig c;
  c.seq_len = kDefaultKeystrokeWindow;
  c.channels = 10;
  c.blocks = 6;
  c.temporal_heads = 5;
  c.channel_heads = 10;
  return c;
}

StdatConfig hmog_keystroke_tower() {
  StdatConfig c = aalto_keystroke_tower();
  c.blocks = 5;
  return c;
}

StdatConfig humidb_keystroke_tower() {
  StdatConfig c = aalto_keystroke_tower();
  c.channels = 3;
  c.blocks = 5;
  c.temporal_heads = 3;
  return c;
}

StdatConfig imu_tower(Index channels) {
  StdatConfig c;
  c.seq_len = kImuRows;
  c.channels = channels;
  c.blocks = 5;
  c.temporal_heads = 6;
  c.channel_heads = 10;
  return c;
}

namespace {

Matrix uniform_init(Index rows, Index cols, Scalar limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<Scalar> uni(-limit, limit);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = uni(rng);
  return m;
}

// Variance-scaled uniform over fan-in plus fan-out.
Matrix glorot(Index rows, Index cols, std::mt19937_64& rng) {
  return uniform_init(rows, cols, std::sqrt(6.0 / static_cast<Scalar>(rows + cols)), rng);
}

MhaParams init_mha(Index d_model, int heads, std::mt19937_64& rng) {
  const Index dh = d_model / heads;
  MhaParams p;
  for (int h = 0; h < heads; ++h) {
    p.wq.push_back(glorot(d_model, dh, rng));
    p.wk.push_back(glorot(d_model, dh, rng));
    p.wv.push_back(glorot(d_model, dh, rng));
  }
  p.wo = glorot(d_model, d_model, rng);
  return p;
}

BatchNormParams init_bn() {
  BatchNormParams p;
  p.gamma = Matrix::Ones(1, 1);
  p.beta = Matrix::Zero(1, 1);
  p.running_mean = Matrix::Zero(1, 1);
  p.running_var = Matrix::Ones(1, 1);
  return p;
}

}  // namespace

StdatParams init_stdat(const StdatConfig& config, std::mt19937_64& rng) {
  config.validate();
  StdatParams p;
  p.config = config;

  const Index k = config.gre_components;
  const Scalar n = static_cast<Scalar>(config.seq_len);
  p.gre.means = Matrix(1, k);
  for (Index i = 0; i < k; ++i)
    p.gre.means(0, i) = (static_cast<Scalar>(i) + 0.5) * n / static_cast<Scalar>(k);
  p.gre.log_sigma = Matrix::Constant(1, k, std::log(n / static_cast<Scalar>(k)));
  p.gre.range_embed = uniform_init(k, config.channels, 0.1, rng);

  for (int b = 0; b < config.blocks; ++b) {
    DualAttentionBlockParams blk;
    blk.temporal = init_mha(config.channels, config.temporal_heads, rng);
    blk.channel = init_mha(config.seq_len, config.channel_heads, rng);
    blk.norm1_gain = Matrix::Ones(1, config.channels);
    blk.norm1_bias = Matrix::Zero(1, config.channels);
    blk.norm2_gain = Matrix::Ones(1, config.channels);
    blk.norm2_bias = Matrix::Zero(1, config.channels);
    for (int kk : config.conv_kernels) {
      ConvBranchParams cb;
      cb.kernel = uniform_init(kk, kk, std::sqrt(3.0) / static_cast<Scalar>(kk), rng);
      cb.bn = init_bn();
      blk.convs.push_back(std::move(cb));
    }
    p.blocks.push_back(std::move(blk));
  }

  const Index flat = config.seq_len * config.channels;
  p.fnn_w1 = glorot(config.fnn_hidden, flat, rng);
  p.fnn_b1 = Matrix::Zero(config.fnn_hidden, 1);
  p.fnn_w2 = glorot(kEmbeddingDim, config.fnn_hidden, rng);
  p.fnn_b2 = Matrix::Zero(kEmbeddingDim, 1);
  return p;
}

BehaveFormerParams init_behaveformer(const BehaveFormerConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  BehaveFormerParams p;
  p.config = config;
  p.keystroke = init_stdat(config.keystroke, rng);
  if (config.imu) {
    p.imu = init_stdat(*config.imu, rng);
    p.fusion_w = glorot(config.fused_dim, 2 * kEmbeddingDim, rng);
    p.fusion_b = Matrix::Zero(config.fused_dim, 1);
  }
  return p;
}

namespace {

void visit_mha(MhaParams& p, const std::string& prefix, const ParamVisitor& v) {
  for (std::size_t h = 0; h < p.wq.size(); ++h) {
    const std::string hp = prefix + ".head" + std::to_string(h);
    v(hp + ".wq", p.wq[h], ParamKind::Trainable);
    v(hp + ".wk", p.wk[h], ParamKind::Trainable);
    v(hp + ".wv", p.wv[h], ParamKind::Trainable);
  }
  v(prefix + ".wo", p.wo, ParamKind::Trainable);
}

void visit_stdat(StdatParams& p, const std::string& prefix, const ParamVisitor& v) {
  v(prefix + ".gre.means", p.gre.means, ParamKind::Trainable);
  v(prefix + ".gre.log_sigma", p.gre.log_sigma, ParamKind::Trainable);
  v(prefix + ".gre.range_embed", p.gre.range_embed, ParamKind::Trainable);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    DualAttentionBlockParams& blk = p.blocks[b];
    const std::string bp = prefix + ".block" + std::to_string(b);
    visit_mha(blk.temporal, bp + ".tmha", v);
    visit_mha(blk.channel, bp + ".cmha", v);
    v(bp + ".norm1.gain", blk.norm1_gain, ParamKind::Trainable);
    v(bp + ".norm1.bias", blk.norm1_bias, ParamKind::Trainable);
    v(bp + ".norm2.gain", blk.norm2_gain, ParamKind::Trainable);
    v(bp + ".norm2.bias", blk.norm2_bias, ParamKind::Trainable);
    for (std::size_t c = 0; c < blk.convs.size(); ++c) {
      const std::string cp = bp + ".conv" + std::to_string(p.config.conv_kernels[c]);
      v(cp + ".kernel", blk.convs[c].kernel, ParamKind::Trainable);
      v(cp + ".bn.gamma", blk.convs[c].bn.gamma, ParamKind::Trainable);
      v(cp + ".bn.beta", blk.convs[c].bn.beta, ParamKind::Trainable);
      v(cp + ".bn.running_mean", blk.convs[c].bn.running_mean, ParamKind::State);
      v(cp + ".bn.running_var", blk.convs[c].bn.running_var, ParamKind::State);
    }
  }
  v(prefix + ".fnn.w1", p.fnn_w1, ParamKind::Trainable);
  v(prefix + ".fnn.b1", p.fnn_b1, ParamKind::Trainable);
  v(prefix + ".fnn.w2", p.fnn_w2, ParamKind::Trainable);
  v(prefix + ".fnn.b2", p.fnn_b2, ParamKind::Trainable);
}

}  // namespace

void visit_params(BehaveFormerParams& params, const ParamVisitor& visitor) {
  visit_stdat(params.keystroke, "keystroke", visitor);
  if (params.imu) {
    visit_stdat(*params.imu, "imu", visitor);
    visitor("fusion.w", params.fusion_w, ParamKind::Trainable);
    visitor("fusion.b", params.fusion_b, ParamKind::Trainable);
  }
}

namespace {

struct Binder {
  Graph* g;
  const std::set<std::string>* frozen;
  bool trainable;
  std::vector<std::pair<std::string, Var>>* slots;

  bool is_frozen(const std::string& name) const {
    for (const std::string& p : *frozen)
      if (name.rfind(p, 0) == 0) return true;
    return false;
  }

  Var bind(const std::string& name, Matrix& m) const {
    if (trainable && !is_frozen(name)) {
      Var v = g->param(m);
      slots->emplace_back(name, v);
      return v;
    }
    return g->input(m);
  }
};

BoundMha bind_mha(const Binder& b, MhaParams& p, const std::string& prefix) {
  BoundMha out;
  for (std::size_t h = 0; h < p.wq.size(); ++h) {
    const std::string hp = prefix + ".head" + std::to_string(h);
    out.wq.push_back(b.bind(hp + ".wq", p.wq[h]));
    out.wk.push_back(b.bind(hp + ".wk", p.wk[h]));
    out.wv.push_back(b.bind(hp + ".wv", p.wv[h]));
  }
  out.wo = b.bind(prefix + ".wo", p.wo);
  return out;
}

BoundStdat bind_stdat(const Binder& b, StdatParams& p, const std::string& prefix) {
  BoundStdat out;
  out.config = &p.config;
  out.gre_means = b.bind(prefix + ".gre.means", p.gre.means);
  out.gre_log_sigma = b.bind(prefix + ".gre.log_sigma", p.gre.log_sigma);
  out.gre_range_embed = b.bind(prefix + ".gre.range_embed", p.gre.range_embed);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    DualAttentionBlockParams& blk = p.blocks[i];
    const std::string bp = prefix + ".block" + std::to_string(i);
    BoundBlock bound;
    bound.temporal = bind_mha(b, blk.temporal, bp + ".tmha");
    bound.channel = bind_mha(b, blk.channel, bp + ".cmha");
    bound.norm1_gain = b.bind(bp + ".norm1.gain", blk.norm1_gain);
    bound.norm1_bias = b.bind(bp + ".norm1.bias", blk.norm1_bias);
    bound.norm2_gain = b.bind(bp + ".norm2.gain", blk.norm2_gain);
    bound.norm2_bias = b.bind(bp + ".norm2.bias", blk.norm2_bias);
    for (std::size_t c = 0; c < blk.convs.size(); ++c) {
      const std::string cp = bp + ".conv" + std::to_string(p.config.conv_kernels[c]);
      BoundConvBranch cb;
      cb.kernel = b.bind(cp + ".kernel", blk.convs[c].kernel);
      cb.gamma = b.bind(cp + ".bn.gamma", blk.convs[c].bn.gamma);
      cb.beta = b.bind(cp + ".bn.beta", blk.convs[c].bn.beta);
      cb.running_mean = &blk.convs[c].bn.running_mean;
      cb.running_var = &blk.convs[c].bn.running_var;
      bound.convs.push_back(cb);
    }
    out.blocks.push_back(std::move(bound));
  }
  out.fnn_w1 = b.bind(prefix + ".fnn.w1", p.fnn_w1);
  out.fnn_b1 = b.bind(prefix + ".fnn.b1", p.fnn_b1);
  out.fnn_w2 = b.bind(prefix + ".fnn.w2", p.fnn_w2);
  out.fnn_b2 = b.bind(prefix + ".fnn.b2", p.fnn_b2);
  return out;
}

}  // namespace

BoundModel bind_model(Graph& g, BehaveFormerParams& params,
                      const std::set<std::string>& frozen_prefixes, bool trainable) {
  BoundModel out;
  out.config = &params.config;
  Binder b{&g, &frozen_prefixes, trainable, &out.slots};
  out.keystroke = bind_stdat(b, params.keystroke, "keystroke");
  if (params.imu) {
    out.imu = bind_stdat(b, *params.imu, "imu");
    out.fusion_w = b.bind("fusion.w", params.fusion_w);
    out.fusion_b = b.bind("fusion.b", params.fusion_b);
  }
  return out;
}

Var gre_position_weights(Graph& g, Var means, Var log_sigma, Index positions) {
  const Index k = means.cols();
  Matrix grid(positions, k);
  for (Index n = 0; n < positions; ++n) grid.row(n).setConstant(static_cast<Scalar>(n));
  Var pos = g.input(std::move(grid));
  Var ones = g.input(Matrix::Ones(positions, 1));

  // log pdf(n; mu_k, sigma_k) up to the shared constant: softmax over the K
  // components recovers the normalized density vector per position, so no
  // explicit underflow guard is needed.
  Var diff = sub(pos, matmul(ones, means));
  Var half_inv_var = scale(exp(scale(log_sigma, -2.0)), 0.5);  // 1/(2 sigma^2)
  Var logits = sub(scale(mul(mul(diff, diff), matmul(ones, half_inv_var)), -1.0),
                   matmul(ones, log_sigma));
  return softmax_rows(logits);
}

Var gaussian_range_encode(Graph& g, const BoundStdat& tower, Index positions) {
  Var weights = gre_position_weights(g, tower.gre_means, tower.gre_log_sigma, positions);
  return matmul(weights, tower.gre_range_embed);
}

Var multi_head_self_attention(Graph& g, Var x, const BoundMha& mha, std::vector<Var>* attention_out) {
  const Index d_model = x.cols();
  const int heads = static_cast<int>(mha.wq.size());
  if (d_model % heads != 0) {
    throw std::invalid_argument("multi_head_self_attention: heads must divide d_model");
  }
  const Scalar scale_factor = 1.0 / std::sqrt(static_cast<Scalar>(d_model / heads));

  std::vector<Var> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var q = matmul(x, mha.wq[static_cast<std::size_t>(h)]);
    Var k = matmul(x, mha.wk[static_cast<std::size_t>(h)]);
    Var v = matmul(x, mha.wv[static_cast<std::size_t>(h)]);
    Var attn = softmax_rows(scale(matmul(q, transpose(k)), scale_factor));
    if (attention_out) attention_out->push_back(attn);
    head_outputs.push_back(matmul(attn, v));
  }
  Var concat_heads = heads == 1 ? head_outputs[0] : concat(head_outputs, Axis::Cols);
  return matmul(concat_heads, mha.wo);
}

Var dual_attention_block(Graph& g, Var xbar, const BoundBlock& block, const StdatConfig& config) {
  Var vt = multi_head_self_attention(g, xbar, block.temporal);
  Var vc = multi_head_self_attention(g, transpose(xbar), block.channel);
  Var v = add(vt, transpose(vc));
  Var vbar = layer_norm(add(v, xbar), block.norm1_gain, block.norm1_bias);

  Var summed;
  for (std::size_t c = 0; c < block.convs.size(); ++c) {
    const BoundConvBranch& cb = block.convs[c];
    Var branch = relu(dropout(
        batch_norm(conv2d_same(vbar, cb.kernel), cb.gamma, cb.beta, *cb.running_mean, *cb.running_var),
        config.dropout_rate));
    summed = c == 0 ? branch : add(summed, branch);
  }
  return layer_norm(add(summed, vbar), block.norm2_gain, block.norm2_bias);
}

Var stdat_forward(Graph& g, Var x, const BoundStdat& tower) {
  const StdatConfig& cfg = *tower.config;
  if (x.rows() != cfg.seq_len || x.cols() != cfg.channels) {
    throw std::invalid_argument("stdat_forward: input " + std::to_string(x.rows()) + "x" +
                                std::to_string(x.cols()) + " does not match the tower's " +
                                std::to_string(cfg.seq_len) + "x" + std::to_string(cfg.channels));
  }
  Var xbar = add(x, gaussian_range_encode(g, tower, cfg.seq_len));
  for (const BoundBlock& block : tower.blocks) xbar = dual_attention_block(g, xbar, block, cfg);
  Var hidden = relu(affine(flatten(xbar), tower.fnn_w1, tower.fnn_b1));
  return affine(hidden, tower.fnn_w2, tower.fnn_b2);
}

Var behaveformer_forward(Graph& g, Var xk, std::optional<Var> ximu, const BoundModel& model) {
  if (model.imu.has_value() != ximu.has_value()) {
    throw std::invalid_argument(model.imu ? "behaveformer_forward: model expects an IMU sequence"
                                          : "behaveformer_forward: model has no IMU tower");
  }
  Var ek = stdat_forward(g, xk, model.keystroke);
  if (!model.imu) return ek;
  Var ei = stdat_forward(g, *ximu, *model.imu);
  return affine(concat({ek, ei}, Axis::Rows), model.fusion_w, model.fusion_b);
}

Vector embed_sequence(BehaveFormerParams& params, const Matrix& keystroke, const Matrix* imu) {
  Graph g(Mode::Eval);
  BoundModel bound = bind_model(g, params, {}, /*trainable=*/false);
  std::optional<Var> ximu;
  if (imu != nullptr) ximu = g.input(*imu);
  Var e = behaveformer_forward(g, g.input(keystroke), ximu, bound);
  return e.value().col(0);
}

}  // namespace bf
