#pragma once

#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "behaveformer/features.hpp"
#include "behaveformer/graph.hpp"

namespace bf {

/// Every tower embeds into this many dimensions.
inline constexpr Index kEmbeddingDim = 64;

struct StdatConfig {
  Index seq_len = kDefaultKeystrokeWindow;  // N
  Index channels = 10;                      // M
  int gre_components = 20;                  // K
  int blocks = 6;
  int temporal_heads = 5;   // must divide channels
  int channel_heads = 10;   // must divide seq_len
  Index fnn_hidden = 256;
  Scalar dropout_rate = 0.1;
  std::vector<int> conv_kernels = {1, 3, 5};

  void validate() const;
};

struct BehaveFormerConfig {
  StdatConfig keystroke;
  std::optional<StdatConfig> imu;
  Index fused_dim = 64;

  void validate() const;
};

// Published tower presets per dataset.
StdatConfig aalto_keystroke_tower();
StdatConfig hmog_keystroke_tower();
StdatConfig humidb_keystroke_tower();
StdatConfig imu_tower(Index channels = 36);

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Gaussian range encoder: K learnable (mean, log-std) position Gaussians and
/// a K x M range embedding. Sigma stays positive by living in log space.
struct GreParams {
  Matrix means;        // 1 x K
  Matrix log_sigma;    // 1 x K
  Matrix range_embed;  // K x M
};

struct MhaParams {
  std::vector<Matrix> wq, wk, wv;  // per head: D x D/heads
  Matrix wo;                       // D x D
};

struct BatchNormParams {
  Matrix gamma;
  Matrix beta;
  Matrix running_mean;
  Matrix running_var;
};

struct ConvBranchParams {
  Matrix kernel;
  BatchNormParams bn;
};

struct DualAttentionBlockParams {
  MhaParams temporal;  // d_model = channels
  MhaParams channel;   // d_model = seq_len, applied to the transposed input
  Matrix norm1_gain, norm1_bias;
  Matrix norm2_gain, norm2_bias;
  std::vector<ConvBranchParams> convs;
};

struct StdatParams {
  StdatConfig config;
  GreParams gre;
  std::vector<DualAttentionBlockParams> blocks;
  Matrix fnn_w1, fnn_b1, fnn_w2, fnn_b2;
};

struct BehaveFormerParams {
  BehaveFormerConfig config;
  StdatParams keystroke;
  std::optional<StdatParams> imu;
  Matrix fusion_w, fusion_b;  // present iff the IMU tower is
};

StdatParams init_stdat(const StdatConfig& config, std::mt19937_64& rng);
BehaveFormerParams init_behaveformer(const BehaveFormerConfig& config, std::uint64_t seed);

enum class ParamKind { Trainable, State };
using ParamVisitor = std::function<void(const std::string& name, Matrix& value, ParamKind kind)>;

/// Walks every tensor of the model in a stable order with stable names
/// ("keystroke.block0.tmha.head2.wq", ...). Batch-norm running statistics are
/// visited as ParamKind::State.
void visit_params(BehaveFormerParams& params, const ParamVisitor& visitor);

// ---------------------------------------------------------------------------
// Graph bindings and forward passes
// ---------------------------------------------------------------------------

struct BoundMha {
  std::vector<Var> wq, wk, wv;
  Var wo;
};

struct BoundConvBranch {
  Var kernel, gamma, beta;
  Matrix* running_mean = nullptr;
  Matrix* running_var = nullptr;
};

struct BoundBlock {
  BoundMha temporal, channel;
  Var norm1_gain, norm1_bias, norm2_gain, norm2_bias;
  std::vector<BoundConvBranch> convs;
};

struct BoundStdat {
  const StdatConfig* config = nullptr;
  Var gre_means, gre_log_sigma, gre_range_embed;
  std::vector<BoundBlock> blocks;
  Var fnn_w1, fnn_b1, fnn_w2, fnn_b2;
};

/// A model bound onto one graph. `slots` lists the trainable bindings in
/// visit_params order for gradient readout after backward().
struct BoundModel {
  const BehaveFormerConfig* config = nullptr;
  BoundStdat keystroke;
  std::optional<BoundStdat> imu;
  Var fusion_w, fusion_b;
  std::vector<std::pair<std::string, Var>> slots;
};

/// Binds all tensors onto `g`. With trainable=true, tensors become graph
/// parameters unless their name starts with one of `frozen_prefixes`.
BoundModel bind_model(Graph& g, BehaveFormerParams& params,
                      const std::set<std::string>& frozen_prefixes = {}, bool trainable = true);

/// Normalized Gaussian position weights: row n holds the K component densities
/// at position n, normalized to sum to 1.
Var gre_position_weights(Graph& g, Var means, Var log_sigma, Index positions);

/// Positional encoding G = weights * range_embed, an N x M bias added to the input.
Var gaussian_range_encode(Graph& g, const BoundStdat& tower, Index positions);

/// Standard scaled dot-product self-attention with per-head projections and a
/// final output projection. When given, `attention_out` collects each head's
/// attention distribution (rows sum to 1).
Var multi_head_self_attention(Graph& g, Var x, const BoundMha& mha,
                              std::vector<Var>* attention_out = nullptr);

Var dual_attention_block(Graph& g, Var xbar, const BoundBlock& block, const StdatConfig& config);

/// Range-biased input, the configured stack of dual attention blocks, then the
/// two-layer FNN head producing the 64-dim tower embedding.
Var stdat_forward(Graph& g, Var x, const BoundStdat& tower);

/// Keystroke-only models return the keystroke embedding; dual models fuse the
/// two tower embeddings through the fusion affine layer.
Var behaveformer_forward(Graph& g, Var xk, std::optional<Var> ximu, const BoundModel& model);

/// Convenience eval-mode embedding of one session (no gradients recorded).
Vector embed_sequence(BehaveFormerParams& params, const Matrix& keystroke, const Matrix* imu);

}  // namespace bf
