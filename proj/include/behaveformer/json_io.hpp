#pragma once

#include <json.hpp>

#include "behaveformer/corpus.hpp"
#include "behaveformer/features.hpp"
#include "behaveformer/model.hpp"

namespace bf {

inline void to_json(nlohmann::json& j, const StdatConfig& c) {
  j = {{"seq_len", c.seq_len},
       {"channels", c.channels},
       {"gre_components", c.gre_components},
       {"blocks", c.blocks},
       {"temporal_heads", c.temporal_heads},
       {"channel_heads", c.channel_heads},
       {"fnn_hidden", c.fnn_hidden},
       {"dropout_rate", c.dropout_rate},
       {"conv_kernels", c.conv_kernels}};
}

inline void from_json(const nlohmann::json& j, StdatConfig& c) {
  StdatConfig defaults;
  c.seq_len = j.value("seq_len", defaults.seq_len);
  c.channels = j.value("channels", defaults.channels);
  c.gre_components = j.value("gre_components", defaults.gre_components);
  c.blocks = j.value("blocks", defaults.blocks);
  c.temporal_heads = j.value("temporal_heads", defaults.temporal_heads);
  c.channel_heads = j.value("channel_heads", defaults.channel_heads);
  c.fnn_hidden = j.value("fnn_hidden", defaults.fnn_hidden);
  c.dropout_rate = j.value("dropout_rate", defaults.dropout_rate);
  c.conv_kernels = j.value("conv_kernels", defaults.conv_kernels);
}

inline void to_json(nlohmann::json& j, const BehaveFormerConfig& c) {
  j = {{"keystroke", c.keystroke}, {"fused_dim", c.fused_dim}};
  if (c.imu) j["imu"] = *c.imu;
}

inline void from_json(const nlohmann::json& j, BehaveFormerConfig& c) {
  c.keystroke = j.at("keystroke").get<StdatConfig>();
  if (j.contains("imu")) c.imu = j.at("imu").get<StdatConfig>();
  c.fused_dim = j.value("fused_dim", Index{64});
}

inline void to_json(nlohmann::json& j, const NormalizerState& n) {
  j = {{"schema", n.schema},
       {"range_lo", n.range_lo},
       {"range_hi", n.range_hi},
       {"passthrough", n.passthrough},
       {"fitted", n.fitted}};
  if (!n.passthrough) {
    j["channel_min"] = std::vector<Scalar>(n.channel_min.data(), n.channel_min.data() + n.channel_min.size());
    j["channel_max"] = std::vector<Scalar>(n.channel_max.data(), n.channel_max.data() + n.channel_max.size());
  }
}

inline void from_json(const nlohmann::json& j, NormalizerState& n) {
  n.schema = j.at("schema").get<std::string>();
  n.range_lo = j.at("range_lo").get<Scalar>();
  n.range_hi = j.at("range_hi").get<Scalar>();
  n.passthrough = j.at("passthrough").get<bool>();
  n.fitted = j.at("fitted").get<bool>();
  if (!n.passthrough) {
    const auto mins = j.at("channel_min").get<std::vector<Scalar>>();
    const auto maxs = j.at("channel_max").get<std::vector<Scalar>>();
    n.channel_min = Eigen::Map<const RowVector>(mins.data(), static_cast<Index>(mins.size()));
    n.channel_max = Eigen::Map<const RowVector>(maxs.data(), static_cast<Index>(maxs.size()));
  }
}

}  // namespace bf
