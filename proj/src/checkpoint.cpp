#include "behaveformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "behaveformer/digest.hpp"
#include "behaveformer/json_io.hpp"

namespace bf {

namespace {

constexpr char kMagic[4] = {'B', 'F', 'C', 'P'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, Scalar v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  auto& params = const_cast<BehaveFormerParams&>(checkpoint.params);

  nlohmann::json header;
  header["config"] = params.config;
  header["normalizers"] = checkpoint.normalizers;
  header["seed"] = checkpoint.seed;
  header["config_digest"] = checkpoint.config_digest;
  auto tensors = nlohmann::json::array();
  std::string payload;
  visit_params(params, [&](const std::string& name, Matrix& m, ParamKind kind) {
    tensors.push_back({{"name", name},
                       {"rows", m.rows()},
                       {"cols", m.cols()},
                       {"state", kind == ParamKind::State}});
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) put_f64(payload, m(i, j));
  });
  header["tensors"] = std::move(tensors);

  std::string blob;
  blob.append(kMagic, 4);
  put_u32(blob, checkpoint.version);
  const std::string header_text = header.dump();
  put_u64(blob, header_text.size());
  blob += header_text;
  blob += payload;
  put_u64(blob, fnv1a64(blob.data(), blob.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (blob.size() < 4 + 4 + 8 + 8) throw std::runtime_error("load_checkpoint: truncated file");
  if (std::memcmp(blob.data(), kMagic, 4) != 0) {
    throw std::runtime_error("load_checkpoint: not a checkpoint file");
  }
  const std::uint64_t stored_digest = get_u64(blob, blob.size() - 8);
  if (fnv1a64(blob.data(), blob.size() - 8) != stored_digest) {
    throw std::runtime_error("load_checkpoint: integrity digest mismatch");
  }
  const std::uint32_t version = get_u32(blob, 4);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint64_t header_len = get_u64(blob, 8);
  if (16 + header_len + 8 > blob.size()) throw std::runtime_error("load_checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("load_checkpoint: bad header: ") + e.what());
  }

  Checkpoint ck;
  ck.version = version;
  ck.seed = header.value("seed", std::uint64_t{0});
  ck.config_digest = header.value("config_digest", std::string{});
  if (header.contains("normalizers")) {
    ck.normalizers = header.at("normalizers").get<std::map<std::string, NormalizerState>>();
  }

  const BehaveFormerConfig config = header.at("config").get<BehaveFormerConfig>();
  ck.params = init_behaveformer(config, 0);

  std::size_t at = 16 + header_len;
  const auto& tensors = header.at("tensors");
  std::size_t t = 0;
  bool ok = true;
  std::string mismatch;
  visit_params(ck.params, [&](const std::string& name, Matrix& m, ParamKind) {
    if (!ok) return;
    if (t >= tensors.size()) {
      ok = false;
      mismatch = "shape table ends before parameter '" + name + "'";
      return;
    }
    const auto& entry = tensors[t++];
    if (entry.at("name").get<std::string>() != name ||
        entry.at("rows").get<Index>() != m.rows() || entry.at("cols").get<Index>() != m.cols()) {
      ok = false;
      mismatch = "shape table entry '" + entry.at("name").get<std::string>() +
                 "' does not match parameter '" + name + "'";
      return;
    }
    if (at + static_cast<std::size_t>(m.size()) * 8 + 8 > blob.size()) {
      ok = false;
      mismatch = "payload truncated at parameter '" + name + "'";
      return;
    }
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) {
        m(i, j) = std::bit_cast<Scalar>(get_u64(blob, at));
        at += 8;
      }
  });
  if (!ok) throw std::runtime_error("load_checkpoint: " + mismatch);
  if (t != tensors.size()) throw std::runtime_error("load_checkpoint: extra tensors in shape table");
  if (at + 8 != blob.size()) throw std::runtime_error("load_checkpoint: trailing bytes after payload");
  return ck;
}

}  // namespace bf
