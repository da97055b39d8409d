#include "psdf/checkpoint.hpp"

#include <algorithm>

#include "psdf/binio.hpp"

namespace psdf {

namespace {

constexpr std::uint32_t kVersion = 1;

void write_tensor(std::ostream& out, const MatrixXd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      binio::write_pod<float>(out, static_cast<float>(m(i, j)));
    }
  }
}

void write_tensor(std::ostream& out, const VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    binio::write_pod<float>(out, static_cast<float>(v[i]));
  }
}

void read_tensor(std::istream& in, MatrixXd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      m(i, j) = binio::read_pod<float>(in, "tensor");
    }
  }
}

void read_tensor(std::istream& in, VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = binio::read_pod<float>(in, "tensor");
}

void write_extrinsics(std::ostream& out, const PatchExtrinsics& e) {
  binio::write_pod<float>(out, static_cast<float>(e.r));
  for (int d = 0; d < 3; ++d) binio::write_pod<float>(out, static_cast<float>(e.c[d]));
  for (int d = 0; d < 3; ++d) binio::write_pod<float>(out, static_cast<float>(e.phi[d]));
}

PatchExtrinsics read_extrinsics(std::istream& in) {
  PatchExtrinsics e;
  e.r = binio::read_pod<float>(in, "extrinsics");
  for (int d = 0; d < 3; ++d) e.c[d] = binio::read_pod<float>(in, "extrinsics");
  for (int d = 0; d < 3; ++d) e.phi[d] = binio::read_pod<float>(in, "extrinsics");
  // f32 rounding can land a hair under the clamp floor
  e.r = std::max(e.r, kRadiusMin);
  return e;
}

template <std::size_t N>
void write_header(std::ostream& out, std::uint32_t kind, std::uint32_t n_z, std::uint32_t n_p,
                  std::uint32_t latent_dim, std::uint32_t hidden, float scale_mult,
                  const std::array<WeightNormLayer, N>& layers, std::uint64_t n_objects) {
  binio::write_magic(out, "PNWT");
  binio::write_pod<std::uint32_t>(out, kVersion);
  binio::write_pod<std::uint32_t>(out, kind);
  binio::write_pod<std::uint32_t>(out, n_z);
  binio::write_pod<std::uint32_t>(out, n_p);
  binio::write_pod<std::uint32_t>(out, latent_dim);
  binio::write_pod<std::uint32_t>(out, hidden);
  binio::write_pod<float>(out, scale_mult);
  binio::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(N));
  for (const auto& layer : layers) {
    binio::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(layer.fan_in()));
    binio::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(layer.fan_out()));
  }
  binio::write_pod<std::uint64_t>(out, n_objects);
  for (const auto& layer : layers) {
    write_tensor(out, layer.V);
    write_tensor(out, layer.g);
    write_tensor(out, layer.b);
  }
}

struct Header {
  std::uint32_t kind = 0, n_z = 0, n_p = 0, latent_dim = 0, hidden = 0;
  float scale_mult = 1.0f;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> layer_dims;
  std::uint64_t n_objects = 0;
};

Header read_header(std::istream& in, const std::string& path) {
  binio::expect_magic(in, "PNWT", path);
  const auto version = binio::read_pod<std::uint32_t>(in, "version");
  require(version == kVersion, Errc::parse_error, path + ": unsupported PNWT version");
  Header h;
  h.kind = binio::read_pod<std::uint32_t>(in, "kind");
  h.n_z = binio::read_pod<std::uint32_t>(in, "n_z");
  h.n_p = binio::read_pod<std::uint32_t>(in, "n_p");
  h.latent_dim = binio::read_pod<std::uint32_t>(in, "latent_dim");
  h.hidden = binio::read_pod<std::uint32_t>(in, "hidden");
  h.scale_mult = binio::read_pod<float>(in, "scale_multiplier");
  const auto n_layers = binio::read_pod<std::uint32_t>(in, "n_layers");
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const auto fan_in = binio::read_pod<std::uint32_t>(in, "layer dims");
    const auto fan_out = binio::read_pod<std::uint32_t>(in, "layer dims");
    h.layer_dims.emplace_back(fan_in, fan_out);
  }
  h.n_objects = binio::read_pod<std::uint64_t>(in, "object count");
  return h;
}

template <std::size_t N>
void read_layers(std::istream& in, const Header& h, std::array<WeightNormLayer, N>& layers,
                 const std::string& path) {
  require(h.layer_dims.size() == N, Errc::parse_error, path + ": unexpected layer count");
  for (std::size_t l = 0; l < N; ++l) {
    auto& layer = layers[l];
    layer.V.resize(h.layer_dims[l].second, h.layer_dims[l].first);
    layer.g.resize(h.layer_dims[l].second);
    layer.b.resize(h.layer_dims[l].second);
    read_tensor(in, layer.V);
    read_tensor(in, layer.g);
    read_tensor(in, layer.b);
  }
}

}  // namespace

void save_checkpoint(const DecoderCheckpoint& ckpt, const std::filesystem::path& path) {
  ckpt.decoder.validate();
  const int n_p = ckpt.codes.empty() ? 0 : ckpt.codes.front().n_patches();
  for (const auto& codes : ckpt.codes) {
    codes.validate(ckpt.decoder.n_z);
    require(codes.n_patches() == n_p, Errc::contract_violation,
            "inconsistent patch counts across objects");
  }
  auto out = binio::open_write(path);
  write_header(out, 1, static_cast<std::uint32_t>(ckpt.decoder.n_z),
               static_cast<std::uint32_t>(n_p), 0,
               static_cast<std::uint32_t>(ckpt.decoder.hidden), 1.0f, ckpt.decoder.layers,
               ckpt.codes.size());
  for (const auto& codes : ckpt.codes) {
    for (int p = 0; p < codes.n_patches(); ++p) {
      write_tensor(out, codes.latents[static_cast<std::size_t>(p)]);
      write_extrinsics(out, codes.extrinsics[static_cast<std::size_t>(p)]);
    }
  }
  require(out.good(), Errc::io_error, "write failed for " + path.string());
}

void save_checkpoint(const ObjectNetCheckpoint& ckpt, const std::filesystem::path& path) {
  ckpt.objectnet.validate();
  require(ckpt.template_extrinsics.size() == static_cast<std::size_t>(ckpt.objectnet.n_p),
          Errc::contract_violation, "template extrinsics length != N_P");
  auto out = binio::open_write(path);
  write_header(out, 2, static_cast<std::uint32_t>(ckpt.objectnet.n_z),
               static_cast<std::uint32_t>(ckpt.objectnet.n_p),
               static_cast<std::uint32_t>(ckpt.objectnet.latent_dim),
               static_cast<std::uint32_t>(ckpt.objectnet.hidden),
               static_cast<float>(ckpt.objectnet.scale_multiplier), ckpt.objectnet.layers,
               ckpt.object_latents.size());
  for (const auto& latent : ckpt.object_latents) {
    require(latent.size() == ckpt.objectnet.latent_dim, Errc::contract_violation,
            "object latent length mismatch");
    write_tensor(out, latent);
  }
  for (const auto& e : ckpt.template_extrinsics) write_extrinsics(out, e);
  require(out.good(), Errc::io_error, "write failed for " + path.string());
}

int checkpoint_kind(const std::filesystem::path& path) {
  auto in = binio::open_read(path);
  binio::expect_magic(in, "PNWT", path.string());
  const auto version = binio::read_pod<std::uint32_t>(in, "version");
  require(version == kVersion, Errc::parse_error, path.string() + ": unsupported PNWT version");
  return static_cast<int>(binio::read_pod<std::uint32_t>(in, "kind"));
}

DecoderCheckpoint load_decoder_checkpoint(const std::filesystem::path& path) {
  auto in = binio::open_read(path);
  const Header h = read_header(in, path.string());
  require(h.kind == 1, Errc::parse_error, path.string() + " is not a decoder checkpoint");
  DecoderCheckpoint ckpt;
  ckpt.decoder.n_z = static_cast<int>(h.n_z);
  ckpt.decoder.hidden = static_cast<int>(h.hidden);
  read_layers(in, h, ckpt.decoder.layers, path.string());
  ckpt.decoder.validate();
  ckpt.codes.resize(h.n_objects);
  for (auto& codes : ckpt.codes) {
    codes.latents.resize(h.n_p);
    codes.extrinsics.resize(h.n_p);
    for (std::uint32_t p = 0; p < h.n_p; ++p) {
      codes.latents[p].resize(h.n_z);
      read_tensor(in, codes.latents[p]);
      codes.extrinsics[p] = read_extrinsics(in);
    }
    codes.validate(ckpt.decoder.n_z);
  }
  return ckpt;
}

ObjectNetCheckpoint load_objectnet_checkpoint(const std::filesystem::path& path) {
  auto in = binio::open_read(path);
  const Header h = read_header(in, path.string());
  require(h.kind == 2, Errc::parse_error, path.string() + " is not an objectnet checkpoint");
  ObjectNetCheckpoint ckpt;
  ckpt.objectnet.n_z = static_cast<int>(h.n_z);
  ckpt.objectnet.n_p = static_cast<int>(h.n_p);
  ckpt.objectnet.latent_dim = static_cast<int>(h.latent_dim);
  ckpt.objectnet.hidden = static_cast<int>(h.hidden);
  ckpt.objectnet.scale_multiplier = h.scale_mult;
  read_layers(in, h, ckpt.objectnet.layers, path.string());
  ckpt.objectnet.validate();
  ckpt.object_latents.resize(h.n_objects);
  for (auto& latent : ckpt.object_latents) {
    latent.resize(h.latent_dim);
    read_tensor(in, latent);
  }
  ckpt.template_extrinsics.resize(h.n_p);
  for (auto& e : ckpt.template_extrinsics) e = read_extrinsics(in);
  return ckpt;
}

namespace {

template <std::size_t N>
std::uint64_t layers_checksum(const std::array<WeightNormLayer, N>& layers) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const auto& layer : layers) {
    hash = fnv1a64(layer.V.data(), sizeof(double) * static_cast<std::size_t>(layer.V.size()), hash);
    hash = fnv1a64(layer.g.data(), sizeof(double) * static_cast<std::size_t>(layer.g.size()), hash);
    hash = fnv1a64(layer.b.data(), sizeof(double) * static_cast<std::size_t>(layer.b.size()), hash);
  }
  return hash;
}

}  // namespace

std::uint64_t decoder_checksum(const DecoderWeights& w) { return layers_checksum(w.layers); }

std::uint64_t objectnet_checksum(const ObjectNetWeights& w) {
  std::uint64_t hash = layers_checksum(w.layers);
  return fnv1a64(&w.scale_multiplier, sizeof(double), hash);
}

}  // namespace psdf
