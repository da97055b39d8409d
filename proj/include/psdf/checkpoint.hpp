#pragma once

#include <filesystem>
#include <vector>

#include "psdf/networks.hpp"
#include "psdf/patchrep.hpp"

namespace psdf {

// Checkpoint kind 1: patch decoder plus per-object shape codes.
struct DecoderCheckpoint {
  DecoderWeights decoder;
  std::vector<ShapeCodes> codes;
};

// Checkpoint kind 2: object-level regressor, its training latents, and the
// template extrinsics used for the output-bias initialization.
struct ObjectNetCheckpoint {
  ObjectNetWeights objectnet;
  std::vector<VectorXd> object_latents;
  std::vector<PatchExtrinsics> template_extrinsics;
};

void save_checkpoint(const DecoderCheckpoint& ckpt, const std::filesystem::path& path);
void save_checkpoint(const ObjectNetCheckpoint& ckpt, const std::filesystem::path& path);

// Peeks at the header; 1 = decoder, 2 = objectnet.
int checkpoint_kind(const std::filesystem::path& path);

DecoderCheckpoint load_decoder_checkpoint(const std::filesystem::path& path);
ObjectNetCheckpoint load_objectnet_checkpoint(const std::filesystem::path& path);

// Bitwise digests for frozen-parameter contracts.
std::uint64_t decoder_checksum(const DecoderWeights& w);
std::uint64_t objectnet_checksum(const ObjectNetWeights& w);

}  // namespace psdf
