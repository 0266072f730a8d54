#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "sci/nnet/model.hpp"
#include "sci/nnet/optim.hpp"
#include "sci/nnet/param_set.hpp"
#include "sci/types.hpp"

namespace sci::nn {

// "CDP1" file: magic, u32 metadata length, metadata text (key = value lines:
// model configuration echo plus provenance), u32 record count, then records
// of (u16 name length, name, u8 kind, CDT1 tensor). Kinds 0-2 are parameter
// partitions, 3/4 Adam first/second moments, 5 the sub-mask stack.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  ParamSet params;
  std::optional<AdamState<float>> adam;
  std::optional<SubMaskStack> submask;

  ModelConfig model_config() const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Digest of the encoded checkpoint bytes.
std::uint64_t checkpoint_digest(const Checkpoint& ckpt);

}  // namespace sci::nn
