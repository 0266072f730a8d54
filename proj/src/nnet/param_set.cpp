#include "sci/nnet/param_set.hpp"

#include "sci/random.hpp"

namespace sci::nn {

std::string to_string(Partition p) {
  switch (p) {
    case Partition::kEncoder:
      return "encoder";
    case Partition::kDecoder:
      return "decoder";
    case Partition::kHead:
      return "head";
  }
  return "?";
}

Partition partition_from_string(const std::string& s) {
  if (s == "encoder") return Partition::kEncoder;
  if (s == "decoder") return Partition::kDecoder;
  if (s == "head") return Partition::kHead;
  throw ConfigError("unknown partition tag '" + s + "' (expected encoder, decoder or head)");
}

std::set<Partition> parse_partitions(const std::vector<std::string>& tags) {
  std::set<Partition> out;
  for (const auto& t : tags) out.insert(partition_from_string(t));
  return out;
}

std::uint64_t param_digest(const ParamSet& params, std::optional<Partition> part) {
  std::uint64_t h = fnv1a64("", 0);
  for (const auto& e : params.entries()) {
    if (part && e.partition != *part) continue;
    h = fnv1a64(e.name, h);
    h = fnv1a64(e.value.ptr(), e.value.size() * sizeof(float), h);
  }
  return h;
}

}  // namespace sci::nn
