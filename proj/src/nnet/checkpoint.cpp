#include "sci/nnet/checkpoint.hpp"

#include <cstring>

#include "sci/random.hpp"
#include "sci/tensor_io.hpp"

namespace sci::nn {

namespace {

enum RecordKind : std::uint8_t { kEnc = 0, kDec = 1, kHead = 2, kAdamM = 3, kAdamV = 4, kMask = 5 };

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  if (b.size() < pos + 4) throw FormatError("CDP1 truncated at byte " + std::to_string(b.size()));
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[pos + i]} << (8 * i);
  pos += 4;
  return v;
}

void put_record(std::vector<std::uint8_t>& out, const std::string& name, std::uint8_t kind,
                const std::vector<std::uint8_t>& tensor) {
  if (name.size() > 0xffff) throw FormatError("record name too long: " + name);
  out.push_back(static_cast<std::uint8_t>(name.size() & 0xff));
  out.push_back(static_cast<std::uint8_t>(name.size() >> 8));
  out.insert(out.end(), name.begin(), name.end());
  out.push_back(kind);
  out.insert(out.end(), tensor.begin(), tensor.end());
}

std::string meta_text(const std::map<std::string, std::string>& meta) {
  std::string s;
  for (const auto& [k, v] : meta) s += k + " = " + v + "\n";
  return s;
}

}  // namespace

ModelConfig Checkpoint::model_config() const {
  KvConfig kv;
  for (const auto& [k, v] : meta) kv.set(k, v);
  return ModelConfig::from_kv(kv);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out{'C', 'D', 'P', '1'};
  auto meta = ckpt.meta;
  if (ckpt.adam) meta["adam_step"] = std::to_string(ckpt.adam->step);
  const std::string text = meta_text(meta);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  std::uint32_t count = static_cast<std::uint32_t>(ckpt.params.size());
  if (ckpt.adam) count += static_cast<std::uint32_t>(2 * ckpt.params.size());
  if (ckpt.submask) count += 1;
  put_u32(out, count);
  for (const auto& e : ckpt.params.entries()) {
    put_record(out, e.name, static_cast<std::uint8_t>(e.partition), encode_tensor(e.value));
  }
  if (ckpt.adam) {
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      put_record(out, ckpt.params.entry(i).name, kAdamM, encode_tensor(ckpt.adam->m[i]));
    }
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      put_record(out, ckpt.params.entry(i).name, kAdamV, encode_tensor(ckpt.adam->v[i]));
    }
  }
  if (ckpt.submask) put_record(out, "mask", kMask, encode_tensor(ckpt.submask->data));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "CDP1", 4) != 0) throw FormatError("CDP1 at byte 0: bad magic");
  std::size_t pos = 4;
  const std::uint32_t text_len = get_u32(bytes, pos);
  if (bytes.size() < pos + text_len) throw FormatError("CDP1 truncated metadata at byte " + std::to_string(pos));
  const std::string text(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + text_len));
  pos += text_len;
  Checkpoint ckpt;
  ckpt.meta = KvConfig::parse(text, "checkpoint metadata").values();
  const std::uint32_t count = get_u32(bytes, pos);
  ParamSet m, v;
  for (std::uint32_t r = 0; r < count; ++r) {
    if (bytes.size() < pos + 3) throw FormatError("CDP1 truncated record at byte " + std::to_string(pos));
    const std::size_t name_len = bytes[pos] | (std::size_t{bytes[pos + 1]} << 8);
    pos += 2;
    if (bytes.size() < pos + name_len + 1) throw FormatError("CDP1 truncated record name at byte " + std::to_string(pos));
    std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                     bytes.begin() + static_cast<std::ptrdiff_t>(pos + name_len));
    pos += name_len;
    const std::uint8_t kind = bytes[pos++];
    const std::size_t record_at = pos;
    auto any = decode_tensor(bytes, pos);
    if (kind == kMask) {
      auto* u = std::get_if<Tensor<std::uint8_t>>(&any);
      if (!u || u->ndim() != 3) throw FormatError("CDP1 mask record at byte " + std::to_string(record_at) + " is invalid");
      SubMaskStack sub;
      sub.data = std::move(*u);
      if (auto it = ckpt.meta.find("rho"); it != ckpt.meta.end()) sub.rho_nominal = std::stod(it->second);
      ckpt.submask = std::move(sub);
      continue;
    }
    auto* f = std::get_if<Tensor<float>>(&any);
    if (!f) throw FormatError("CDP1 record " + name + " at byte " + std::to_string(record_at) + " is not real32");
    switch (kind) {
      case kEnc:
      case kDec:
      case kHead:
        ckpt.params.add(name, static_cast<Partition>(kind), std::move(*f));
        break;
      case kAdamM:
        m.add(name, Partition::kEncoder, std::move(*f));
        break;
      case kAdamV:
        v.add(name, Partition::kEncoder, std::move(*f));
        break;
      default:
        throw FormatError("CDP1 unknown record kind " + std::to_string(kind) + " at byte " + std::to_string(record_at - 1));
    }
  }
  if (pos != bytes.size()) throw FormatError("CDP1 trailing bytes at " + std::to_string(pos));
  if (m.size() || v.size()) {
    if (m.size() != ckpt.params.size() || v.size() != ckpt.params.size()) {
      throw FormatError("CDP1 optimizer state does not cover every parameter");
    }
    AdamState<float> st;
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      const auto& e = ckpt.params.entry(i);
      st.m.add(e.name, e.partition, m[i]);
      st.v.add(e.name, e.partition, v[i]);
    }
    auto it = ckpt.meta.find("adam_step");
    st.step = it == ckpt.meta.end() ? 0 : std::stoull(it->second);
    ckpt.adam = std::move(st);
  }
  ckpt.meta.erase("adam_step");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

std::uint64_t checkpoint_digest(const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace sci::nn
