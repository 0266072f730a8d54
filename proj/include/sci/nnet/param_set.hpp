#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "sci/error.hpp"
#include "sci/tensor.hpp"

namespace sci::nn {

enum class Partition : std::uint8_t { kEncoder = 0, kDecoder = 1, kHead = 2 };

std::string to_string(Partition p);
Partition partition_from_string(const std::string& s);
std::set<Partition> parse_partitions(const std::vector<std::string>& tags);

// Ordered, named parameter tensors. Order is insertion order and is the
// canonical order for initialization, serialization and optimizer state.
template <class Real>
class ParamSetT {
 public:
  struct Entry {
    std::string name;
    Partition partition;
    Tensor<Real> value;
  };

  std::size_t add(std::string name, Partition part, Tensor<Real> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), part, std::move(value)});
    return entries_.size() - 1;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  Entry& entry(std::size_t i) { return entries_.at(i); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  Tensor<Real>& operator[](std::size_t i) { return entries_[i].value; }
  const Tensor<Real>& operator[](std::size_t i) const { return entries_[i].value; }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const Tensor<Real>& at(const std::string& name) const {
    auto i = find(name);
    if (!i) throw ConfigError("no parameter named " + name);
    return entries_[*i].value;
  }
  Tensor<Real>& at(const std::string& name) {
    auto i = find(name);
    if (!i) throw ConfigError("no parameter named " + name);
    return entries_[*i].value;
  }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  ParamSetT zeros_like() const {
    ParamSetT out;
    for (const auto& e : entries_) out.add(e.name, e.partition, Tensor<Real>(e.value.shape()));
    return out;
  }

  void fill(Real v) {
    for (auto& e : entries_) e.value.fill(v);
  }

  template <class U>
  ParamSetT<U> cast() const {
    ParamSetT<U> out;
    for (const auto& e : entries_) out.add(e.name, e.partition, e.value.template cast<U>());
    return out;
  }

  bool same_layout(const ParamSetT& o) const {
    if (o.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (o.entries_[i].name != entries_[i].name || o.entries_[i].value.shape() != entries_[i].value.shape()) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamSet = ParamSetT<float>;

// FNV-1a over the float bytes of every tensor in `part` (all tensors when
// unset), in canonical order, names included.
std::uint64_t param_digest(const ParamSet& params, std::optional<Partition> part = std::nullopt);

}  // namespace sci::nn
