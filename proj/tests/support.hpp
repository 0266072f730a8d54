#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "sci/random.hpp"
#include "sci/tensor.hpp"
#include "sci/types.hpp"

namespace sci::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sci_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Tensor<float> random_real(const Shape& s, RandomStream& r, double lo = 0.0, double hi = 1.0) {
  Tensor<float> t(s);
  for (auto& v : t.vec()) v = static_cast<float>(r.uniform(lo, hi));
  return t;
}

inline Tensor<std::uint8_t> random_binary(const Shape& s, RandomStream& r, double p = 0.5) {
  Tensor<std::uint8_t> t(s);
  for (auto& v : t.vec()) v = r.bernoulli(p) ? 1 : 0;
  return t;
}

inline VideoCube random_cube(std::size_t t, std::size_t h, std::size_t w, RandomStream& r) {
  return VideoCube(random_real({t, h, w}, r));
}

inline MaskStack mask_from(Tensor<std::uint8_t> data) {
  MaskStack m;
  m.data = std::move(data);
  return m;
}

}  // namespace sci::testing
