#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sci/kv_config.hpp"
#include "sci/random.hpp"
#include "sci/tensor.hpp"
#include "sci/types.hpp"

namespace sci::scene {

enum class ShapeKind { kRectangle, kDisk };

std::string to_string(ShapeKind s);
ShapeKind shape_from_string(const std::string& s);

inline constexpr double kMaxSpeed = 3.0;
inline constexpr double kMinDepth = 1.0;
inline constexpr double kMaxDepth = 80.0;

// One moving object. Position is the top-left corner of the bounding box at
// frame 0, in pixels; pixel (i, j) is covered when its centre (j + 0.5,
// i + 0.5) falls inside the shape.
struct SceneObject {
  ShapeKind shape = ShapeKind::kRectangle;
  double x = 0.0;
  double y = 0.0;
  double width = 4.0;   // for disks, the diameter
  double height = 4.0;  // ignored for disks
  double vx = 0.0;
  double vy = 0.0;
  float intensity = 1.0f;
  double depth = 1.0;
};

// Depth assigned to an object of the given intensity: brighter is nearer,
// 1.0 maps to kMinDepth and 0.2 to kMaxDepth.
double depth_for_intensity(double intensity);

struct SceneConfig {
  std::size_t t = 8;
  std::size_t h = 32;
  std::size_t w = 32;
  std::size_t count = 1;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  std::vector<ShapeKind> shapes = {ShapeKind::kRectangle, ShapeKind::kDisk};
  double max_speed = 1.0;
  double min_size = 4.0;
  double max_size = 12.0;
  double background = 0.05;
  double min_intensity = 0.2;
  double max_intensity = 1.0;
  // Minimum intensity gap between any two objects and the background.
  double min_contrast = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  static SceneConfig from_kv(KvConfig& kv);
  std::string to_kv_text() const;
};

struct Scene {
  VideoCube video;
  Tensor<std::uint8_t> edges;  // (T, H, W)
  Tensor<float> depth;         // (T, H, W); 0 where invalid
  Tensor<std::uint8_t> valid;  // (T, H, W)
};

// Renders objects back to front (largest depth first) over a constant background.
Scene render_scene(std::size_t t, std::size_t h, std::size_t w, const std::vector<SceneObject>& objects,
                   double background);

std::vector<SceneObject> sample_objects(const SceneConfig& cfg, RandomStream& stream);
Scene gen_scene(const SceneConfig& cfg, RandomStream& stream);

// Scene i is drawn from derive_stream(cfg.seed, "scene/<i>").
Scene gen_scene_at(const SceneConfig& cfg, std::size_t index);

struct Dataset {
  std::vector<Scene> scenes;
  std::string manifest;  // key = value text written alongside the tensors

  std::size_t size() const { return scenes.size(); }
  // Digest over the four stacked tensors.
  std::uint64_t digest() const;
};

Dataset gen_dataset(const SceneConfig& cfg);

// video.cdt (N,T,H,W) real32, edges.cdt and valid.cdt uint8, depth.cdt real32, manifest.txt.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

// Binary PGM ("P5") frames.
struct PgmImage {
  Tensor<std::uint8_t> pixels;  // (H, W)
  unsigned maxval = 255;
};

PgmImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Tensor<std::uint8_t>& pixels, unsigned maxval = 255);

// All regular files of `dir` in lexicographic order, each scaled by 1/maxval.
VideoCube ingest_frames(const std::filesystem::path& dir);

}  // namespace sci::scene
