#include "sci/scenegen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sci/error.hpp"
#include "sci/tensor_io.hpp"

namespace sci::scene {

std::string to_string(ShapeKind s) { return s == ShapeKind::kRectangle ? "rectangle" : "disk"; }

ShapeKind shape_from_string(const std::string& s) {
  if (s == "rectangle" || s == "rect") return ShapeKind::kRectangle;
  if (s == "disk") return ShapeKind::kDisk;
  throw ConfigError("unknown shape '" + s + "' (expected rectangle or disk)");
}

double depth_for_intensity(double intensity) {
  const double d = kMinDepth + (kMaxDepth - kMinDepth) * (1.0 - intensity) / 0.8;
  return std::clamp(d, kMinDepth, kMaxDepth);
}

void SceneConfig::validate() const {
  if (t == 0 || h == 0 || w == 0) throw ConfigError("scene dimensions must be positive");
  if (min_objects > max_objects) throw ConfigError("min_objects exceeds max_objects");
  if (shapes.empty()) throw ConfigError("scene shape set is empty");
  if (!(max_speed >= 0.0 && max_speed <= kMaxSpeed)) {
    throw ConfigError("max_speed must lie in [0, 3] pixels/frame, got " + std::to_string(max_speed));
  }
  if (!(min_size >= 1.0 && min_size <= max_size)) throw ConfigError("object sizes need 1 <= min_size <= max_size");
  if (max_size > static_cast<double>(std::min(h, w))) {
    throw ConfigError("objects of size " + std::to_string(max_size) + " do not fit a " + std::to_string(h) + "x" +
                      std::to_string(w) + " frame");
  }
  if (!(background >= 0.0 && background <= 1.0)) throw ConfigError("background intensity must lie in [0, 1]");
  if (!(min_intensity <= max_intensity && min_intensity >= 0.0 && max_intensity <= 1.0)) {
    throw ConfigError("object intensities need 0 <= min_intensity <= max_intensity <= 1");
  }
  if (!(min_contrast >= 0.0)) throw ConfigError("min_contrast must be >= 0");
  if (max_objects > 0 && min_intensity - background < min_contrast) {
    throw ConfigError("min_intensity is within min_contrast of the background");
  }
  if (max_objects > 1 && (max_intensity - min_intensity) < min_contrast * static_cast<double>(max_objects - 1)) {
    throw ConfigError("intensity range cannot separate " + std::to_string(max_objects) + " objects by min_contrast");
  }
}

SceneConfig SceneConfig::from_kv(KvConfig& kv) {
  SceneConfig c;
  c.t = kv.get_u64("t", c.t);
  c.h = kv.get_u64("h", c.h);
  c.w = kv.get_u64("w", c.w);
  c.count = kv.get_u64("count", c.count);
  c.min_objects = kv.get_u64("min_objects", c.min_objects);
  c.max_objects = kv.get_u64("max_objects", c.max_objects);
  if (kv.has("shapes")) {
    c.shapes.clear();
    std::stringstream ss(kv.get_string("shapes", ""));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char ch) { return std::isspace(ch); }),
                 item.end());
      if (!item.empty()) c.shapes.push_back(shape_from_string(item));
    }
  }
  c.max_speed = kv.get_double("max_speed", c.max_speed);
  c.min_size = kv.get_double("min_size", c.min_size);
  c.max_size = kv.get_double("max_size", c.max_size);
  c.background = kv.get_double("background", c.background);
  c.min_intensity = kv.get_double("min_intensity", c.min_intensity);
  c.max_intensity = kv.get_double("max_intensity", c.max_intensity);
  c.min_contrast = kv.get_double("min_contrast", c.min_contrast);
  c.seed = kv.get_u64("seed", c.seed);
  c.validate();
  return c;
}

std::string SceneConfig::to_kv_text() const {
  std::ostringstream os;
  os.precision(17);
  std::string shape_list;
  for (auto s : shapes) shape_list += (shape_list.empty() ? "" : ",") + to_string(s);
  os << "t = " << t << "\nh = " << h << "\nw = " << w << "\ncount = " << count << "\nmin_objects = " << min_objects
     << "\nmax_objects = " << max_objects << "\nshapes = " << shape_list << "\nmax_speed = " << max_speed
     << "\nmin_size = " << min_size << "\nmax_size = " << max_size << "\nbackground = " << background
     << "\nmin_intensity = " << min_intensity << "\nmax_intensity = " << max_intensity
     << "\nmin_contrast = " << min_contrast << "\nseed = " << seed << "\n";
  return os.str();
}

namespace {

bool covers(const SceneObject& o, double px, double py) {
  if (o.shape == ShapeKind::kRectangle) {
    return px >= o.x && px < o.x + o.width && py >= o.y && py < o.y + o.height;
  }
  const double r = o.width / 2.0;
  const double dx = px - (o.x + r), dy = py - (o.y + r);
  return dx * dx + dy * dy <= r * r;
}

}  // namespace

Scene render_scene(std::size_t t, std::size_t h, std::size_t w, const std::vector<SceneObject>& objects,
                   double background) {
  if (t == 0 || h == 0 || w == 0) throw ConfigError("scene dimensions must be positive");
  for (const auto& o : objects) {
    const double oh = o.shape == ShapeKind::kDisk ? o.width : o.height;
    if (o.width > static_cast<double>(w) || oh > static_cast<double>(h)) {
      throw ConfigError("object larger than the " + std::to_string(h) + "x" + std::to_string(w) + " frame");
    }
    if (o.depth < kMinDepth || o.depth > kMaxDepth) throw ConfigError("object depth outside [1, 80]");
  }
  std::vector<std::size_t> order(objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return objects[a].depth > objects[b].depth; });

  const std::size_t hw = h * w;
  Tensor<float> video({t, h, w});
  Scene s;
  s.edges = Tensor<std::uint8_t>({t, h, w});
  s.depth = Tensor<float>({t, h, w});
  s.valid = Tensor<std::uint8_t>({t, h, w});
  std::vector<int> owner(hw);
  for (std::size_t f = 0; f < t; ++f) {
    std::fill(owner.begin(), owner.end(), -1);
    for (auto idx : order) {
      const auto& o = objects[idx];
      SceneObject moved = o;
      moved.x += o.vx * static_cast<double>(f);
      moved.y += o.vy * static_cast<double>(f);
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          if (covers(moved, static_cast<double>(j) + 0.5, static_cast<double>(i) + 0.5)) {
            owner[i * w + j] = static_cast<int>(idx);
          }
        }
      }
    }
    const std::size_t base = f * hw;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t p = i * w + j;
        const int own = owner[p];
        if (own < 0) {
          video[base + p] = static_cast<float>(background);
          continue;
        }
        video[base + p] = objects[static_cast<std::size_t>(own)].intensity;
        s.depth[base + p] = static_cast<float>(objects[static_cast<std::size_t>(own)].depth);
        s.valid[base + p] = 1;
        const bool boundary = (i > 0 && owner[p - w] != own) || (i + 1 < h && owner[p + w] != own) ||
                              (j > 0 && owner[p - 1] != own) || (j + 1 < w && owner[p + 1] != own);
        s.edges[base + p] = boundary ? 1 : 0;
      }
    }
  }
  s.video = VideoCube(std::move(video));
  return s;
}

std::vector<SceneObject> sample_objects(const SceneConfig& cfg, RandomStream& stream) {
  cfg.validate();
  const auto n = cfg.min_objects + stream.below(cfg.max_objects - cfg.min_objects + 1);
  std::vector<SceneObject> objs;
  std::vector<double> levels;
  for (std::size_t k = 0; k < n; ++k) {
    SceneObject o;
    o.shape = cfg.shapes[stream.below(cfg.shapes.size())];
    o.width = stream.uniform(cfg.min_size, cfg.max_size);
    o.height = o.shape == ShapeKind::kDisk ? o.width : stream.uniform(cfg.min_size, cfg.max_size);
    o.x = stream.uniform(0.0, static_cast<double>(cfg.w) - o.width);
    o.y = stream.uniform(0.0, static_cast<double>(cfg.h) - o.height);
    const double speed = stream.uniform(0.0, cfg.max_speed);
    const double angle = stream.uniform(0.0, 2.0 * std::numbers::pi);
    o.vx = speed * std::cos(angle);
    o.vy = speed * std::sin(angle);
    // Rejection keeps every pair of objects at least min_contrast apart.
    double level = 0.0;
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      level = stream.uniform(cfg.min_intensity, cfg.max_intensity);
      placed = std::all_of(levels.begin(), levels.end(),
                           [&](double other) { return std::fabs(other - level) >= cfg.min_contrast; });
    }
    if (!placed) throw ConfigError("could not place object intensities min_contrast apart");
    levels.push_back(level);
    o.intensity = static_cast<float>(level);
    o.depth = depth_for_intensity(o.intensity);
    objs.push_back(o);
  }
  return objs;
}

Scene gen_scene(const SceneConfig& cfg, RandomStream& stream) {
  return render_scene(cfg.t, cfg.h, cfg.w, sample_objects(cfg, stream), cfg.background);
}

Scene gen_scene_at(const SceneConfig& cfg, std::size_t index) {
  auto stream = derive_stream(cfg.seed, "scene/" + std::to_string(index));
  return gen_scene(cfg, stream);
}

namespace {

template <class T, class Get>
Tensor<T> stack_field(const std::vector<Scene>& scenes, Get get) {
  std::vector<Tensor<T>> parts;
  parts.reserve(scenes.size());
  for (const auto& s : scenes) parts.push_back(get(s));
  return stack_leading(parts);
}

Tensor<float> stacked_video(const Dataset& d) {
  return stack_field<float>(d.scenes, [](const Scene& s) { return s.video.tensor(); });
}
Tensor<std::uint8_t> stacked_edges(const Dataset& d) {
  return stack_field<std::uint8_t>(d.scenes, [](const Scene& s) { return s.edges; });
}
Tensor<float> stacked_depth(const Dataset& d) {
  return stack_field<float>(d.scenes, [](const Scene& s) { return s.depth; });
}
Tensor<std::uint8_t> stacked_valid(const Dataset& d) {
  return stack_field<std::uint8_t>(d.scenes, [](const Scene& s) { return s.valid; });
}

}  // namespace

std::uint64_t Dataset::digest() const {
  if (scenes.empty()) return fnv1a64("");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto fold = [&](const std::vector<std::uint8_t>& bytes) { h = fnv1a64(bytes.data(), bytes.size(), h); };
  fold(encode_tensor(stacked_video(*this)));
  fold(encode_tensor(stacked_edges(*this)));
  fold(encode_tensor(stacked_depth(*this)));
  fold(encode_tensor(stacked_valid(*this)));
  return h;
}

Dataset gen_dataset(const SceneConfig& cfg) {
  cfg.validate();
  if (cfg.count == 0) throw ConfigError("scene count must be positive");
  Dataset d;
  d.scenes.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) d.scenes.push_back(gen_scene_at(cfg, i));
  d.manifest = cfg.to_kv_text();
  return d;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  if (data.scenes.empty()) throw DataError("refusing to write an empty dataset");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  tensor_write(dir / "video.cdt", stacked_video(data));
  tensor_write(dir / "edges.cdt", stacked_edges(data));
  tensor_write(dir / "depth.cdt", stacked_depth(data));
  tensor_write(dir / "valid.cdt", stacked_valid(data));
  const std::string text = data.manifest + "scenes = " + std::to_string(data.size()) +
                           "\ndigest = " + digest_hex(data.digest()) + "\n";
  write_file_bytes(dir / "manifest.txt", std::vector<std::uint8_t>(text.begin(), text.end()));
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto video = read_real_tensor(dir / "video.cdt");
  const auto edges = read_u8_tensor(dir / "edges.cdt");
  const auto depth = read_real_tensor(dir / "depth.cdt");
  const auto valid = read_u8_tensor(dir / "valid.cdt");
  if (video.ndim() != 4) throw ShapeError(dir.string() + "/video.cdt must be (N,T,H,W), got " + shape_str(video.shape()));
  if (edges.shape() != video.shape() || depth.shape() != video.shape() || valid.shape() != video.shape()) {
    throw ShapeError(dir.string() + ": dataset tensors disagree in shape");
  }
  Dataset d;
  for (std::size_t i = 0; i < video.dim(0); ++i) {
    Scene s;
    s.video = VideoCube(slice_leading(video, i));
    s.edges = slice_leading(edges, i);
    s.depth = slice_leading(depth, i);
    s.valid = slice_leading(valid, i);
    d.scenes.push_back(std::move(s));
  }
  if (std::filesystem::exists(dir / "manifest.txt")) {
    const auto bytes = read_file_bytes(dir / "manifest.txt");
    d.manifest.assign(bytes.begin(), bytes.end());
  }
  return d;
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(const std::vector<std::uint8_t>& b, std::size_t& pos, const std::string& file) {
  for (;;) {
    while (pos < b.size() && std::isspace(b[pos])) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::string tok;
  while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#') tok.push_back(static_cast<char>(b[pos++]));
  if (tok.empty()) throw FormatError(file + ": truncated PGM header");
  return tok;
}

unsigned pgm_number(const std::string& tok, const std::string& file, const char* what) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isdigit(c); }) ||
      tok.size() > 9) {
    throw FormatError(file + ": bad PGM " + what + " '" + tok + "'");
  }
  return static_cast<unsigned>(std::stoul(tok));
}

}  // namespace

PgmImage read_pgm(const std::filesystem::path& path) {
  const std::string file = path.string();
  const auto b = read_file_bytes(path);
  std::size_t pos = 0;
  if (pgm_token(b, pos, file) != "P5") throw FormatError(file + ": not a binary PGM (P5) file");
  const unsigned w = pgm_number(pgm_token(b, pos, file), file, "width");
  const unsigned h = pgm_number(pgm_token(b, pos, file), file, "height");
  const unsigned maxval = pgm_number(pgm_token(b, pos, file), file, "maxval");
  if (w == 0 || h == 0) throw FormatError(file + ": PGM has zero size");
  if (maxval == 0 || maxval > 255) throw FormatError(file + ": PGM maxval " + std::to_string(maxval) + " not in 1..255");
  if (pos >= b.size() || !std::isspace(b[pos])) throw FormatError(file + ": truncated PGM header");
  ++pos;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (b.size() - pos < n) throw FormatError(file + ": PGM pixel data truncated");
  PgmImage img;
  img.maxval = maxval;
  img.pixels = Tensor<std::uint8_t>({h, w});
  std::copy(b.begin() + static_cast<std::ptrdiff_t>(pos), b.begin() + static_cast<std::ptrdiff_t>(pos + n),
            img.pixels.vec().begin());
  for (auto v : img.pixels.data()) {
    if (v > maxval) throw FormatError(file + ": PGM sample exceeds maxval");
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Tensor<std::uint8_t>& pixels, unsigned maxval) {
  if (pixels.ndim() != 2) throw ShapeError("PGM frames are 2-D, got " + shape_str(pixels.shape()));
  if (maxval == 0 || maxval > 255) throw ConfigError("PGM maxval must be 1..255");
  const std::string header =
      "P5\n" + std::to_string(pixels.dim(1)) + " " + std::to_string(pixels.dim(0)) + "\n" + std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), pixels.vec().begin(), pixels.vec().end());
  write_file_bytes(path, out);
}

VideoCube ingest_frames(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw DataError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  if (files.empty()) throw DataError(dir.string() + " contains no frames");
  std::sort(files.begin(), files.end());
  std::vector<Tensor<float>> frames;
  for (const auto& f : files) {
    const auto img = read_pgm(f);
    if (!frames.empty() && img.pixels.shape() != frames.front().shape()) {
      throw DataError(f.string() + ": frame size " + shape_str(img.pixels.shape()) + " differs from " +
                      shape_str(frames.front().shape()));
    }
    Tensor<float> fr(img.pixels.shape());
    for (std::size_t i = 0; i < fr.size(); ++i) fr[i] = static_cast<float>(img.pixels[i]) / static_cast<float>(img.maxval);
    frames.push_back(std::move(fr));
  }
  return VideoCube(stack_leading(frames));
}

}  // namespace sci::scene
