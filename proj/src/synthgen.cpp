// SPDX-License-Identifier: Apache-2.0

#include "steve/synthgen.hpp"

#include "steve/png_io.hpp"
#include "steve/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace steve {

namespace {

constexpr int kShapeKinds = 3;
constexpr int kMaxAttempts = 100;

int imod(int v, int m) { return ((v % m) + m) % m; }

int floor_div(int a, int b) {
  const int q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}

struct Rgb {
  float r, g, b;
};

struct TextureInst {
  int kind;    // 0 stripes, 1 checker, 2 dots, 3 flat
  int period;  // pixels
  int orient;  // stripes only: 0 rows, 1 columns, 2 diagonal
  Rgb a, b;
};

int texture_kind_id(const std::string& name) {
  if (name == "stripes") return 0;
  if (name == "checker") return 1;
  if (name == "dots") return 2;
  if (name == "flat") return 3;
  throw std::invalid_argument("synthgen: unknown texture kind '" + name + "'");
}

Rgb draw_color(Rng& rng) {
  return {static_cast<float>(rng.uniform(0.15, 0.95)),
          static_cast<float>(rng.uniform(0.15, 0.95)),
          static_cast<float>(rng.uniform(0.15, 0.95))};
}

/// Two colors far enough apart that the pattern stays visible.
void draw_color_pair(Rng& rng, Rgb& a, Rgb& b) {
  a = draw_color(rng);
  for (int i = 0; i < 16; ++i) {
    b = draw_color(rng);
    const double d = std::fabs(a.r - b.r) + std::fabs(a.g - b.g) + std::fabs(a.b - b.b);
    if (d >= 0.6) return;
  }
}

TextureInst draw_texture(Rng& rng, const std::vector<std::string>& bank,
                         bool ood, int* bank_index) {
  TextureInst t;
  const std::uint64_t pick = rng.uniform_int(bank.size());
  if (bank_index) *bank_index = static_cast<int>(pick);
  t.kind = texture_kind_id(bank[pick]);
  t.period = ood ? static_cast<int>(8 + rng.uniform_int(5))    // 8..12
                 : static_cast<int>(3 + rng.uniform_int(4));   // 3..6
  t.orient = static_cast<int>(rng.uniform_int(3));
  draw_color_pair(rng, t.a, t.b);
  return t;
}

Rgb eval_texture(const TextureInst& t, int lx, int ly) {
  switch (t.kind) {
    case 0: {  // stripes
      const int axis = t.orient == 0 ? ly : (t.orient == 1 ? lx : lx + ly);
      return imod(axis, 2 * t.period) < t.period ? t.a : t.b;
    }
    case 1: {  // checker
      return ((floor_div(lx, t.period) + floor_div(ly, t.period)) & 1) ? t.b : t.a;
    }
    case 2: {  // dots
      const int half = t.period / 2;
      const int dx = imod(lx, t.period) - half;
      const int dy = imod(ly, t.period) - half;
      const int r = std::max(1, t.period / 3);
      return dx * dx + dy * dy <= r * r ? t.b : t.a;
    }
    default:
      return t.a;
  }
}

bool covers(int shape, int cx, int cy, int r, int x, int y) {
  const int dx = x - cx, dy = y - cy;
  switch (shape) {
    case 0:  // square
      return std::abs(dx) <= r && std::abs(dy) <= r;
    case 1:  // circle
      return dx * dx + dy * dy <= r * r;
    default:  // upward triangle: apex (cx, cy-r), base width 2r at cy+r
      return dy >= -r && dy <= r && 2 * std::abs(dx) <= dy + r;
  }
}

/// One bounce step inside [lo, hi].
void bounce(double& p, double& v, double lo, double hi) {
  p += v;
  if (p > hi) {
    p = 2 * hi - p;
    v = -v;
  }
  if (p < lo) {
    p = 2 * lo - p;
    v = -v;
  }
}

struct ObjectState {
  int shape;
  int radius;
  TextureInst texture;
  int texture_bank_index;
  double x, y;    // center
  double vx, vy;  // pixels per frame
};

}  // namespace

void SceneConfig::validate() const {
  check(k_min >= 1 && k_max >= k_min, "synthgen: object count range invalid");
  check(num_frames >= 1, "synthgen: num_frames must be >= 1");
  check(image_size % 4 == 0 && image_size % 16 == 0 && image_size % 32 == 0,
        "synthgen: image_size must be divisible by 4, 16 and 32");
  check(!texture_bank.empty(), "synthgen: texture bank empty");
  for (const auto& name : texture_bank) texture_kind_id(name);
  check(static_fraction >= 0.0 && static_fraction <= 1.0,
        "synthgen: static_fraction must lie in [0,1]");
  check(max_pan >= 0.0, "synthgen: max_pan must be nonnegative");
}

VideoClip generate_clip(const SceneConfig& config,
                        std::vector<std::vector<Tensor<std::uint8_t>>>* coverage) {
  config.validate();
  const int s = config.image_size;
  const int rmin = config.min_radius > 0 ? config.min_radius : std::max(3, s / 8);
  const int rmax = config.max_radius > 0 ? config.max_radius : std::max(rmin, s / 5);
  check(rmax >= rmin, "synthgen: radius range invalid");
  if (2 * rmax + 4 > s)
    throw std::invalid_argument("synthgen: invalid-config: objects of radius " +
                                std::to_string(rmax) + " cannot fit a " +
                                std::to_string(s) + "px frame");

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(Rng::mix(config.seed, static_cast<std::uint64_t>(attempt)));
    const int k = config.k_min +
        static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
            config.k_max - config.k_min + 1)));

    std::vector<ObjectState> objs(static_cast<std::size_t>(k));
    for (auto& o : objs) {
      o.shape = static_cast<int>(rng.uniform_int(kShapeKinds));
      o.radius = rmin + static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(rmax - rmin + 1)));
      o.texture = draw_texture(rng, config.texture_bank, config.ood_textures,
                               &o.texture_bank_index);
      const double lo = o.radius + 1.0, hi = s - o.radius - 2.0;
      o.x = rng.uniform(lo, hi);
      o.y = rng.uniform(lo, hi);
      if (rng.bernoulli(config.static_fraction)) {
        o.vx = o.vy = 0.0;
      } else {
        const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double speed = rng.uniform(0.5, 2.0) * (s / 64.0);
        o.vx = speed * std::cos(angle);
        o.vy = speed * std::sin(angle);
      }
    }

    TextureInst bg;
    if (config.background_textured) {
      bg = draw_texture(rng, config.texture_bank, config.ood_textures, nullptr);
      bg.period = std::max(bg.period, 4);
    } else {
      bg.kind = 3;
      const float g = static_cast<float>(rng.uniform(0.05, 0.25));
      bg.a = {g, g, g};
      bg.b = bg.a;
    }

    double pan_x = 0.0, pan_y = 0.0, pan_vx = 0.0, pan_vy = 0.0;
    if (config.camera_pan) {
      pan_vx = rng.uniform(-config.max_pan, config.max_pan);
      pan_vy = rng.uniform(-config.max_pan, config.max_pan);
    }
    const double pan_limit = s / 8.0;

    VideoClip clip;
    clip.seed = config.seed;
    clip.frames.reserve(static_cast<std::size_t>(config.num_frames));
    clip.labels.reserve(static_cast<std::size_t>(config.num_frames));
    std::vector<bool> seen(static_cast<std::size_t>(k + 1), false);
    if (coverage) coverage->clear();

    for (int t = 0; t < config.num_frames; ++t) {
      if (t > 0) {
        for (auto& o : objs)
          if (o.vx != 0.0 || o.vy != 0.0) {
            bounce(o.x, o.vx, o.radius + 1.0, s - o.radius - 2.0);
            bounce(o.y, o.vy, o.radius + 1.0, s - o.radius - 2.0);
          }
        if (config.camera_pan) {
          bounce(pan_x, pan_vx, -pan_limit, pan_limit);
          bounce(pan_y, pan_vy, -pan_limit, pan_limit);
        }
      }
      const int pxi = static_cast<int>(std::lround(pan_x));
      const int pyi = static_cast<int>(std::lround(pan_y));
      std::vector<int> cx(objs.size()), cy(objs.size());
      for (std::size_t i = 0; i < objs.size(); ++i) {
        cx[i] = static_cast<int>(std::lround(objs[i].x)) + pxi;
        cy[i] = static_cast<int>(std::lround(objs[i].y)) + pyi;
      }

      Tensor<float> frame({3, s, s});
      Tensor<std::uint8_t> label({s, s});
      std::vector<Tensor<std::uint8_t>> cover_maps;
      if (coverage)
        cover_maps.assign(objs.size(), Tensor<std::uint8_t>({s, s}));
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          Rgb c;
          int lab = 0;
          bool hit = false;
          for (std::size_t i = 0; i < objs.size(); ++i) {
            const ObjectState& o = objs[i];
            if (!covers(o.shape, cx[i], cy[i], o.radius, x, y)) continue;
            if (coverage) cover_maps[i].at(y, x) = 1;
            if (!hit) {
              c = eval_texture(o.texture, x - cx[i], y - cy[i]);
              lab = static_cast<int>(i) + 1;
              hit = true;
            }
            if (!coverage) break;
          }
          if (!hit) c = eval_texture(bg, x - pxi, y - pyi);
          label.at(y, x) = static_cast<std::uint8_t>(lab);
          seen[static_cast<std::size_t>(lab)] = true;
          frame[(0 * static_cast<std::int64_t>(s) + y) * s + x] = c.r;
          frame[(1 * static_cast<std::int64_t>(s) + y) * s + x] = c.g;
          frame[(2 * static_cast<std::int64_t>(s) + y) * s + x] = c.b;
        }
      clip.frames.push_back(std::move(frame));
      clip.labels.push_back(std::move(label));
      if (coverage) coverage->push_back(std::move(cover_maps));
    }

    bool all_seen = true;
    for (int i = 1; i <= k; ++i) all_seen = all_seen && seen[static_cast<std::size_t>(i)];
    bool fg_frame0 = false;
    for (std::int64_t i = 0; i < clip.labels[0].numel(); ++i)
      fg_frame0 = fg_frame0 || clip.labels[0][i] != 0;
    if (!all_seen || !fg_frame0) continue;

    clip.objects.reserve(objs.size());
    for (std::size_t i = 0; i < objs.size(); ++i)
      clip.objects.push_back({objs[i].shape, objs[i].texture_bank_index,
                              static_cast<int>(i) + 1, objs[i].vx, objs[i].vy});
    return clip;
  }
  throw std::runtime_error("synthgen: no valid scene after " +
                           std::to_string(kMaxAttempts) + " attempts (seed " +
                           std::to_string(config.seed) + ")");
}

void write_dataset(const std::vector<VideoClip>& clips,
                   const std::string& directory, const SceneConfig& config) {
  fs::create_directories(directory);
  nlohmann::json manifest;
  manifest["image_size"] = config.image_size;
  manifest["generator"] = {
      {"k_min", config.k_min},
      {"k_max", config.k_max},
      {"num_frames", config.num_frames},
      {"texture_bank", config.texture_bank},
      {"background_textured", config.background_textured},
      {"camera_pan", config.camera_pan},
      {"max_pan", config.max_pan},
      {"static_fraction", config.static_fraction},
      {"seed", config.seed},
      {"ood_textures", config.ood_textures},
  };
  manifest["clips"] = nlohmann::json::array();
  for (const auto& clip : clips) {
    check(!clip.id.empty(), "write_dataset: clip id empty");
    const fs::path dir = fs::path(directory) / clip.id;
    fs::create_directories(dir);
    for (std::size_t t = 0; t < clip.frames.size(); ++t) {
      write_png_rgb((dir / ("frame_" + std::to_string(t) + ".png")).string(),
                    clip.frames[t]);
      write_png_gray((dir / ("mask_" + std::to_string(t) + ".png")).string(),
                     clip.labels[t]);
    }
    int num_objects = 0;
    for (const auto& l : clip.labels)
      for (std::int64_t i = 0; i < l.numel(); ++i)
        num_objects = std::max(num_objects, static_cast<int>(l[i]));
    manifest["clips"].push_back({{"id", clip.id},
                                 {"num_frames", clip.frames.size()},
                                 {"num_objects", num_objects},
                                 {"seed", clip.seed}});
  }
  std::ofstream out(fs::path(directory) / "manifest.json");
  check(out.good(), "write_dataset: cannot write manifest in " + directory);
  out << manifest.dump(2) << "\n";
}

namespace {

nlohmann::json load_manifest(const std::string& directory) {
  const fs::path path = fs::path(directory) / "manifest.json";
  std::ifstream in(path);
  if (!in.good())
    throw std::runtime_error("read_dataset: missing manifest " + path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("read_dataset: corrupt manifest " + path.string() +
                             ": " + e.what());
  }
  if (!manifest.contains("clips") || !manifest["clips"].is_array())
    throw std::runtime_error("read_dataset: manifest " + path.string() +
                             " has no clip list");
  return manifest;
}

}  // namespace

std::vector<std::string> dataset_clip_ids(const std::string& directory) {
  const nlohmann::json manifest = load_manifest(directory);
  std::vector<std::string> ids;
  for (const auto& entry : manifest["clips"])
    ids.push_back(entry.at("id").get<std::string>());
  return ids;
}

VideoClip read_clip(const std::string& directory, const std::string& clip_id) {
  const nlohmann::json manifest = load_manifest(directory);
  for (const auto& entry : manifest["clips"]) {
    if (entry.at("id").get<std::string>() != clip_id) continue;
    VideoClip clip;
    clip.id = clip_id;
    clip.seed = entry.value("seed", std::uint64_t(0));
    const int t_count = entry.at("num_frames").get<int>();
    const fs::path dir = fs::path(directory) / clip_id;
    try {
      for (int t = 0; t < t_count; ++t) {
        clip.frames.push_back(
            read_png_rgb((dir / ("frame_" + std::to_string(t) + ".png")).string()));
        clip.labels.push_back(
            read_png_gray((dir / ("mask_" + std::to_string(t) + ".png")).string()));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("read_dataset: clip " + clip_id + ": " + e.what());
    }
    return clip;
  }
  throw std::runtime_error("read_dataset: clip " + clip_id +
                           " not listed in manifest of " + directory);
}

std::vector<VideoClip> read_dataset(const std::string& directory) {
  std::vector<VideoClip> clips;
  for (const auto& id : dataset_clip_ids(directory))
    clips.push_back(read_clip(directory, id));
  return clips;
}

}  // namespace steve
