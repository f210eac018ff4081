// SPDX-License-Identifier: Apache-2.0
//
// Procedural generator of textured multi-object video clips with ground-truth
// instance masks, plus the on-disk dataset format. Clips are pure functions
// of (config, seed): shapes are rasterized by integer-grid coverage tests and
// textures are evaluated in object-local coordinates so they travel with the
// object.

#ifndef STEVE_SYNTHGEN_HPP
#define STEVE_SYNTHGEN_HPP

#include "steve/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace steve {

struct SceneConfig {
  int image_size = 64;
  int k_min = 2;
  int k_max = 3;
  int num_frames = 3;
  /// Texture kinds allowed for objects (and the background when textured):
  /// any subset of {"stripes", "checker", "dots", "flat"}.
  std::vector<std::string> texture_bank = {"stripes", "checker", "dots", "flat"};
  bool background_textured = true;
  bool camera_pan = false;
  double max_pan = 1.0;  // pixels per frame
  double static_fraction = 0.0;
  std::uint64_t seed = 0;
  /// Object half-size range in pixels; 0 means derive from image_size.
  int min_radius = 0;
  int max_radius = 0;
  /// Draw texture periods from a disjoint, coarser range (held-out materials).
  bool ood_textures = false;

  void validate() const;
};

struct ObjectMeta {
  int shape_id;    // 0 square, 1 circle, 2 triangle
  int texture_id;  // index into the texture bank
  int depth_rank;  // 1 = nearest; equals the object's label value
  double vx, vy;   // pixels per frame
};

struct VideoClip {
  std::string id;
  std::vector<Tensor<float>> frames;         // each [3, H, W], values in [0,1]
  std::vector<Tensor<std::uint8_t>> labels;  // each [H, W], 0 = background
  std::vector<ObjectMeta> objects;
  std::uint64_t seed = 0;
};

/// Deterministic clip synthesis. Guarantees every object id 1..K appears in
/// at least one frame and that frame 0 has foreground; configs whose objects
/// cannot fit the frame are rejected with std::invalid_argument.
///
/// When `coverage` is non-null it receives, per frame, one binary [H, W] map
/// per object marking every pixel the object's shape covers regardless of
/// occlusion, so callers can verify the depth rule independently.
VideoClip generate_clip(const SceneConfig& config,
                        std::vector<std::vector<Tensor<std::uint8_t>>>*
                            coverage = nullptr);

/// Layout: <root>/<clip_id>/frame_<t>.png, <root>/<clip_id>/mask_<t>.png,
/// <root>/manifest.json.
void write_dataset(const std::vector<VideoClip>& clips,
                   const std::string& directory, const SceneConfig& config);

std::vector<VideoClip> read_dataset(const std::string& directory);

/// Clip ids listed in the manifest, in manifest order.
std::vector<std::string> dataset_clip_ids(const std::string& directory);

/// Load a single clip by id (frames + labels; object_meta is not persisted).
VideoClip read_clip(const std::string& directory, const std::string& clip_id);

}  // namespace steve

#endif  // STEVE_SYNTHGEN_HPP
