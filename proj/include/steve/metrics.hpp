// SPDX-License-Identifier: Apache-2.0
//
// Foreground Adjusted Rand Index metrics and the attention-to-segmentation
// conversion. FG-ARI restricts scoring to pixels whose ground-truth label is
// nonzero; the video variant flattens all frames so a label id forms a single
// cluster across time.

#ifndef STEVE_METRICS_HPP
#define STEVE_METRICS_HPP

#include "steve/tensor.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace steve {

/// Adjusted Rand Index between two labelings of the same population via the
/// contingency-table formula. Identical partitions (up to relabeling) score
/// 1; a vanishing denominator otherwise scores 0.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

/// ARI on the foreground (true label != 0) pixels of one frame. Empty
/// foreground yields nullopt (a skip, not a score).
std::optional<double> fg_ari_image(const Tensor<std::uint8_t>& true_frame,
                                   const Tensor<int>& pred_frame);

/// ARI over all frames flattened into one population, so each label id is
/// one cluster spanning the whole video.
std::optional<double> fg_ari_video(
    const std::vector<Tensor<std::uint8_t>>& true_frames,
    const std::vector<Tensor<int>>& pred_frames);

/// Bilinear upsample of a [H, W] map using the half-pixel-center convention.
Tensor<float> bilinear_upsample(const Tensor<float>& in, int out_h, int out_w);

/// Nearest-neighbor upsample with the same coordinate convention.
Tensor<float> nearest_upsample(const Tensor<float>& in, int out_h, int out_w);

/// Slot-attention weights [N, H_enc*W_enc] -> [H, W] predicted labels: each
/// slot map is upsampled to the output size and every pixel takes the argmax
/// slot, ties resolved to the lowest slot index.
Tensor<int> attention_to_segmentation(const Tensor<float>& attention, int h_enc,
                                      int w_enc, int out_h, int out_w,
                                      bool bilinear = true);

}  // namespace steve

#endif  // STEVE_METRICS_HPP
