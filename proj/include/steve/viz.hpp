// SPDX-License-Identifier: Apache-2.0
//
// Visual artifacts: per-clip PNG strips (frames, true masks, predicted
// segmentations, reconstructions, per-slot attention rows) and hand-rolled
// SVG line plots for the evaluation sweeps.

#ifndef STEVE_VIZ_HPP
#define STEVE_VIZ_HPP

#include "steve/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace steve {

/// Fixed distinct color for a label id: 0 is near-black, higher ids cycle
/// a 10-color table.
std::array<float, 3> label_color(int label);

/// Label map rendered as an RGB image via label_color.
Tensor<float> colorize_labels(const Tensor<int>& labels);
Tensor<float> colorize_labels(const Tensor<std::uint8_t>& labels);

/// One slot's attention row [N, He*We] -> [H, W] grayscale mask in [0, 1].
Tensor<float> attention_slot_mask(const Tensor<float>& attention, int slot,
                                  int h_enc, int w_enc, int out_h, int out_w,
                                  bool bilinear = true);

/// Rows of a per-clip strip; optional rows may be empty but any present row
/// must have one entry per frame. slot_masks holds per-frame [N, H, W].
struct ClipStrip {
  std::vector<Tensor<float>> frames;
  std::vector<Tensor<std::uint8_t>> true_labels;
  std::vector<Tensor<int>> attention_seg;
  std::vector<Tensor<int>> decoding_seg;
  std::vector<Tensor<float>> reconstructions;
  std::vector<Tensor<float>> slot_masks;
};

/// Compose the strip: one row per populated section, frames left to right,
/// then one row per slot of attention masks. Returns [3, Hc, Wc].
Tensor<float> render_clip_strip(const ClipStrip& strip);

void write_clip_strip_png(const std::string& path, const ClipStrip& strip);

/// One plotted line; points with non-finite y are skipped (the line breaks).
struct PlotSeries {
  std::string name;
  std::vector<double> xs;
  std::vector<double> ys;
};

/// Minimal SVG line plot: axes, ticks, labeled series, legend.
void write_line_plot_svg(const std::string& path, const std::string& title,
                         const std::string& x_label,
                         const std::string& y_label,
                         const std::vector<PlotSeries>& series);

}  // namespace steve

#endif  // STEVE_VIZ_HPP
