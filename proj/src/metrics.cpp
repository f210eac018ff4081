// SPDX-License-Identifier: Apache-2.0

#include "steve/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace steve {

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  check(a.size() == b.size(), "ari: population size mismatch");
  const double n = static_cast<double>(a.size());
  if (a.empty()) return 1.0;

  std::map<std::pair<int, int>, std::int64_t> cont;
  std::map<int, std::int64_t> row, col;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++cont[{a[i], b[i]}];
    ++row[a[i]];
    ++col[b[i]];
  }
  auto pairs = [](double m) { return m * (m - 1.0) / 2.0; };
  double same_both = 0, same_a = 0, same_b = 0;
  for (const auto& [key, c] : cont) same_both += pairs(static_cast<double>(c));
  for (const auto& [key, c] : row) same_a += pairs(static_cast<double>(c));
  for (const auto& [key, c] : col) same_b += pairs(static_cast<double>(c));

  const double total = pairs(n);
  const double expected = total > 0 ? same_a * same_b / total : 0.0;
  const double max_index = 0.5 * (same_a + same_b);
  const double denom = max_index - expected;
  if (denom == 0.0) {
    // Degenerate cases: identical partitions score 1, disagreement scores 0.
    const bool identical = same_a == same_both && same_b == same_both;
    return identical ? 1.0 : 0.0;
  }
  return (same_both - expected) / denom;
}

namespace {

void collect_foreground(const Tensor<std::uint8_t>& true_frame,
                        const Tensor<int>& pred_frame, std::vector<int>& t,
                        std::vector<int>& p) {
  check(true_frame.rank() == 2 && pred_frame.rank() == 2 &&
            true_frame.dim(0) == pred_frame.dim(0) &&
            true_frame.dim(1) == pred_frame.dim(1),
        "fg_ari: segmentation shape mismatch");
  for (std::int64_t i = 0; i < true_frame.numel(); ++i)
    if (true_frame[i] != 0) {
      t.push_back(static_cast<int>(true_frame[i]));
      p.push_back(pred_frame[i]);
    }
}

}  // namespace

std::optional<double> fg_ari_image(const Tensor<std::uint8_t>& true_frame,
                                   const Tensor<int>& pred_frame) {
  std::vector<int> t, p;
  collect_foreground(true_frame, pred_frame, t, p);
  if (t.empty()) return std::nullopt;
  return adjusted_rand_index(t, p);
}

std::optional<double> fg_ari_video(
    const std::vector<Tensor<std::uint8_t>>& true_frames,
    const std::vector<Tensor<int>>& pred_frames) {
  check(true_frames.size() == pred_frames.size(),
        "fg_ari_video: frame count mismatch");
  std::vector<int> t, p;
  for (std::size_t f = 0; f < true_frames.size(); ++f)
    collect_foreground(true_frames[f], pred_frames[f], t, p);
  if (t.empty()) return std::nullopt;
  return adjusted_rand_index(t, p);
}

Tensor<float> bilinear_upsample(const Tensor<float>& in, int out_h, int out_w) {
  check(in.rank() == 2, "bilinear_upsample: expected [H,W]");
  const int h = in.dim(0), w = in.dim(1);
  Tensor<float> out({out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = (oy + 0.5) * sy - 0.5;
    const int y0 = static_cast<int>(std::floor(fy));
    const double wy = fy - y0;
    const int y0c = std::clamp(y0, 0, h - 1);
    const int y1c = std::clamp(y0 + 1, 0, h - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = (ox + 0.5) * sx - 0.5;
      const int x0 = static_cast<int>(std::floor(fx));
      const double wx = fx - x0;
      const int x0c = std::clamp(x0, 0, w - 1);
      const int x1c = std::clamp(x0 + 1, 0, w - 1);
      const double top = in.at(y0c, x0c) * (1.0 - wx) + in.at(y0c, x1c) * wx;
      const double bot = in.at(y1c, x0c) * (1.0 - wx) + in.at(y1c, x1c) * wx;
      out.at(oy, ox) = static_cast<float>(top * (1.0 - wy) + bot * wy);
    }
  }
  return out;
}

Tensor<float> nearest_upsample(const Tensor<float>& in, int out_h, int out_w) {
  check(in.rank() == 2, "nearest_upsample: expected [H,W]");
  const int h = in.dim(0), w = in.dim(1);
  Tensor<float> out({out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    const int iy = std::clamp(static_cast<int>((oy + 0.5) * sy), 0, h - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      const int ix = std::clamp(static_cast<int>((ox + 0.5) * sx), 0, w - 1);
      out.at(oy, ox) = in.at(iy, ix);
    }
  }
  return out;
}

Tensor<int> attention_to_segmentation(const Tensor<float>& attention, int h_enc,
                                      int w_enc, int out_h, int out_w,
                                      bool bilinear) {
  check(attention.rank() == 2 && attention.cols() == h_enc * w_enc,
        "attention_to_segmentation: expected [N, H_enc*W_enc]");
  const int n = attention.rows();
  Tensor<int> labels({out_h, out_w});
  Tensor<float> best({out_h, out_w});
  for (int s = 0; s < n; ++s) {
    Tensor<float> map({h_enc, w_enc});
    std::copy(attention.data() + static_cast<std::int64_t>(s) * h_enc * w_enc,
              attention.data() + static_cast<std::int64_t>(s + 1) * h_enc * w_enc,
              map.data());
    Tensor<float> up = bilinear ? bilinear_upsample(map, out_h, out_w)
                                : nearest_upsample(map, out_h, out_w);
    for (std::int64_t i = 0; i < up.numel(); ++i) {
      if (s == 0 || up[i] > best[i]) {
        best[i] = up[i];
        labels[i] = s;
      }
    }
  }
  return labels;
}

}  // namespace steve
