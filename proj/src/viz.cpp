// SPDX-License-Identifier: Apache-2.0

#include "steve/viz.hpp"

#include "steve/metrics.hpp"
#include "steve/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace steve {

namespace {

constexpr int kPad = 2;

const std::array<std::array<float, 3>, 10> kPalette = {{
    {0.122f, 0.467f, 0.706f},
    {1.000f, 0.498f, 0.055f},
    {0.173f, 0.627f, 0.173f},
    {0.839f, 0.153f, 0.157f},
    {0.580f, 0.404f, 0.741f},
    {0.549f, 0.337f, 0.294f},
    {0.890f, 0.467f, 0.761f},
    {0.737f, 0.741f, 0.133f},
    {0.090f, 0.745f, 0.812f},
    {0.498f, 0.498f, 0.498f},
}};

void blit(Tensor<float>& canvas, const Tensor<float>& tile, int top, int left) {
  const int h = tile.dim(1);
  const int w = tile.dim(2);
  const int ch = canvas.dim(1);
  const int cw = canvas.dim(2);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        canvas[(static_cast<std::int64_t>(c) * ch + top + i) * cw + left + j] =
            tile[(static_cast<std::int64_t>(c) * h + i) * w + j];
}

Tensor<float> gray_to_rgb(const Tensor<float>& gray) {
  const int h = gray.dim(0);
  const int w = gray.dim(1);
  Tensor<float> out({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < gray.numel(); ++i)
      out[static_cast<std::int64_t>(c) * h * w + i] =
          std::clamp(gray[i], 0.0f, 1.0f);
  return out;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt_tick(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << v;
  return os.str();
}

const char* kSeriesColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c",
                               "#d62728", "#9467bd", "#8c564b"};

}  // namespace

std::array<float, 3> label_color(int label) {
  if (label <= 0) return {0.08f, 0.08f, 0.08f};
  return kPalette[static_cast<std::size_t>(label - 1) % kPalette.size()];
}

namespace {

template <typename L>
Tensor<float> colorize_impl(const Tensor<L>& labels) {
  if (labels.rank() != 2)
    throw std::invalid_argument("colorize_labels: expected a [H, W] map");
  const int h = labels.dim(0);
  const int w = labels.dim(1);
  Tensor<float> out({3, h, w});
  for (std::int64_t i = 0; i < labels.numel(); ++i) {
    const std::array<float, 3> rgb = label_color(static_cast<int>(labels[i]));
    for (int c = 0; c < 3; ++c)
      out[static_cast<std::int64_t>(c) * h * w + i] = rgb[c];
  }
  return out;
}

}  // namespace

Tensor<float> colorize_labels(const Tensor<int>& labels) {
  return colorize_impl(labels);
}
Tensor<float> colorize_labels(const Tensor<std::uint8_t>& labels) {
  return colorize_impl(labels);
}

Tensor<float> attention_slot_mask(const Tensor<float>& attention, int slot,
                                  int h_enc, int w_enc, int out_h, int out_w,
                                  bool bilinear) {
  if (attention.rank() != 2 || attention.dim(1) != h_enc * w_enc)
    throw std::invalid_argument(
        "attention_slot_mask: attention must be [N, h_enc*w_enc]");
  if (slot < 0 || slot >= attention.dim(0))
    throw std::invalid_argument("attention_slot_mask: slot out of range");
  Tensor<float> map({h_enc, w_enc});
  for (int i = 0; i < h_enc * w_enc; ++i)
    map[i] = attention[static_cast<std::int64_t>(slot) * h_enc * w_enc + i];
  return bilinear ? bilinear_upsample(map, out_h, out_w)
                  : nearest_upsample(map, out_h, out_w);
}

Tensor<float> render_clip_strip(const ClipStrip& strip) {
  const std::size_t t = strip.frames.size();
  if (t == 0) throw std::invalid_argument("render_clip_strip: no frames");
  const int h = strip.frames[0].dim(1);
  const int w = strip.frames[0].dim(2);

  auto check_count = [&](std::size_t n, const char* what) {
    if (n != 0 && n != t)
      throw std::invalid_argument(std::string("render_clip_strip: ") + what +
                                  " row must match the frame count");
  };
  check_count(strip.true_labels.size(), "true label");
  check_count(strip.attention_seg.size(), "attention segmentation");
  check_count(strip.decoding_seg.size(), "decoding segmentation");
  check_count(strip.reconstructions.size(), "reconstruction");
  check_count(strip.slot_masks.size(), "slot mask");

  const int slots =
      strip.slot_masks.empty() ? 0 : strip.slot_masks[0].dim(0);
  int rows = 1;
  if (!strip.true_labels.empty()) rows++;
  if (!strip.attention_seg.empty()) rows++;
  if (!strip.decoding_seg.empty()) rows++;
  if (!strip.reconstructions.empty()) rows++;
  rows += slots;

  const int ch = rows * (h + kPad) + kPad;
  const int cw = static_cast<int>(t) * (w + kPad) + kPad;
  Tensor<float> canvas({3, ch, cw});
  for (std::int64_t i = 0; i < canvas.numel(); ++i) canvas[i] = 1.0f;

  for (std::size_t f = 0; f < t; ++f) {
    const int left = kPad + static_cast<int>(f) * (w + kPad);
    int row = 0;
    auto place = [&](const Tensor<float>& tile) {
      blit(canvas, tile, kPad + row * (h + kPad), left);
      row++;
    };
    place(strip.frames[f]);
    if (!strip.true_labels.empty())
      place(colorize_labels(strip.true_labels[f]));
    if (!strip.attention_seg.empty()) {
      Tensor<int> shifted = strip.attention_seg[f];
      for (std::int64_t i = 0; i < shifted.numel(); ++i) shifted[i]++;
      place(colorize_labels(shifted));
    }
    if (!strip.decoding_seg.empty()) {
      Tensor<int> shifted = strip.decoding_seg[f];
      for (std::int64_t i = 0; i < shifted.numel(); ++i) shifted[i]++;
      place(colorize_labels(shifted));
    }
    if (!strip.reconstructions.empty()) place(strip.reconstructions[f]);
    for (int n = 0; n < slots; ++n) {
      const Tensor<float>& sm = strip.slot_masks[f];
      Tensor<float> one({h, w});
      for (std::int64_t i = 0; i < one.numel(); ++i)
        one[i] = sm[static_cast<std::int64_t>(n) * h * w + i];
      place(gray_to_rgb(one));
    }
  }
  return canvas;
}

void write_clip_strip_png(const std::string& path, const ClipStrip& strip) {
  write_png_rgb(path, render_clip_strip(strip));
}

void write_line_plot_svg(const std::string& path, const std::string& title,
                         const std::string& x_label,
                         const std::string& y_label,
                         const std::vector<PlotSeries>& series) {
  const int width = 640, height = 400;
  const int ml = 64, mr = 24, mt = 40, mb = 56;
  const double pw = width - ml - mr;
  const double ph = height - mt - mb;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool any = false;
  for (const PlotSeries& s : series) {
    if (s.xs.size() != s.ys.size())
      throw std::invalid_argument("write_line_plot_svg: xs/ys length mismatch");
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      if (!std::isfinite(s.ys[i])) continue;
      if (!any) {
        xmin = xmax = s.xs[i];
        ymin = ymax = s.ys[i];
        any = true;
      } else {
        xmin = std::min(xmin, s.xs[i]);
        xmax = std::max(xmax, s.xs[i]);
        ymin = std::min(ymin, s.ys[i]);
        ymax = std::max(ymax, s.ys[i]);
      }
    }
  }
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' '
      << height << "\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"16\">" << escape_xml(title)
      << "</text>\n";

  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw
      << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";

  const int nticks = 5;
  for (int i = 0; i <= nticks; ++i) {
    const double fx = xmin + (xmax - xmin) * i / nticks;
    const double fy = ymin + (ymax - ymin) * i / nticks;
    svg << "<line x1=\"" << px(fx) << "\" y1=\"" << mt + ph << "\" x2=\""
        << px(fx) << "\" y2=\"" << mt + ph + 5 << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << px(fx) << "\" y=\"" << mt + ph + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"11\">" << fmt_tick(fx) << "</text>\n";
    svg << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(fy) << "\" x2=\"" << ml
        << "\" y2=\"" << py(fy) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
        << "font-size=\"11\">" << fmt_tick(fy) << "</text>\n";
  }
  svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"13\">" << escape_xml(x_label) << "</text>\n";
  svg << "<text x=\"16\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"13\" transform=\"rotate(-90 16 " << mt + ph / 2 << ")\">"
      << escape_xml(y_label) << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const PlotSeries& s = series[si];
    const char* color = kSeriesColors[si % 6];
    std::vector<std::pair<double, double>> seg;
    auto flush = [&]() {
      if (seg.size() >= 2) {
        svg << "<polyline fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"2\" points=\"";
        for (const auto& p : seg) svg << p.first << ',' << p.second << ' ';
        svg << "\"/>\n";
      }
      seg.clear();
    };
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      if (!std::isfinite(s.ys[i])) {
        flush();
        continue;
      }
      seg.emplace_back(px(s.xs[i]), py(s.ys[i]));
      svg << "<circle cx=\"" << px(s.xs[i]) << "\" cy=\"" << py(s.ys[i])
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    flush();
    const double lx = ml + pw - 150;
    const double ly = mt + 10 + 18 * static_cast<double>(si);
    svg << "<line x1=\"" << lx << "\" y1=\"" << ly - 4 << "\" x2=\"" << lx + 24
        << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << lx + 30 << "\" y=\"" << ly
        << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << escape_xml(s.name) << "</text>\n";
  }
  svg << "</svg>\n";

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_line_plot_svg: cannot open " + path);
  out << svg.str();
  if (!out) throw std::runtime_error("write_line_plot_svg: write failed " + path);
}

}  // namespace steve
