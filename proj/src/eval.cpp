// SPDX-License-Identifier: Apache-2.0

#include "steve/eval.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace steve {
namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

nlohmann::json opt_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

std::string csv_cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s << std::setprecision(12) << *v;
  return s.str();
}

std::string csv_cell(double v) {
  std::ostringstream s;
  s << std::setprecision(12) << v;
  return s.str();
}

}  // namespace

void write_ari_json(const std::string& path, const AriReport& report) {
  nlohmann::json j = nlohmann::json::object();
  for (const ClipScores& c : report.clips) {
    nlohmann::json e;
    e["image_fgari"] = nlohmann::json::array();
    for (const auto& v : c.image_fgari) e["image_fgari"].push_back(opt_json(v));
    e["video_fgari"] = opt_json(c.video_fgari);
    j[c.clip_id] = std::move(e);
  }
  write_text(path, j.dump(2) + "\n");
}

void write_ari_csv(const std::string& path, const AriReport& report) {
  std::ostringstream s;
  s << "clip_id,image_fgari,video_fgari\n";
  for (const ClipScores& c : report.clips)
    s << c.clip_id << ',' << csv_cell(c.image_mean()) << ','
      << csv_cell(c.video_fgari) << '\n';
  s << "MEAN," << csv_cell(report.mean_image) << ','
    << csv_cell(report.mean_video) << '\n';
  write_text(path, s.str());
}

void write_past_frame_json(const std::string& path, const PastFrameSweep& s) {
  nlohmann::json j;
  j["k_values"] = s.k_values;
  j["mean_image_fgari"] = s.mean_image;
  nlohmann::json clips = nlohmann::json::object();
  for (std::size_t i = 0; i < s.clip_ids.size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& v : s.per_clip[i]) row.push_back(opt_json(v));
    clips[s.clip_ids[i]] = std::move(row);
  }
  j["clips"] = std::move(clips);
  write_text(path, j.dump(2) + "\n");
}

void write_past_frame_csv(const std::string& path, const PastFrameSweep& s) {
  std::ostringstream out;
  out << "k,mean_image_fgari\n";
  for (std::size_t j = 0; j < s.k_values.size(); ++j)
    out << s.k_values[j] << ',' << csv_cell(s.mean_image[j]) << '\n';
  write_text(path, out.str());
}

void write_length_json(const std::string& path, const LengthSweep& s) {
  nlohmann::json j;
  j["lengths"] = s.lengths;
  j["mean_video_fgari"] = s.mean_video;
  nlohmann::json clips = nlohmann::json::object();
  for (std::size_t i = 0; i < s.clip_ids.size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& v : s.per_clip[i]) row.push_back(opt_json(v));
    clips[s.clip_ids[i]] = std::move(row);
  }
  j["clips"] = std::move(clips);
  write_text(path, j.dump(2) + "\n");
}

void write_length_csv(const std::string& path, const LengthSweep& s) {
  std::ostringstream out;
  out << "length,mean_video_fgari\n";
  for (std::size_t j = 0; j < s.lengths.size(); ++j)
    out << s.lengths[j] << ',' << csv_cell(s.mean_video[j]) << '\n';
  write_text(path, out.str());
}

}  // namespace steve
