// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document with sections {data, dvae, encoder,
// decoder, train, eval, diagnostic} covering every knob in the system.
// Parsing is strict (unknown keys and wrong types are rejected before any
// work starts) and the normalized document is echoed into checkpoints and
// reports so each artifact names the exact configuration that produced it.

#ifndef STEVE_CONFIG_HPP
#define STEVE_CONFIG_HPP

#include "steve/eval.hpp"
#include "steve/mixture.hpp"
#include "steve/model.hpp"
#include "steve/synthgen.hpp"
#include "steve/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace steve {

struct RunConfig {
  SceneConfig data;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  MixtureConfig mixture;
  ProbeTrainConfig probe;

  /// Re-derive the coupled fields (model image size from the data section,
  /// mixture geometry from the encoder) and validate everything.
  void finalize() {
    data.validate();
    model.image_size = data.image_size;
    model.finalize();
    mixture.image_size = data.image_size;
    mixture.slot_dim = model.encoder.slot_dim;
    mixture.validate();
    probe.validate();
    train.validate();
    eval.validate();
  }
};

namespace detail {

/// Strict reader over one JSON object: each getter records its key, checks
/// the JSON type, and falls back to the given default when absent; finish()
/// rejects any key that was never requested.
class SectionReader {
public:
  SectionReader(const nlohmann::json& j, std::string prefix)
      : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object())
      fail("config: section '" + prefix_ + "' must be a JSON object");
  }

  int get_int(const std::string& key, int def) {
    const nlohmann::json* v = look(key);
    if (!v) return def;
    if (!v->is_number_integer())
      fail("config: " + path(key) + " must be an integer");
    return v->get<int>();
  }

  std::int64_t get_int64(const std::string& key, std::int64_t def) {
    const nlohmann::json* v = look(key);
    if (!v) return def;
    if (!v->is_number_integer())
      fail("config: " + path(key) + " must be an integer");
    return v->get<std::int64_t>();
  }

  std::uint64_t get_uint64(const std::string& key, std::uint64_t def) {
    const nlohmann::json* v = look(key);
    if (!v) return def;
    if (!(v->is_number_unsigned() ||
          (v->is_number_integer() && v->get<std::int64_t>() >= 0)))
      fail("config: " + path(key) + " must be a nonnegative integer");
    return v->get<std::uint64_t>();
  }

  double get_double(const std::string& key, double def) {
    const nlohmann::json* v = look(key);
    if (!v) return def;
    if (!v->is_number()) fail("config: " + path(key) + " must be a number");
    return v->get<double>();
  }

  bool get_bool(const std::string& key, bool def) {
    const nlohmann::json* v = look(key);
    if (!v) return def;
    if (!v->is_boolean()) fail("config: " + path(key) + " must be a boolean");
    return v->get<bool>();
  }

  std::vector<int> get_int_list(const std::string& key, std::vector<int> def) {
    const nlohmann::json* v = look(key);
    if (!v) return def;
    if (!v->is_array())
      fail("config: " + path(key) + " must be an array of integers");
    std::vector<int> out;
    for (const auto& e : *v) {
      if (!e.is_number_integer())
        fail("config: " + path(key) + " must be an array of integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& key,
                                           std::vector<std::string> def) {
    const nlohmann::json* v = look(key);
    if (!v) return def;
    if (!v->is_array())
      fail("config: " + path(key) + " must be an array of strings");
    std::vector<std::string> out;
    for (const auto& e : *v) {
      if (!e.is_string())
        fail("config: " + path(key) + " must be an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        fail("config: unknown key " + path(it.key()));
  }

private:
  const nlohmann::json* look(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string path(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

  const nlohmann::json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

inline const nlohmann::json& section(const nlohmann::json& doc,
                                     const std::string& name) {
  static const nlohmann::json empty = nlohmann::json::object();
  auto it = doc.find(name);
  return it == doc.end() ? empty : *it;
}

}  // namespace detail

/// Parse and validate a full run configuration. Unknown sections or keys,
/// wrong JSON types, and out-of-range values all throw before any work.
inline RunConfig parse_run_config(const nlohmann::json& doc) {
  if (!doc.is_object()) fail("config: document root must be a JSON object");
  static const std::set<std::string> kSections = {
      "data", "dvae", "encoder", "decoder", "train", "eval", "diagnostic"};
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!kSections.count(it.key()))
      fail("config: unknown section '" + it.key() + "'");

  RunConfig rc;

  {
    detail::SectionReader r(detail::section(doc, "data"), "data");
    SceneConfig& d = rc.data;
    d.image_size = r.get_int("image_size", d.image_size);
    d.k_min = r.get_int("k_min", d.k_min);
    d.k_max = r.get_int("k_max", d.k_max);
    d.num_frames = r.get_int("num_frames", d.num_frames);
    d.texture_bank = r.get_string_list("texture_bank", d.texture_bank);
    d.background_textured =
        r.get_bool("background_textured", d.background_textured);
    d.camera_pan = r.get_bool("camera_pan", d.camera_pan);
    d.max_pan = r.get_double("max_pan", d.max_pan);
    d.static_fraction = r.get_double("static_fraction", d.static_fraction);
    d.seed = r.get_uint64("seed", d.seed);
    d.min_radius = r.get_int("min_radius", d.min_radius);
    d.max_radius = r.get_int("max_radius", d.max_radius);
    d.ood_textures = r.get_bool("ood_textures", d.ood_textures);
    r.finish();
  }
  {
    detail::SectionReader r(detail::section(doc, "dvae"), "dvae");
    DvaeConfig& d = rc.model.dvae;
    d.patch_size = r.get_int("patch_size", d.patch_size);
    d.vocab_size = r.get_int("vocab_size", d.vocab_size);
    d.hidden = r.get_int("hidden", d.hidden);
    d.tau_start = r.get_double("tau_start", d.tau_start);
    d.tau_end = r.get_double("tau_end", d.tau_end);
    d.tau_decay_steps = r.get_int("tau_decay_steps", d.tau_decay_steps);
    r.finish();
  }
  {
    detail::SectionReader r(detail::section(doc, "encoder"), "encoder");
    EncoderConfig& e = rc.model.encoder;
    e.num_slots = r.get_int("num_slots", 4);
    e.slot_dim = r.get_int("slot_dim", e.slot_dim);
    e.corrector_iters = r.get_int("corrector_iters", e.corrector_iters);
    e.mlp_hidden = r.get_int("mlp_hidden", e.mlp_hidden);
    e.predictor_blocks = r.get_int("predictor_blocks", e.predictor_blocks);
    e.predictor_heads = r.get_int("predictor_heads", e.predictor_heads);
    e.cnn_channels = r.get_int("cnn_channels", e.cnn_channels);
    e.cnn_first_stride = r.get_int("cnn_first_stride", e.cnn_first_stride);
    r.finish();
  }
  {
    detail::SectionReader r(detail::section(doc, "decoder"), "decoder");
    DecoderConfig& d = rc.model.decoder;
    d.blocks = r.get_int("blocks", d.blocks);
    d.heads = r.get_int("heads", d.heads);
    d.hidden = r.get_int("hidden", d.hidden);
    d.dropout = r.get_double("dropout", d.dropout);
    d.slot_prefix = r.get_bool("slot_prefix", d.slot_prefix);
    r.finish();
  }
  {
    detail::SectionReader r(detail::section(doc, "train"), "train");
    TrainConfig& t = rc.train;
    t.batch_size = r.get_int("batch_size", t.batch_size);
    t.episode_length = r.get_int("episode_length", t.episode_length);
    t.steps = r.get_int64("steps", t.steps);
    t.lr_dvae = r.get_double("lr_dvae", t.lr_dvae);
    t.lr_encoder = r.get_double("lr_encoder", t.lr_encoder);
    t.lr_decoder = r.get_double("lr_decoder", t.lr_decoder);
    t.warmup_steps = r.get_int64("warmup_steps", t.warmup_steps);
    t.decay_halflife = r.get_double("decay_halflife", t.decay_halflife);
    t.grad_clip = r.get_double("grad_clip", t.grad_clip);
    t.seed = r.get_uint64("seed", t.seed);
    t.log_every = r.get_int64("log_every", t.log_every);
    t.checkpoint_every = r.get_int64("checkpoint_every", t.checkpoint_every);
    t.divergence_threshold =
        r.get_double("divergence_threshold", t.divergence_threshold);
    r.finish();
  }
  {
    detail::SectionReader r(detail::section(doc, "eval"), "eval");
    EvalConfig& e = rc.eval;
    e.num_clips = r.get_int("num_clips", e.num_clips);
    e.past_k = r.get_int_list("past_k", e.past_k);
    e.lengths = r.get_int_list("lengths", e.lengths);
    e.extra_slots = r.get_int("extra_slots", e.extra_slots);
    e.seed = r.get_uint64("seed", e.seed);
    e.bilinear = r.get_bool("bilinear", e.bilinear);
    r.finish();
  }
  {
    detail::SectionReader r(detail::section(doc, "diagnostic"), "diagnostic");
    MixtureConfig& m = rc.mixture;
    m.channels = r.get_int("channels", m.channels);
    m.deconv = r.get_bool("deconv", m.deconv);
    ProbeTrainConfig& p = rc.probe;
    p.steps = r.get_int64("steps", p.steps);
    p.batch_size = r.get_int("batch_size", p.batch_size);
    p.episode_length = r.get_int("episode_length", p.episode_length);
    p.lr = r.get_double("lr", p.lr);
    p.grad_clip = r.get_double("grad_clip", p.grad_clip);
    p.seed = r.get_uint64("seed", p.seed);
    p.log_every = r.get_int64("log_every", p.log_every);
    p.divergence_threshold =
        r.get_double("divergence_threshold", p.divergence_threshold);
    r.finish();
  }

  rc.finalize();
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("config: cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail("config: " + path + " is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

/// Normalized echo: every knob written out explicitly with the value the
/// run actually used. Artifacts embed this document.
inline nlohmann::json run_config_json(const RunConfig& rc) {
  nlohmann::json j;
  const SceneConfig& d = rc.data;
  j["data"] = {{"image_size", d.image_size},
               {"k_min", d.k_min},
               {"k_max", d.k_max},
               {"num_frames", d.num_frames},
               {"texture_bank", d.texture_bank},
               {"background_textured", d.background_textured},
               {"camera_pan", d.camera_pan},
               {"max_pan", d.max_pan},
               {"static_fraction", d.static_fraction},
               {"seed", d.seed},
               {"min_radius", d.min_radius},
               {"max_radius", d.max_radius},
               {"ood_textures", d.ood_textures}};
  const DvaeConfig& v = rc.model.dvae;
  j["dvae"] = {{"patch_size", v.patch_size},
               {"vocab_size", v.vocab_size},
               {"hidden", v.hidden},
               {"tau_start", v.tau_start},
               {"tau_end", v.tau_end},
               {"tau_decay_steps", v.tau_decay_steps}};
  const EncoderConfig& e = rc.model.encoder;
  j["encoder"] = {{"num_slots", e.num_slots},
                  {"slot_dim", e.slot_dim},
                  {"corrector_iters", e.corrector_iters},
                  {"mlp_hidden", e.mlp_hidden},
                  {"predictor_blocks", e.predictor_blocks},
                  {"predictor_heads", e.predictor_heads},
                  {"cnn_channels", e.cnn_channels},
                  {"cnn_first_stride", e.cnn_first_stride}};
  const DecoderConfig& dec = rc.model.decoder;
  j["decoder"] = {{"blocks", dec.blocks},
                  {"heads", dec.heads},
                  {"hidden", dec.hidden},
                  {"dropout", dec.dropout},
                  {"slot_prefix", dec.slot_prefix}};
  const TrainConfig& t = rc.train;
  j["train"] = {{"batch_size", t.batch_size},
                {"episode_length", t.episode_length},
                {"steps", t.steps},
                {"lr_dvae", t.lr_dvae},
                {"lr_encoder", t.lr_encoder},
                {"lr_decoder", t.lr_decoder},
                {"warmup_steps", t.warmup_steps},
                {"decay_halflife", t.decay_halflife},
                {"grad_clip", t.grad_clip},
                {"seed", t.seed},
                {"log_every", t.log_every},
                {"checkpoint_every", t.checkpoint_every},
                {"divergence_threshold", t.divergence_threshold}};
  const EvalConfig& ev = rc.eval;
  j["eval"] = {{"num_clips", ev.num_clips}, {"past_k", ev.past_k},
               {"lengths", ev.lengths},     {"extra_slots", ev.extra_slots},
               {"seed", ev.seed},           {"bilinear", ev.bilinear}};
  const MixtureConfig& m = rc.mixture;
  const ProbeTrainConfig& p = rc.probe;
  j["diagnostic"] = {{"channels", m.channels},
                     {"deconv", m.deconv},
                     {"steps", p.steps},
                     {"batch_size", p.batch_size},
                     {"episode_length", p.episode_length},
                     {"lr", p.lr},
                     {"grad_clip", p.grad_clip},
                     {"seed", p.seed},
                     {"log_every", p.log_every},
                     {"divergence_threshold", p.divergence_threshold}};
  return j;
}

}  // namespace steve

#endif  // STEVE_CONFIG_HPP
