// SPDX-License-Identifier: Apache-2.0
//
// Full model: the discrete tokenizer, the recurrent slot encoder, and the
// slot-conditioned token transformer, combined into the training loss
// total = token cross-entropy + pixel reconstruction error. Token targets
// are sampled hard and passed as plain integers, so the cross-entropy
// gradient reaches the slot path but never the tokenizer.

#ifndef STEVE_MODEL_HPP
#define STEVE_MODEL_HPP

#include "steve/dvae.hpp"
#include "steve/slot_decoder.hpp"
#include "steve/slot_encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace steve {

struct ModelConfig {
  int image_size = 64;
  DvaeConfig dvae;
  EncoderConfig encoder;
  DecoderConfig decoder;

  /// Fill the decoder fields implied by the tokenizer and encoder, then
  /// check cross-module consistency.
  void finalize() {
    dvae.validate();
    encoder.validate();
    check(image_size > 0 && image_size % dvae.patch_size == 0,
          "model config: image_size must be a positive multiple of patch_size");
    const int side = image_size / dvae.patch_size;
    decoder.vocab_size = dvae.vocab_size;
    decoder.sequence_length = side * side;
    decoder.slot_dim = encoder.slot_dim;
    decoder.validate();
  }
};

/// Reference configuration for a square input size: the 128px variant
/// doubles the backbone width, strides its first conv, and deepens the
/// token transformer.
inline ModelConfig model_config_for(int image_size, int num_slots) {
  ModelConfig cfg;
  cfg.image_size = image_size;
  cfg.encoder = encoder_config_for_image(image_size, num_slots);
  if (image_size >= 128) cfg.decoder.blocks = 8;
  cfg.finalize();
  return cfg;
}

template <typename T>
class SteveModel {
public:
  using Var = typename Tape<T>::Var;

  struct LossParts {
    Var total;
    Var ce;
    Var dvae;
    double tau = 0.0;
    std::vector<std::vector<int>> tokens;  // hard targets per frame
  };

  struct VideoEncoding {
    std::vector<Tensor<T>> pre_slots;  // [N,D] per frame
    std::vector<Tensor<T>> post_slots;
    std::vector<Tensor<T>> attention;  // [N, H_enc*W_enc] per frame
    int h_enc = 0;
    int w_enc = 0;
  };

  SteveModel(const ModelConfig& cfg, Rng& rng)
      : cfg_(finalized(cfg)),
        dvae_(cfg_.dvae, rng),
        encoder_(cfg_.encoder, rng),
        decoder_(cfg_.decoder, rng) {}

  const ModelConfig& config() const { return cfg_; }
  Dvae<T>& dvae() { return dvae_; }
  SlotEncoder<T>& encoder() { return encoder_; }
  SlotDecoder<T>& decoder() { return decoder_; }

  std::vector<Param<T>*> all_params() {
    std::vector<Param<T>*> out;
    for (Param<T>* p : dvae_.params().all()) out.push_back(p);
    for (Param<T>* p : encoder_.params().all()) out.push_back(p);
    for (Param<T>* p : decoder_.params().all()) out.push_back(p);
    return out;
  }

  /// Combined loss for one clip. `sample_rng` drives the slot noise and the
  /// Gumbel draws (null: zero noise, argmax tokens, for deterministic loss
  /// probes); `dropout_rng` enables decoder dropout during training;
  /// `slot_eps` overrides the slot noise draw when supplied.
  LossParts total_loss(Tape<T>& t, const std::vector<Tensor<T>>& frames,
                       std::int64_t step, Rng* sample_rng, Rng* dropout_rng,
                       const Tensor<T>* slot_eps = nullptr) const {
    check(!frames.empty(), "total_loss: empty clip");
    for (const Tensor<T>& f : frames)
      check(f.rank() == 3 && f.dim(0) == 3 && f.dim(1) == cfg_.image_size &&
                f.dim(2) == cfg_.image_size,
            "total_loss: frames must be [3," +
                std::to_string(cfg_.image_size) + "," +
                std::to_string(cfg_.image_size) + "]");

    LossParts parts;
    parts.tau = dvae_.temperature(step);
    const int side = dvae_.grid_side(cfg_.image_size);

    std::vector<Var> frame_vars, recons;
    for (const Tensor<T>& frame : frames) {
      Var fv = t.input(frame);
      frame_vars.push_back(fv);
      Var logits = dvae_.encode(t, fv);
      Var soft = Dvae<T>::gumbel_softmax(t, logits, parts.tau, false, sample_rng);
      recons.push_back(dvae_.decode(t, soft, side, side));
      parts.tokens.push_back(Dvae<T>::sample_tokens(t.value(logits), sample_rng));
    }
    parts.dvae = Dvae<T>::reconstruction_loss(t, frame_vars, recons);

    Tensor<T> eps;
    if (slot_eps)
      eps = *slot_eps;
    else if (sample_rng)
      eps = encoder_.slot_noise(*sample_rng);
    else
      eps = Tensor<T>({cfg_.encoder.num_slots, cfg_.encoder.slot_dim});
    auto enc = encoder_.encode_video(t, frames, encoder_.init_slots(t, eps));

    std::vector<Var> frame_logits;
    for (std::size_t f = 0; f < frames.size(); ++f)
      frame_logits.push_back(
          decoder_.decode_logits(t, enc.pre[f], parts.tokens[f], dropout_rng));
    parts.ce = SlotDecoder<T>::cross_entropy_loss(t, frame_logits, parts.tokens);
    parts.total = t.add(parts.ce, parts.dvae);

    const double ce_v = static_cast<double>(t.value(parts.ce)[0]);
    const double dv_v = static_cast<double>(t.value(parts.dvae)[0]);
    if (!std::isfinite(ce_v) || !std::isfinite(dv_v))
      throw std::runtime_error("total_loss: non-finite loss at step " +
                               std::to_string(step) + " (ce=" +
                               std::to_string(ce_v) + ", reconstruction=" +
                               std::to_string(dv_v) + ")");
    return parts;
  }

  /// Frozen-parameter encoding pass for evaluation: slot trajectories and
  /// attention maps as plain tensors.
  VideoEncoding eval_encode(const std::vector<Tensor<T>>& frames,
                            const Tensor<T>& slot_eps) const {
    Tape<T> t;
    auto enc = encoder_.encode_video(t, frames, encoder_.init_slots(t, slot_eps));
    VideoEncoding out;
    out.h_enc = enc.h_enc;
    out.w_enc = enc.w_enc;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      out.pre_slots.push_back(t.value(enc.pre[f]));
      out.post_slots.push_back(t.value(enc.post[f]));
      out.attention.push_back(t.value(enc.attention[f]));
    }
    return out;
  }

  /// Autoregressive reconstruction of one frame from its slots: greedy
  /// token generation rendered through the tokenizer's decoder.
  Tensor<T> reconstruct_frame(const Tensor<T>& pre_slots) const {
    const std::vector<int> tokens = decoder_.generate(pre_slots);
    const int side = dvae_.grid_side(cfg_.image_size);
    Tape<T> t;
    Var img = dvae_.decode(t, t.input(dvae_.tokens_to_onehot(tokens)), side, side);
    return t.value(img);
  }

  /// Tokenizer-only round trip (argmax tokens), the reconstruction ceiling
  /// for visual comparison.
  Tensor<T> dvae_roundtrip(const Tensor<T>& frame) const {
    Tape<T> t;
    Var logits = dvae_.encode(t, t.input(frame));
    const std::vector<int> tokens =
        Dvae<T>::sample_tokens(t.value(logits), nullptr);
    const int side = dvae_.grid_side(cfg_.image_size);
    Var img = dvae_.decode(t, t.input(dvae_.tokens_to_onehot(tokens)), side, side);
    return t.value(img);
  }

private:
  static ModelConfig finalized(ModelConfig c) {
    c.finalize();
    return c;
  }

  ModelConfig cfg_;
  Dvae<T> dvae_;
  SlotEncoder<T> encoder_;
  SlotDecoder<T> decoder_;
};

}  // namespace steve

#endif  // STEVE_MODEL_HPP
