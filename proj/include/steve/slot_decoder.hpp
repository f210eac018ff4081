// SPDX-License-Identifier: Apache-2.0
//
// Autoregressive transformer over discrete token sequences, conditioned on
// a frame's slots. Teacher-forced passes supply the token cross-entropy;
// greedy generation renders reconstructions. Slots condition the sequence
// either as cross-attention memory (default) or as a prefix of the input.

#ifndef STEVE_SLOT_DECODER_HPP
#define STEVE_SLOT_DECODER_HPP

#include "steve/autodiff.hpp"
#include "steve/nn.hpp"
#include "steve/rng.hpp"
#include "steve/tensor.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace steve {

struct DecoderConfig {
  int blocks = 4;
  int heads = 4;
  int hidden = 192;
  double dropout = 0.1;
  int vocab_size = 0;
  int sequence_length = 0;
  int slot_dim = 192;
  bool slot_prefix = false;

  void validate() const {
    check(blocks >= 1, "decoder config: blocks must be >= 1");
    check(heads >= 1 && hidden > 0 && hidden % heads == 0,
          "decoder config: heads must divide hidden");
    check(dropout >= 0.0 && dropout < 1.0,
          "decoder config: dropout must lie in [0,1)");
    check(vocab_size >= 2, "decoder config: vocab_size must be >= 2");
    check(sequence_length >= 1,
          "decoder config: sequence_length must be >= 1");
    check(slot_dim > 0, "decoder config: slot_dim must be positive");
  }
};

template <typename T>
class SlotDecoder {
public:
  using Var = typename Tape<T>::Var;

  SlotDecoder(const DecoderConfig& cfg, Rng& rng)
      : cfg_(validated(cfg)),
        slot_proj_("decoder.slot_proj", cfg_.slot_dim, cfg_.hidden, rng),
        final_ln_("decoder.final_ln", cfg_.hidden),
        head_("decoder.head", cfg_.hidden, cfg_.vocab_size, rng) {
    embed_.name = "decoder.embed";
    embed_.value = init::normal<T>({cfg_.vocab_size, cfg_.hidden}, 0.02, rng);
    pos_.name = "decoder.pos";
    pos_.value = init::normal<T>({cfg_.sequence_length, cfg_.hidden}, 0.02, rng);
    bos_.name = "decoder.bos";
    bos_.value = init::normal<T>({1, cfg_.hidden}, 0.02, rng);

    blocks_.reserve(cfg_.blocks);
    for (int b = 0; b < cfg_.blocks; ++b) {
      const std::string p = "decoder.block" + std::to_string(b);
      blocks_.push_back(Block{
          LayerNorm<T>(p + ".ln1", cfg_.hidden),
          MultiHeadAttention<T>(p + ".self", cfg_.hidden, cfg_.heads, rng),
          LayerNorm<T>(p + ".ln2", cfg_.hidden),
          MultiHeadAttention<T>(p + ".cross", cfg_.hidden, cfg_.heads, rng),
          LayerNorm<T>(p + ".ln3", cfg_.hidden),
          Linear<T>(p + ".ffn0", cfg_.hidden, 4 * cfg_.hidden, rng),
          Linear<T>(p + ".ffn1", 4 * cfg_.hidden, cfg_.hidden, rng)});
    }

    params_.add(&embed_);
    params_.add(&pos_);
    params_.add(&bos_);
    slot_proj_.reg(params_);
    for (Block& blk : blocks_) {
      blk.ln1.reg(params_);
      blk.self_attn.reg(params_);
      if (!cfg_.slot_prefix) {
        blk.ln2.reg(params_);
        blk.cross_attn.reg(params_);
      }
      blk.ln3.reg(params_);
      blk.ffn0.reg(params_);
      blk.ffn1.reg(params_);
    }
    final_ln_.reg(params_);
    head_.reg(params_);
  }

  const DecoderConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }

  /// Teacher-forced pass: log-probability rows for all sequence positions,
  /// each conditioned on the slots and the targets strictly before it.
  /// Dropout is active only when a noise source is supplied.
  Var decode_logits(Tape<T>& t, Var slots, const std::vector<int>& targets,
                    Rng* dropout_rng = nullptr) const {
    check(static_cast<int>(targets.size()) == cfg_.sequence_length,
          "decode_logits: target count must equal sequence_length");
    std::vector<int> prefix(targets.begin(), targets.end() - 1);
    return forward_rows(t, slots, prefix, dropout_rng);
  }

  /// Sum over frames and positions of the token negative log-likelihood.
  /// Inputs are (possibly unnormalized) score rows; they are re-normalized
  /// here, which is the identity for already-normalized log-probabilities.
  static Var cross_entropy_loss(
      Tape<T>& t, const std::vector<Var>& frame_logits,
      const std::vector<std::vector<int>>& frame_targets) {
    check(!frame_logits.empty() &&
              frame_logits.size() == frame_targets.size(),
          "cross_entropy_loss: one target list per frame");
    Var total = t.nll_rows(t.log_softmax_rows(frame_logits[0]),
                           frame_targets[0]);
    for (std::size_t f = 1; f < frame_logits.size(); ++f)
      total = t.add(total, t.nll_rows(t.log_softmax_rows(frame_logits[f]),
                                      frame_targets[f]));
    return total;
  }

  /// Greedy autoregressive decoding of a full token sequence, feeding each
  /// argmax choice back. Deterministic; dropout is off.
  std::vector<int> generate(const Tensor<T>& slots) const {
    std::vector<int> tokens;
    tokens.reserve(cfg_.sequence_length);
    for (int l = 0; l < cfg_.sequence_length; ++l) {
      Tape<T> t;
      Var out = forward_rows(t, t.input(slots), tokens, nullptr);
      const Tensor<T>& ov = t.value(out);
      const int last = ov.rows() - 1;
      int best = 0;
      for (int j = 1; j < ov.cols(); ++j)
        if (ov.at(last, j) > ov.at(last, best)) best = j;
      tokens.push_back(best);
    }
    return tokens;
  }

private:
  struct Block {
    LayerNorm<T> ln1;
    MultiHeadAttention<T> self_attn;
    LayerNorm<T> ln2;
    MultiHeadAttention<T> cross_attn;
    LayerNorm<T> ln3;
    Linear<T> ffn0, ffn1;
  };

  static DecoderConfig validated(DecoderConfig c) {
    c.validate();
    return c;
  }

  Var maybe_drop(Tape<T>& t, Var x, Rng* rng) const {
    if (rng == nullptr || cfg_.dropout <= 0.0) return x;
    return t.dropout(x, static_cast<T>(cfg_.dropout), *rng);
  }

  /// Mask for a slot-prefix sequence: token queries see every slot and the
  /// tokens at or before them; slot queries see only slots.
  Tensor<T> prefix_mask(int n_slots, int rows) const {
    const int total = n_slots + rows;
    Tensor<T> m({total, total});
    for (int i = 0; i < total; ++i)
      for (int j = n_slots; j < total; ++j)
        if (i < n_slots || j > i) m.at(i, j) = T(-1e9);
    return m;
  }

  /// Shared forward over [BOS, emb(prefix)] rows; prefix may be any length
  /// below sequence_length (generation grows it one token at a time).
  Var forward_rows(Tape<T>& t, Var slots, const std::vector<int>& prefix,
                   Rng* dropout_rng) const {
    const int rows = static_cast<int>(prefix.size()) + 1;
    check(rows <= cfg_.sequence_length,
          "decoder: prefix longer than sequence_length");
    for (int z : prefix)
      if (z < 0 || z >= cfg_.vocab_size)
        throw std::domain_error("decoder: token index outside vocabulary");

    Var x = t.param(const_cast<Param<T>&>(bos_));
    if (!prefix.empty())
      x = t.concat_rows(
          x, t.embed_rows(t.param(const_cast<Param<T>&>(embed_)), prefix));
    x = t.add(x, t.slice_rows(t.param(const_cast<Param<T>&>(pos_)), 0, rows));
    x = maybe_drop(t, x, dropout_rng);

    Var memory = slot_proj_.apply(t, slots);
    if (cfg_.slot_prefix) {
      const int n = t.value(memory).rows();
      x = t.concat_rows(memory, x);
      const Tensor<T> mask = prefix_mask(n, rows);
      for (const Block& blk : blocks_) {
        Var h = blk.ln1.apply(t, x);
        x = t.add(x, maybe_drop(t, blk.self_attn.apply(t, h, h, &mask),
                                dropout_rng));
        Var f = blk.ln3.apply(t, x);
        f = blk.ffn1.apply(t, t.relu(blk.ffn0.apply(t, f)));
        x = t.add(x, maybe_drop(t, f, dropout_rng));
      }
      x = t.slice_rows(x, n, rows);
    } else {
      const Tensor<T> mask = causal_mask<T>(rows);
      for (const Block& blk : blocks_) {
        Var h = blk.ln1.apply(t, x);
        x = t.add(x, maybe_drop(t, blk.self_attn.apply(t, h, h, &mask),
                                dropout_rng));
        Var c = blk.ln2.apply(t, x);
        x = t.add(x, maybe_drop(t, blk.cross_attn.apply(t, c, memory),
                                dropout_rng));
        Var f = blk.ln3.apply(t, x);
        f = blk.ffn1.apply(t, t.relu(blk.ffn0.apply(t, f)));
        x = t.add(x, maybe_drop(t, f, dropout_rng));
      }
    }
    return t.log_softmax_rows(head_.apply(t, final_ln_.apply(t, x)));
  }

  DecoderConfig cfg_;
  Param<T> embed_, pos_, bos_;
  Linear<T> slot_proj_;
  std::vector<Block> blocks_;
  LayerNorm<T> final_ln_;
  Linear<T> head_;
  ParamSet<T> params_;
};

}  // namespace steve

#endif  // STEVE_SLOT_DECODER_HPP
