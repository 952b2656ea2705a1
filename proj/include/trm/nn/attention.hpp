#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trm/nn/layers.hpp"

namespace trm::nn {

/// Square visibility matrix: visible(i, j) means query position i may attend
/// to key position j.
class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(std::size_t n, bool fill = false) : n_(n), bits_(n * n, fill) {}

  static AttentionMask full(std::size_t n) { return AttentionMask(n, true); }

  std::size_t size() const { return n_; }
  bool visible(std::size_t i, std::size_t j) const { return bits_[i * n_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { bits_[i * n_ + j] = v ? 1 : 0; }
  std::size_t visible_in_row(std::size_t i) const;

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Multi-head self attention over a batch of equal-length sequences stored
/// as (batch * seq) x d rows. Row i of each sequence only reads rows j with
/// mask.visible(i, j), so masked-out positions never influence it.
class MultiHeadAttention {
 public:
  struct Cache {
    Tensor2 x;
    Tensor2 qkv;
    Tensor2 heads_out;             // (B*T) x d, before the output projection
    std::vector<double> probs;     // B * H * T * T, zero where masked
    std::size_t seq = 0;
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t d_model,
                     std::size_t heads, Rng& rng);

  Tensor2 forward(const Tensor2& x, std::size_t seq, const AttentionMask& mask,
                  Cache* cache) const;
  Tensor2 backward(const Cache& cache, const AttentionMask& mask, const Tensor2& dy);

 private:
  std::size_t d_ = 0;
  std::size_t heads_ = 0;
  Linear qkv_;
  Linear out_;
};

/// Pre-norm block: x + attn(ln1(x)), then + ffn(ln2(.)) with a GELU FFN.
class TransformerBlock {
 public:
  struct Cache {
    LayerNorm::Cache ln1, ln2;
    Tensor2 ln1_out, ln2_out;
    MultiHeadAttention::Cache attn;
    Tensor2 ff_hidden_pre;
    Tensor2 ff_hidden;
  };

  TransformerBlock() = default;
  TransformerBlock(ParamStore& store, const std::string& name, std::size_t d_model,
                   std::size_t heads, std::size_t ffn_width, Rng& rng);

  Tensor2 forward(const Tensor2& x, std::size_t seq, const AttentionMask& mask,
                  Cache* cache) const;
  Tensor2 backward(const Cache& cache, const AttentionMask& mask, const Tensor2& dy);

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadAttention attn_;
  Linear ff1_, ff2_;
};

/// Blocks followed by a final LayerNorm.
class TransformerStack {
 public:
  struct Cache {
    std::vector<TransformerBlock::Cache> blocks;
    LayerNorm::Cache final_ln;
  };

  TransformerStack() = default;
  TransformerStack(ParamStore& store, const std::string& name, std::size_t layers,
                   std::size_t d_model, std::size_t heads, std::size_t ffn_width,
                   Rng& rng);

  std::size_t layers() const { return blocks_.size(); }

  Tensor2 forward(const Tensor2& x, std::size_t seq, const AttentionMask& mask,
                  Cache* cache) const;
  Tensor2 backward(const Cache& cache, const AttentionMask& mask, const Tensor2& dy);

 private:
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_ln_;
};

}  // namespace trm::nn
