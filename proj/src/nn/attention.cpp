#include "trm/nn/attention.hpp"

#include <cmath>

#include "trm/error.hpp"
#include "trm/simd/kernels.hpp"

namespace trm::nn {

std::size_t AttentionMask::visible_in_row(std::size_t i) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < n_; ++j) n += bits_[i * n_ + j];
  return n;
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name,
                                       std::size_t d_model, std::size_t heads, Rng& rng)
    : d_(d_model), heads_(heads) {
  if (heads == 0 || d_model % heads != 0)
    throw ConfigError(name + ": model width must be divisible by head count");
  // No q/k/v bias: a key bias shifts every score in a row equally and has
  // identically zero gradient.
  qkv_ = Linear(store, name + ".qkv", d_model, 3 * d_model, rng, /*bias=*/false);
  out_ = Linear(store, name + ".out", d_model, d_model, rng);
}

Tensor2 MultiHeadAttention::forward(const Tensor2& x, std::size_t seq,
                                    const AttentionMask& mask, Cache* cache) const {
  if (mask.size() != seq || seq == 0 || x.rows() % seq != 0)
    throw ConfigError("attention: mask/sequence shape mismatch");
  const auto& k = simd::active();
  const std::size_t batch = x.rows() / seq;
  const std::size_t dh = d_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t stride = 3 * d_;

  Tensor2 qkv = qkv_.forward(x);
  Tensor2 heads_out(x.rows(), d_);
  std::vector<double> probs(batch * heads_ * seq * seq, 0.0);
  std::vector<double> scores(seq);

  for (std::size_t b = 0; b < batch; ++b) {
    const double* base = qkv.data() + b * seq * stride;
    for (std::size_t h = 0; h < heads_; ++h) {
      const std::size_t qo = h * dh;
      const std::size_t ko = d_ + h * dh;
      const std::size_t vo = 2 * d_ + h * dh;
      for (std::size_t i = 0; i < seq; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask.visible(i, j)) continue;
          scores[j] = k.dot(base + i * stride + qo, base + j * stride + ko, dh) * scale;
          mx = std::max(mx, scores[j]);
        }
        double* p = probs.data() + ((b * heads_ + h) * seq + i) * seq;
        double z = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask.visible(i, j)) continue;
          p[j] = std::exp(scores[j] - mx);
          z += p[j];
        }
        double* out = heads_out.data() + (b * seq + i) * d_ + qo;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask.visible(i, j)) continue;
          p[j] /= z;
          k.axpy(p[j], base + j * stride + vo, out, dh);
        }
      }
    }
  }

  Tensor2 y = out_.forward(heads_out);
  if (cache != nullptr) {
    cache->x = x;
    cache->qkv = std::move(qkv);
    cache->heads_out = std::move(heads_out);
    cache->probs = std::move(probs);
    cache->seq = seq;
  }
  return y;
}

Tensor2 MultiHeadAttention::backward(const Cache& cache, const AttentionMask& mask,
                                     const Tensor2& dy) {
  const auto& k = simd::active();
  const std::size_t seq = cache.seq;
  const std::size_t batch = cache.x.rows() / seq;
  const std::size_t dh = d_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t stride = 3 * d_;

  Tensor2 d_heads = out_.backward(cache.heads_out, dy);
  Tensor2 d_qkv(cache.qkv.rows(), stride);
  std::vector<double> dp(seq);

  for (std::size_t b = 0; b < batch; ++b) {
    const double* base = cache.qkv.data() + b * seq * stride;
    double* dbase = d_qkv.data() + b * seq * stride;
    for (std::size_t h = 0; h < heads_; ++h) {
      const std::size_t qo = h * dh;
      const std::size_t ko = d_ + h * dh;
      const std::size_t vo = 2 * d_ + h * dh;
      for (std::size_t i = 0; i < seq; ++i) {
        const double* p = cache.probs.data() + ((b * heads_ + h) * seq + i) * seq;
        const double* dout = d_heads.data() + (b * seq + i) * d_ + qo;
        double weighted = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask.visible(i, j)) continue;
          dp[j] = k.dot(dout, base + j * stride + vo, dh);
          weighted += p[j] * dp[j];
          k.axpy(p[j], dout, dbase + j * stride + vo, dh);
        }
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask.visible(i, j)) continue;
          const double ds = p[j] * (dp[j] - weighted) * scale;
          k.axpy(ds, base + j * stride + ko, dbase + i * stride + qo, dh);
          k.axpy(ds, base + i * stride + qo, dbase + j * stride + ko, dh);
        }
      }
    }
  }
  return qkv_.backward(cache.x, d_qkv);
}

TransformerBlock::TransformerBlock(ParamStore& store, const std::string& name,
                                   std::size_t d_model, std::size_t heads,
                                   std::size_t ffn_width, Rng& rng)
    : ln1_(store, name + ".ln1", d_model),
      ln2_(store, name + ".ln2", d_model),
      attn_(store, name + ".attn", d_model, heads, rng),
      ff1_(store, name + ".ff1", d_model, ffn_width, rng),
      ff2_(store, name + ".ff2", ffn_width, d_model, rng) {}

Tensor2 TransformerBlock::forward(const Tensor2& x, std::size_t seq,
                                  const AttentionMask& mask, Cache* cache) const {
  LayerNorm::Cache ln1c, ln2c;
  Tensor2 a_in = ln1_.forward(x, cache ? &ln1c : nullptr);
  Tensor2 h = attn_.forward(a_in, seq, mask, cache ? &cache->attn : nullptr);
  for (std::size_t i = 0; i < h.size(); ++i) h.values()[i] += x.values()[i];

  Tensor2 f_in = ln2_.forward(h, cache ? &ln2c : nullptr);
  Tensor2 pre = ff1_.forward(f_in);
  Tensor2 act = pre;
  for (double& v : act.values()) v = activate(Activation::gelu, v);
  Tensor2 y = ff2_.forward(act);
  for (std::size_t i = 0; i < y.size(); ++i) y.values()[i] += h.values()[i];

  if (cache != nullptr) {
    cache->ln1 = std::move(ln1c);
    cache->ln2 = std::move(ln2c);
    cache->ln1_out = std::move(a_in);
    cache->ln2_out = std::move(f_in);
    cache->ff_hidden_pre = std::move(pre);
    cache->ff_hidden = std::move(act);
  }
  return y;
}

Tensor2 TransformerBlock::backward(const Cache& cache, const AttentionMask& mask,
                                   const Tensor2& dy) {
  Tensor2 d_act = ff2_.backward(cache.ff_hidden, dy);
  for (std::size_t i = 0; i < d_act.size(); ++i)
    d_act.values()[i] *= activate_grad(Activation::gelu, cache.ff_hidden_pre.values()[i]);
  Tensor2 d_fin = ff1_.backward(cache.ln2_out, d_act);
  Tensor2 dh = ln2_.backward(cache.ln2, d_fin);
  for (std::size_t i = 0; i < dh.size(); ++i) dh.values()[i] += dy.values()[i];

  Tensor2 d_ain = attn_.backward(cache.attn, mask, dh);
  Tensor2 dx = ln1_.backward(cache.ln1, d_ain);
  for (std::size_t i = 0; i < dx.size(); ++i) dx.values()[i] += dh.values()[i];
  return dx;
}

TransformerStack::TransformerStack(ParamStore& store, const std::string& name,
                                   std::size_t layers, std::size_t d_model,
                                   std::size_t heads, std::size_t ffn_width, Rng& rng) {
  for (std::size_t l = 0; l < layers; ++l)
    blocks_.emplace_back(store, name + ".block" + std::to_string(l), d_model, heads,
                         ffn_width, rng);
  final_ln_ = LayerNorm(store, name + ".ln_final", d_model);
}

Tensor2 TransformerStack::forward(const Tensor2& x, std::size_t seq,
                                  const AttentionMask& mask, Cache* cache) const {
  if (cache != nullptr) cache->blocks.assign(blocks_.size(), {});
  Tensor2 h = x;
  for (std::size_t l = 0; l < blocks_.size(); ++l)
    h = blocks_[l].forward(h, seq, mask, cache ? &cache->blocks[l] : nullptr);
  return final_ln_.forward(h, cache ? &cache->final_ln : nullptr);
}

Tensor2 TransformerStack::backward(const Cache& cache, const AttentionMask& mask,
                                   const Tensor2& dy) {
  Tensor2 d = final_ln_.backward(cache.final_ln, dy);
  for (std::size_t l = blocks_.size(); l-- > 0;)
    d = blocks_[l].backward(cache.blocks[l], mask, d);
  return d;
}

}  // namespace trm::nn
