#include "trm/model/rank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "trm/error.hpp"
#include "trm/nn/loss.hpp"
#include "trm/util/seed.hpp"

namespace trm::model {

namespace {

void copy_row(std::span<const double> src, std::span<double> dst) {
  std::copy(src.begin(), src.end(), dst.begin());
}

void add_row(std::span<const double> src, std::span<double> dst) {
  for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
}

std::vector<std::size_t> offsets_of(const std::vector<std::size_t>& sizes) {
  std::vector<std::size_t> off(sizes.size(), 0);
  for (std::size_t l = 1; l < sizes.size(); ++l) off[l] = off[l - 1] + sizes[l - 1];
  return off;
}

enum Stream : std::uint64_t { kItem = 0, kTower = 1, kGen = 2, kMem = 3 };

}  // namespace

nn::AttentionMask semi_causal_mask(std::size_t n_ctx, std::size_t semantic) {
  const std::size_t n = n_ctx + semantic;
  nn::AttentionMask m(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m.set(i, j, j < n_ctx || (i >= n_ctx && j <= i));
  return m;
}

void GenHeadConfig::validate() const {
  if (n_q == 0 || n_u == 0) throw ConfigError("gen head: N_q and N_u must be >= 1");
  if (heads == 0 || d_model % heads != 0)
    throw ConfigError("gen head: width must be divisible by the head count");
  if (layers == 0) throw ConfigError("gen head: needs at least one transformer layer");
  if (codebook_sizes.empty()) throw ConfigError("gen head: no codebooks");
  for (std::size_t k : codebook_sizes)
    if (k == 0) throw ConfigError("gen head: empty codebook");
}

GenHead::GenHead(nn::ParamStore& store, const std::string& name, const GenHeadConfig& cfg,
                 std::size_t query_dim, std::size_t user_dim, embed::HashedTable* gen_table,
                 Rng& rng)
    : cfg_(cfg), offsets_(offsets_of(cfg.codebook_sizes)), table_(gen_table) {
  cfg_.validate();
  if (table_ == nullptr) throw ConfigError("gen head: gen-token table required");
  const std::size_t vocab = offsets_.back() + cfg_.codebook_sizes.back();
  if (table_->addressing() != embed::Addressing::direct || table_->bucket_count() != vocab)
    throw ConfigError("gen head: the gen table must be directly addressed over the vocabulary");
  const std::size_t d = cfg_.d_model;
  ctx_q_ = nn::Linear(store, name + ".ctx_q", query_dim, cfg_.n_q * d, rng);
  ctx_u_ = nn::Linear(store, name + ".ctx_u", user_dim, cfg_.n_u * d, rng);
  sem_in_ = nn::Linear(store, name + ".sem_in", table_->dim(), d, rng);
  start_ = &store.add(name + ".start", 1, d);
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  for (double& v : start_->value.values()) v = g(rng);
  if (cfg_.positional) pos_ = &store.add(name + ".pos", cfg_.codebook_sizes.size(), d);
  stack_ = nn::TransformerStack(store, name + ".stack", cfg_.layers, d, cfg_.heads, cfg_.ffn, rng);
  for (std::size_t l = 0; l < cfg_.codebook_sizes.size(); ++l)
    out_.emplace_back(store, name + ".head" + std::to_string(l), d, cfg_.codebook_sizes[l], rng);
}

std::vector<nn::Tensor2> GenHead::forward(const nn::Tensor2& xq, const nn::Tensor2& xu,
                                          const std::vector<std::vector<std::uint32_t>>& prefix,
                                          Cache* cache) const {
  const std::size_t b = xq.rows();
  const std::size_t layers = cfg_.codebook_sizes.size();
  if (b == 0 || xu.rows() != b || prefix.size() != b)
    throw InputError("gen head: batch sizes disagree or are empty");
  const std::size_t m = prefix.front().size();
  for (const auto& p : prefix)
    if (p.size() != m) throw InputError("gen head: prefixes must share one length");
  if (m > layers)
    throw InputError("gen head: prefix of " + std::to_string(m) + " tokens exceeds L = " +
                     std::to_string(layers));
  const std::size_t p_len = std::min(m, layers - 1);
  const std::size_t n_ctx = cfg_.n_ctx();
  const std::size_t t_len = n_ctx + 1 + p_len;
  const std::size_t d = cfg_.d_model;

  const nn::Tensor2 cq = ctx_q_.forward(xq);
  const nn::Tensor2 cu = ctx_u_.forward(xu);
  std::vector<std::uint32_t> ids;
  ids.reserve(b * p_len);
  nn::Tensor2 rows(b * p_len, table_->dim());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < p_len; ++j) {
      const std::uint32_t code = prefix[i][j];
      if (code >= cfg_.codebook_sizes[j])
        throw InputError("gen head: code " + std::to_string(code) + " out of range on layer " +
                         std::to_string(j));
      ids.push_back(static_cast<std::uint32_t>(offsets_[j] + code));
      copy_row(table_->lookup(ids.back()), rows.row(ids.size() - 1));
    }
  const nn::Tensor2 sem = p_len > 0 ? sem_in_.forward(rows) : nn::Tensor2();

  nn::Tensor2 x(b * t_len, d);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t base = i * t_len;
    for (std::size_t t = 0; t < cfg_.n_q; ++t) copy_row(cq.row(i).subspan(t * d, d), x.row(base + t));
    for (std::size_t t = 0; t < cfg_.n_u; ++t)
      copy_row(cu.row(i).subspan(t * d, d), x.row(base + cfg_.n_q + t));
    copy_row(start_->value.row(0), x.row(base + n_ctx));
    for (std::size_t j = 0; j < p_len; ++j) copy_row(sem.row(i * p_len + j), x.row(base + n_ctx + 1 + j));
    if (pos_ != nullptr)
      for (std::size_t j = 0; j <= p_len; ++j) add_row(pos_->value.row(j), x.row(base + n_ctx + j));
  }

  const auto mask = semi_causal_mask(n_ctx, p_len + 1);
  nn::TransformerStack::Cache stack_cache;
  nn::Tensor2 h = stack_.forward(x, t_len, mask, cache ? &stack_cache : nullptr);

  std::vector<nn::Tensor2> logits;
  for (std::size_t l = 0; l <= p_len; ++l) {
    nn::Tensor2 hl(b, d);
    for (std::size_t i = 0; i < b; ++i) copy_row(h.row(i * t_len + n_ctx + l), hl.row(i));
    logits.push_back(out_[l].forward(hl));
  }
  if (cache != nullptr) {
    cache->xq = xq;
    cache->xu = xu;
    cache->sem_rows = std::move(rows);
    cache->sem_ids = std::move(ids);
    cache->hidden = std::move(h);
    cache->stack = std::move(stack_cache);
    cache->batch = b;
    cache->prefix = p_len;
  }
  return logits;
}

void GenHead::backward(const Cache& cache, const std::vector<nn::Tensor2>& dlogits) {
  const std::size_t b = cache.batch;
  const std::size_t p_len = cache.prefix;
  const std::size_t n_ctx = cfg_.n_ctx();
  const std::size_t t_len = n_ctx + 1 + p_len;
  const std::size_t d = cfg_.d_model;
  if (dlogits.size() != p_len + 1) throw ConfigError("gen head: one gradient per position expected");

  nn::Tensor2 dh(b * t_len, d);
  for (std::size_t l = 0; l <= p_len; ++l) {
    nn::Tensor2 hl(b, d);
    for (std::size_t i = 0; i < b; ++i) copy_row(cache.hidden.row(i * t_len + n_ctx + l), hl.row(i));
    const nn::Tensor2 dhl = out_[l].backward(hl, dlogits[l]);
    for (std::size_t i = 0; i < b; ++i) copy_row(dhl.row(i), dh.row(i * t_len + n_ctx + l));
  }
  const auto mask = semi_causal_mask(n_ctx, p_len + 1);
  const nn::Tensor2 dx = stack_.backward(cache.stack, mask, dh);

  nn::Tensor2 dcq(b, cfg_.n_q * d), dcu(b, cfg_.n_u * d), dsem(b * p_len, d);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t base = i * t_len;
    for (std::size_t t = 0; t < cfg_.n_q; ++t) copy_row(dx.row(base + t), dcq.row(i).subspan(t * d, d));
    for (std::size_t t = 0; t < cfg_.n_u; ++t)
      copy_row(dx.row(base + cfg_.n_q + t), dcu.row(i).subspan(t * d, d));
    add_row(dx.row(base + n_ctx), start_->grad.row(0));
    for (std::size_t j = 0; j < p_len; ++j) copy_row(dx.row(base + n_ctx + 1 + j), dsem.row(i * p_len + j));
    if (pos_ != nullptr)
      for (std::size_t j = 0; j <= p_len; ++j) add_row(dx.row(base + n_ctx + j), pos_->grad.row(j));
  }
  ctx_q_.backward(cache.xq, dcq);
  ctx_u_.backward(cache.xu, dcu);
  if (p_len == 0) return;
  const nn::Tensor2 drows = sem_in_.backward(cache.sem_rows, dsem);
  for (std::size_t r = 0; r < cache.sem_ids.size(); ++r) table_->accumulate(cache.sem_ids[r], drows.row(r));
}

const char* to_string(TowerKind k) { return k == TowerKind::mlp ? "mlp" : "transformer"; }
const char* to_string(ItemPathway p) { return p == ItemPathway::id ? "id" : "tokens"; }

Tower::Tower(nn::ParamStore& store, const std::string& name, const TowerConfig& cfg,
             std::size_t item_dim, std::size_t query_dim, std::size_t user_dim, Rng& rng)
    : cfg_(cfg), item_dim_(item_dim), query_dim_(query_dim), user_dim_(user_dim) {
  if (cfg_.kind == TowerKind::mlp) {
    std::vector<std::size_t> widths{item_dim + query_dim + user_dim};
    widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    widths.push_back(kHeads);
    for (std::size_t w : widths)
      if (w == 0) throw ConfigError(name + ": zero-width layer");
    mlp_ = nn::Mlp(store, name + ".mlp", widths, nn::Activation::relu, rng);
    return;
  }
  const std::size_t d = cfg_.d_model;
  in_item_ = nn::Linear(store, name + ".in_item", item_dim, d, rng);
  in_q_ = nn::Linear(store, name + ".in_q", query_dim, d, rng);
  in_u_ = nn::Linear(store, name + ".in_u", user_dim, d, rng);
  stack_ = nn::TransformerStack(store, name + ".stack", cfg_.layers, d, cfg_.heads, cfg_.ffn, rng);
  out_ = nn::Linear(store, name + ".out", d, kHeads, rng);
}

nn::Linear& Tower::output() {
  return cfg_.kind == TowerKind::mlp ? mlp_.layers().back() : out_;
}

nn::Tensor2 Tower::forward(const nn::Tensor2& x, Cache* cache) const {
  if (x.cols() != item_dim_ + query_dim_ + user_dim_) throw ConfigError("tower: input width mismatch");
  if (cfg_.kind == TowerKind::mlp) return mlp_.forward(x, cache ? &cache->mlp : nullptr);

  const std::size_t b = x.rows();
  const std::size_t d = cfg_.d_model;
  const nn::Tensor2 ti = in_item_.forward(nn::slice_cols(x, 0, item_dim_));
  const nn::Tensor2 tq = in_q_.forward(nn::slice_cols(x, item_dim_, query_dim_));
  const nn::Tensor2 tu = in_u_.forward(nn::slice_cols(x, item_dim_ + query_dim_, user_dim_));
  nn::Tensor2 tokens(3 * b, d);
  for (std::size_t i = 0; i < b; ++i) {
    copy_row(ti.row(i), tokens.row(3 * i));
    copy_row(tq.row(i), tokens.row(3 * i + 1));
    copy_row(tu.row(i), tokens.row(3 * i + 2));
  }
  const auto mask = nn::AttentionMask::full(3);
  nn::TransformerStack::Cache sc;
  const nn::Tensor2 h = stack_.forward(tokens, 3, mask, cache ? &sc : nullptr);
  nn::Tensor2 pooled(b, d);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t j = 0; j < d; ++j) pooled(i, j) += h(3 * i + t, j) / 3.0;
  nn::Tensor2 y = out_.forward(pooled);
  if (cache != nullptr) {
    cache->x = x;
    cache->tokens = std::move(tokens);
    cache->stack = std::move(sc);
    cache->pooled = std::move(pooled);
  }
  return y;
}

nn::Tensor2 Tower::backward(const Cache& cache, const nn::Tensor2& dy) {
  if (cfg_.kind == TowerKind::mlp) return mlp_.backward(cache.mlp, dy);

  const std::size_t b = dy.rows();
  const std::size_t d = cfg_.d_model;
  const nn::Tensor2 dpooled = out_.backward(cache.pooled, dy);
  nn::Tensor2 dh(3 * b, d);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t j = 0; j < d; ++j) dh(3 * i + t, j) = dpooled(i, j) / 3.0;
  const nn::Tensor2 dtok = stack_.backward(cache.stack, nn::AttentionMask::full(3), dh);
  nn::Tensor2 di(b, d), dq(b, d), du(b, d);
  for (std::size_t i = 0; i < b; ++i) {
    copy_row(dtok.row(3 * i), di.row(i));
    copy_row(dtok.row(3 * i + 1), dq.row(i));
    copy_row(dtok.row(3 * i + 2), du.row(i));
  }
  const nn::Tensor2 dxi = in_item_.backward(nn::slice_cols(cache.x, 0, item_dim_), di);
  const nn::Tensor2 dxq = in_q_.backward(nn::slice_cols(cache.x, item_dim_, query_dim_), dq);
  const nn::Tensor2 dxu =
      in_u_.backward(nn::slice_cols(cache.x, item_dim_ + query_dim_, user_dim_), du);
  return nn::hconcat({&dxi, &dxq, &dxu});
}

void ModelConfig::validate() const {
  if (query_dim == 0 || user_dim == 0) throw ConfigError("model: query and user widths must be set");
  if (item_dim == 0) throw ConfigError("model: item_dim must be >= 1");
  if (pathway == ItemPathway::id) {
    if (id_buckets == 0) throw ConfigError("model: id_buckets must be >= 1");
    if (ntp) throw ConfigError("model: the generative head needs the token pathway");
    return;
  }
  if (codebook_sizes.empty()) throw ConfigError("model: token pathway needs codebook sizes");
  for (std::size_t k : codebook_sizes)
    if (k == 0) throw ConfigError("model: empty codebook");
  if (gen_dim == 0) throw ConfigError("model: gen_dim must be >= 1");
  if (hybrid.use_wide && (mem_buckets == 0 || mem_dim == 0))
    throw ConfigError("model: the wide path needs mem_buckets and mem_dim");
}

RankModel::RankModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), offsets_(offsets_of(cfg.codebook_sizes)) {
  cfg_.validate();
  Rng item_rng(derive_seed(seed, kItem));
  Rng tower_rng(derive_seed(seed, kTower));
  if (cfg_.pathway == ItemPathway::id) {
    id_table_ = std::make_unique<embed::HashedTable>(store_, "item.id_table", cfg_.id_buckets,
                                                     cfg_.item_dim, cfg_.hash_seed, item_rng);
  } else {
    const std::size_t vocab = offsets_.back() + cfg_.codebook_sizes.back();
    gen_table_ = std::make_unique<embed::HashedTable>(store_, "item.gen_table", vocab, cfg_.gen_dim,
                                                      cfg_.hash_seed, item_rng,
                                                      embed::Addressing::direct);
    if (cfg_.hybrid.use_wide) {
      Rng mem_rng(derive_seed(seed, kMem));
      mem_table_ = std::make_unique<embed::HashedTable>(store_, "item.mem_table", cfg_.mem_buckets,
                                                        cfg_.mem_dim, cfg_.hash_seed + 1, mem_rng);
    }
    cfg_.hybrid.gen_layers = cfg_.codebook_sizes.size();
    cfg_.hybrid.out_dim = cfg_.item_dim;
    hybrid_ = embed::HybridEmbedder(store_, "item.hybrid", cfg_.hybrid, gen_table_.get(),
                                    mem_table_.get(), item_rng);
  }
  tower_ = Tower(store_, "tower", cfg_.tower, cfg_.item_dim, cfg_.query_dim, cfg_.user_dim, tower_rng);
  if (cfg_.ntp) {
    Rng gen_rng(derive_seed(seed, kGen));
    cfg_.gen.codebook_sizes = cfg_.codebook_sizes;
    gen_head_ = std::make_unique<GenHead>(store_, "gen", cfg_.gen, cfg_.query_dim, cfg_.user_dim,
                                          gen_table_.get(), gen_rng);
  }
}

RankModel::Inputs RankModel::gather(std::span<const RankExample> batch) const {
  if (batch.empty()) throw InputError("model: empty batch");
  const std::size_t b = batch.size();
  Inputs in;
  in.xq = nn::Tensor2(b, cfg_.query_dim);
  in.xu = nn::Tensor2(b, cfg_.user_dim);
  const bool ids = cfg_.pathway == ItemPathway::id;
  const std::size_t layers = cfg_.codebook_sizes.size();
  for (std::size_t i = 0; i < b; ++i) {
    const RankExample& e = batch[i];
    if (e.xq.size() != cfg_.query_dim || e.xu.size() != cfg_.user_dim)
      throw ConfigError("model: context feature width mismatch");
    copy_row(e.xq, in.xq.row(i));
    copy_row(e.xu, in.xu.row(i));
    if (ids) {
      const auto* id = std::get_if<std::uint64_t>(&e.item);
      if (id == nullptr) throw ConfigError("model: id model given a token example");
      in.ids.push_back(*id);
      continue;
    }
    const auto* seq = std::get_if<rq::TokenSequence>(&e.item);
    if (seq == nullptr) throw ConfigError("model: token model given an id example");
    if (seq->gen_tokens.size() != layers)
      throw ConfigError("model: expected " + std::to_string(layers) + " gen tokens, got " +
                        std::to_string(seq->gen_tokens.size()));
    std::vector<std::uint32_t> global(layers);
    for (std::size_t l = 0; l < layers; ++l) {
      if (seq->gen_tokens[l] >= cfg_.codebook_sizes[l])
        throw InputError("model: gen code out of range on layer " + std::to_string(l));
      global[l] = static_cast<std::uint32_t>(offsets_[l] + seq->gen_tokens[l]);
    }
    in.gen.push_back(std::move(global));
    in.local.push_back(seq->gen_tokens);
    in.mem.push_back(seq->mem_tokens);
  }
  return in;
}

nn::Tensor2 RankModel::item_forward(const Inputs& in, Rng* rng,
                                    embed::HybridEmbedder::Cache* cache) const {
  if (cfg_.pathway == ItemPathway::id) {
    nn::Tensor2 out(in.ids.size(), cfg_.item_dim);
    for (std::size_t i = 0; i < in.ids.size(); ++i) copy_row(embed::id_embed(in.ids[i], *id_table_), out.row(i));
    return out;
  }
  return hybrid_.forward(in.gen, in.mem, rng != nullptr, rng, cache);
}

nn::Tensor2 RankModel::item_embeddings(std::span<const RankExample> batch) const {
  return item_forward(gather(batch), nullptr, nullptr);
}

nn::Tensor2 RankModel::predict(std::span<const RankExample> batch) const {
  const Inputs in = gather(batch);
  const nn::Tensor2 item = item_forward(in, nullptr, nullptr);
  return tower_.forward(nn::hconcat({&item, &in.xq, &in.xu}), nullptr);
}

std::vector<nn::Tensor2> RankModel::gen_forward(
    std::span<const RankExample> batch, const std::vector<std::vector<std::uint32_t>>& prefix) const {
  if (!gen_head_) throw ConfigError("model: no generative head");
  const Inputs in = gather(batch);
  return gen_head_->forward(in.xq, in.xu, prefix, nullptr);
}

JointLossReport combine_losses(double l_d, double l_g, double lambda, std::size_t positives) {
  JointLossReport r;
  r.l_d = l_d;
  r.l_g = l_g;
  r.lambda = lambda;
  r.total = l_d + lambda * l_g;
  r.positives = positives;
  return r;
}

JointLossReport RankModel::joint_loss(std::span<const RankExample> batch, double lambda,
                                      bool accumulate, Rng* dropout_rng) {
  if (!(lambda >= 0.0)) throw ConfigError("joint loss: lambda must be >= 0");
  const Inputs in = gather(batch);
  const std::size_t b = batch.size();

  embed::HybridEmbedder::Cache hc;
  const nn::Tensor2 item = item_forward(in, dropout_rng, accumulate ? &hc : nullptr);
  Tower::Cache tc;
  const nn::Tensor2 logits = tower_.forward(nn::hconcat({&item, &in.xq, &in.xu}), accumulate ? &tc : nullptr);

  double l_d = 0.0;
  double l_g = 0.0;
  const double scale = 1.0 / static_cast<double>(b * kHeads);
  nn::Tensor2 dlogits(b, kHeads);
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < b; ++i) {
    const double y[kHeads] = {static_cast<double>(batch[i].ctr), static_cast<double>(batch[i].real_play)};
    for (std::size_t h = 0; h < kHeads; ++h) {
      l_d += nn::bce_from_logit(y[h], logits(i, h)) * scale;
      dlogits(i, h) = nn::bce_grad(y[h], logits(i, h)) * scale;
    }
    if (batch[i].ctr) pos.push_back(i);
  }

  GenHead::Cache gc;
  std::vector<nn::Tensor2> dgen;
  if (gen_head_ && !pos.empty()) {
    const std::size_t np = pos.size();
    nn::Tensor2 xq(np, cfg_.query_dim), xu(np, cfg_.user_dim);
    std::vector<std::vector<std::uint32_t>> seqs;
    for (std::size_t k = 0; k < np; ++k) {
      copy_row(in.xq.row(pos[k]), xq.row(k));
      copy_row(in.xu.row(pos[k]), xu.row(k));
      seqs.push_back(in.local[pos[k]]);
    }
    const bool grad = accumulate && lambda > 0.0;
    const auto gl = gen_head_->forward(xq, xu, seqs, grad ? &gc : nullptr);
    const double inv = 1.0 / static_cast<double>(np);
    for (std::size_t l = 0; l < gl.size(); ++l) {
      nn::Tensor2 d(gl[l].rows(), gl[l].cols());
      for (std::size_t k = 0; k < np; ++k) {
        const auto ce = nn::softmax_ce(gl[l].row(k), seqs[k][l]);
        l_g += ce.loss * inv;
        for (std::size_t j = 0; j < ce.grad.size(); ++j) d(k, j) = lambda * inv * ce.grad[j];
      }
      dgen.push_back(std::move(d));
    }
    if (!grad) dgen.clear();
  }
  const JointLossReport r = combine_losses(l_d, l_g, lambda, pos.size());

  if (!accumulate) return r;
  const nn::Tensor2 dx = tower_.backward(tc, dlogits);
  const nn::Tensor2 ditem = nn::slice_cols(dx, 0, cfg_.item_dim);
  if (cfg_.pathway == ItemPathway::id) {
    for (std::size_t i = 0; i < b; ++i) id_table_->accumulate(in.ids[i], ditem.row(i));
  } else {
    hybrid_.backward(hc, ditem);
  }
  if (!dgen.empty()) gen_head_->backward(gc, dgen);
  return r;
}

Trainer::Trainer(RankModel& model, const TrainConfig& cfg, std::uint64_t seed)
    : model_(model), cfg_(cfg), rng_(seed) {
  if (cfg_.batch == 0) throw ConfigError("train: batch must be >= 1");
  opt_.learning_rate = cfg_.learning_rate;
}

EpochMetrics Trainer::run_epoch(std::span<const RankExample> data) {
  if (data.empty()) throw InputError("train: empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng_);
  EpochMetrics m;
  m.epoch = passes_;
  std::vector<RankExample> batch;
  for (std::size_t start = 0, step = 0; start < order.size(); start += cfg_.batch, ++step) {
    const std::size_t end = std::min(order.size(), start + cfg_.batch);
    batch.clear();
    for (std::size_t k = start; k < end; ++k) batch.push_back(data[order[k]]);
    const auto r = model_.joint_loss(batch, cfg_.lambda, true, &rng_);
    auto diverged = [&](const std::string& why) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << passes_ << ", step " << step << ": L_d=" << r.l_d
          << " L_g=" << r.l_g << " lambda=" << r.lambda << " (" << why << ")";
      return TrainingError(msg.str());
    };
    if (!std::isfinite(r.total)) throw diverged("non-finite loss");
    try {
      nn::optimizer_step(model_.params(), opt_);
    } catch (const TrainingError& e) {
      throw diverged(e.what());
    }
    const double w = static_cast<double>(end - start) / static_cast<double>(order.size());
    m.l_d += w * r.l_d;
    m.l_g += w * r.l_g;
    m.total += w * r.total;
  }
  ++passes_;
  return m;
}

std::vector<EpochMetrics> train(RankModel& model, std::span<const RankExample> data,
                                const TrainConfig& cfg, std::uint64_t seed,
                                const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (cfg.epochs == 0) throw ConfigError("train: epochs must be >= 1");
  Trainer trainer(model, cfg, seed);
  std::vector<EpochMetrics> curve;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    curve.push_back(trainer.run_epoch(data));
    if (on_epoch) on_epoch(curve.back());
  }
  return curve;
}

}  // namespace trm::model
