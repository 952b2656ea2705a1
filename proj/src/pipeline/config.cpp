#include "trm/pipeline/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>

#include "trm/error.hpp"
#include "trm/world/world_json.hpp"

namespace trm::pipeline {

using nlohmann::json;

namespace {

using Fields = std::map<std::string, std::function<void(const json&)>>;

void read_object(const json& j, const std::string& section, const Fields& fields) {
  if (!j.is_object()) throw ConfigError(section + " must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError(section + ": unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception&) {
      throw ConfigError(section + "." + key + ": wrong type");
    }
  }
}

template <typename T>
std::function<void(const json&)> into(T& out) {
  return [&out](const json& v) {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_unsigned()) throw json::type_error::create(302, "expected unsigned", &v);
    }
    out = v.get<T>();
  };
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  auto& t = c.tokenizer;
  auto& m = c.model;
  auto& tr = c.train;
  auto& ev = c.eval;
  auto& sw = c.sweep;
  auto& v = c.verify;
  read_object(j, "config",
              {{"world", [&](const json& x) { world::from_json(x, c.world); }},
               {"tokenizer",
                [&](const json& x) {
                  read_object(x, "tokenizer",
                              {{"layers", into(t.layers)},
                               {"bpe_budget", into(t.bpe_budget)},
                               {"min_frequency", into(t.min_frequency)},
                               {"min_coclicks", into(t.min_coclicks)},
                               {"align_steps", into(t.adapter.steps)},
                               {"align_batch", into(t.adapter.batch)},
                               {"align_tau", into(t.adapter.tau)},
                               {"align_learning_rate", into(t.adapter.learning_rate)}});
                }},
               {"model",
                [&](const json& x) {
                  read_object(x, "model",
                              {{"variant", into(m.variant)},
                               {"ablations", into(m.ablations)},
                               {"item_dim", into(m.item_dim)},
                               {"tower_hidden", into(m.tower_hidden)},
                               {"tower_d_model", into(m.tower_d_model)},
                               {"tower_layers", into(m.tower_layers)},
                               {"tower_heads", into(m.tower_heads)},
                               {"id_buckets", into(m.id_buckets)},
                               {"gen_dim", into(m.gen_dim)},
                               {"mem_buckets", into(m.mem_buckets)},
                               {"mem_dim", into(m.mem_dim)},
                               {"deep_hidden", into(m.deep_hidden)},
                               {"dropout", into(m.dropout)},
                               {"pooling", into(m.pooling)},
                               {"n_q", into(m.n_q)},
                               {"n_u", into(m.n_u)},
                               {"gen_transformer_layers", into(m.gen_transformer_layers)},
                               {"gen_heads", into(m.gen_heads)},
                               {"gen_d_model", into(m.gen_d_model)},
                               {"positional", into(m.positional)},
                               {"lambda", into(m.lambda)}});
                }},
               {"train",
                [&](const json& x) {
                  read_object(x, "train",
                              {{"passes", into(tr.passes)},
                               {"batch", into(tr.batch)},
                               {"learning_rate", into(tr.learning_rate)},
                               {"seeds", into(tr.seeds)}});
                }},
               {"eval",
                [&](const json& x) {
                  read_object(x, "eval",
                              {{"age_edges", into(ev.age_edges)},
                               {"min_bucket_count", into(ev.min_bucket_count)}});
                }},
               {"sweep",
                [&](const json& x) {
                  read_object(x, "sweep",
                              {{"widths", into(sw.widths)},
                               {"id_variant", into(sw.id_variant)},
                               {"token_variant", into(sw.token_variant)}});
                }},
               {"verify", [&](const json& x) {
                  read_object(x, "verify",
                              {{"holder_pairs", into(v.holder_pairs)},
                               {"s_grid", into(v.s_grid)},
                               {"d_grid", into(v.d_grid)},
                               {"corrupt_quantizer", into(v.corrupt_quantizer)},
                               {"gate_decomposition", into(v.gate_decomposition)},
                               {"decomposition_items", into(v.decomposition_items)},
                               {"decomposition_contexts", into(v.decomposition_contexts)},
                               {"decomposition_layers", into(v.decomposition_layers)},
                               {"decomposition_features", into(v.decomposition_features)}});
                }}});
  if (m.pooling != "sum" && m.pooling != "mean")
    throw ConfigError("model.pooling must be 'sum' or 'mean'");
  if (m.lambda < 0.0) throw ConfigError("model.lambda must be >= 0");
  if (tr.passes == 0 || tr.batch == 0) throw ConfigError("train.passes and train.batch must be >= 1");
  if (!(tr.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (t.layers.empty()) throw ConfigError("tokenizer.layers must not be empty");
  if (ev.age_edges.size() < 2 || !std::is_sorted(ev.age_edges.begin(), ev.age_edges.end()) ||
      std::adjacent_find(ev.age_edges.begin(), ev.age_edges.end()) != ev.age_edges.end())
    throw ConfigError("eval.age_edges must be >= 2 strictly increasing values");
  if (sw.widths.size() < 4) throw ConfigError("sweep.widths needs at least 4 tower sizes");
  resolve_variant(m.variant, m.ablations, m.lambda);
  resolve_variant(sw.id_variant, {}, m.lambda);
  resolve_variant(sw.token_variant, {}, m.lambda);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  json world;
  world::to_json(world, c.world);
  const auto& t = c.tokenizer;
  const auto& m = c.model;
  const auto& v = c.verify;
  return json{
      {"world", world},
      {"tokenizer",
       {{"layers", t.layers},
        {"bpe_budget", t.bpe_budget},
        {"min_frequency", t.min_frequency},
        {"min_coclicks", t.min_coclicks},
        {"align_steps", t.adapter.steps},
        {"align_batch", t.adapter.batch},
        {"align_tau", t.adapter.tau},
        {"align_learning_rate", t.adapter.learning_rate}}},
      {"model",
       {{"variant", m.variant},
        {"ablations", m.ablations},
        {"item_dim", m.item_dim},
        {"tower_hidden", m.tower_hidden},
        {"tower_d_model", m.tower_d_model},
        {"tower_layers", m.tower_layers},
        {"tower_heads", m.tower_heads},
        {"id_buckets", m.id_buckets},
        {"gen_dim", m.gen_dim},
        {"mem_buckets", m.mem_buckets},
        {"mem_dim", m.mem_dim},
        {"deep_hidden", m.deep_hidden},
        {"dropout", m.dropout},
        {"pooling", m.pooling},
        {"n_q", m.n_q},
        {"n_u", m.n_u},
        {"gen_transformer_layers", m.gen_transformer_layers},
        {"gen_heads", m.gen_heads},
        {"gen_d_model", m.gen_d_model},
        {"positional", m.positional},
        {"lambda", m.lambda}}},
      {"train",
       {{"passes", c.train.passes},
        {"batch", c.train.batch},
        {"learning_rate", c.train.learning_rate},
        {"seeds", c.train.seeds}}},
      {"eval", {{"age_edges", c.eval.age_edges}, {"min_bucket_count", c.eval.min_bucket_count}}},
      {"sweep",
       {{"widths", c.sweep.widths},
        {"id_variant", c.sweep.id_variant},
        {"token_variant", c.sweep.token_variant}}},
      {"verify",
       {{"holder_pairs", v.holder_pairs},
        {"s_grid", v.s_grid},
        {"d_grid", v.d_grid},
        {"corrupt_quantizer", v.corrupt_quantizer},
        {"gate_decomposition", v.gate_decomposition},
        {"decomposition_items", v.decomposition_items},
        {"decomposition_contexts", v.decomposition_contexts},
        {"decomposition_layers", v.decomposition_layers},
        {"decomposition_features", v.decomposition_features}}}};
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"id-mlp",          "id-transformer", "trm-mlp",
                                              "trm-transformer", "gen-only",       "hybrid"};
  return names;
}

Variant resolve_variant(const std::string& name, const std::vector<std::string>& ablations,
                        double lambda) {
  Variant v;
  v.name = name;
  v.lambda = lambda;
  if (name == "id-mlp" || name == "id-transformer") {
    v.pathway = model::ItemPathway::id;
    v.wide = v.ntp = v.align = false;
    v.lambda = 0.0;
  } else if (name == "gen-only") {
    v.wide = v.ntp = false;
    v.lambda = 0.0;
  } else if (name == "hybrid") {
    v.ntp = false;
    v.lambda = 0.0;
  } else if (name != "trm-mlp" && name != "trm-transformer") {
    throw ConfigError("unknown model variant '" + name + "'");
  }
  if (name == "id-transformer" || name == "trm-transformer") v.tower = model::TowerKind::transformer;

  for (const auto& a : ablations) {
    if (v.pathway == model::ItemPathway::id)
      throw ConfigError("ablation '" + a + "' applies to token variants only");
    if (a == "w/o-align") {
      v.align = false;
    } else if (a == "w/o-hybrid") {
      v.wide = false;
    } else if (a == "w/o-ntp") {
      v.ntp = false;
      v.lambda = 0.0;
    } else {
      throw ConfigError("unknown ablation '" + a + "'");
    }
    v.name += "+" + a;
  }
  return v;
}

}  // namespace trm::pipeline
