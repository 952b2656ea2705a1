#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string_view>

#include "trm/error.hpp"
#include "trm/world/world_json.hpp"

namespace trm::world {

using nlohmann::json;

namespace {

json tensor_json(const nn::Tensor2& t) {
  json rows = json::array();
  for (std::size_t r = 0; r < t.rows(); ++r)
    rows.push_back(std::vector<double>(t.row(r).begin(), t.row(r).end()));
  return rows;
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  try {
    out = j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("world.") + key + ": wrong type");
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_events(std::ostream& out, const EventLog& log) {
  out << "epoch,query_id,user_id,item_id,ctr,real_play\n";
  for (const auto& e : log.events)
    out << e.epoch << ',' << e.query << ',' << e.user << ',' << e.item << ',' << int{e.ctr}
        << ',' << int{e.real_play} << '\n';
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void to_json(json& j, const WorldConfig& c) {
  j = json{{"latent_dim", c.latent_dim},
           {"items", c.items},
           {"mixture_components", c.mixture_components},
           {"mixture_spread", c.mixture_spread},
           {"mixture_sd", c.mixture_sd},
           {"zipf_exponent", c.zipf_exponent},
           {"churn_rate", c.churn_rate},
           {"churn_mode", to_string(c.churn_mode)},
           {"users", c.users},
           {"queries", c.queries},
           {"anchors", c.anchors},
           {"anchor_radius", c.anchor_radius},
           {"smoothness", c.smoothness},
           {"lipschitz", c.lipschitz},
           {"offset", c.offset},
           {"content_dim", c.content_dim},
           {"nuisance_dim", c.nuisance_dim},
           {"content_noise", c.content_noise},
           {"nuisance_scale", c.nuisance_scale},
           {"content_views", c.content_views},
           {"epochs", c.epochs},
           {"events_per_epoch", c.events_per_epoch},
           {"seed", c.seed}};
}

void from_json(const json& j, WorldConfig& c) {
  if (!j.is_object()) throw ConfigError("world section must be an object");
  const std::map<std::string, std::function<void(const json&)>> fields{
      {"latent_dim", [&](const json& v) { read_field(v, "latent_dim", c.latent_dim); }},
      {"items", [&](const json& v) { read_field(v, "items", c.items); }},
      {"mixture_components",
       [&](const json& v) { read_field(v, "mixture_components", c.mixture_components); }},
      {"mixture_spread", [&](const json& v) { read_field(v, "mixture_spread", c.mixture_spread); }},
      {"mixture_sd", [&](const json& v) { read_field(v, "mixture_sd", c.mixture_sd); }},
      {"zipf_exponent", [&](const json& v) { read_field(v, "zipf_exponent", c.zipf_exponent); }},
      {"churn_rate", [&](const json& v) { read_field(v, "churn_rate", c.churn_rate); }},
      {"churn_mode",
       [&](const json& v) {
         std::string s;
         read_field(v, "churn_mode", s);
         c.churn_mode = churn_mode_from_string(s);
       }},
      {"users", [&](const json& v) { read_field(v, "users", c.users); }},
      {"queries", [&](const json& v) { read_field(v, "queries", c.queries); }},
      {"anchors", [&](const json& v) { read_field(v, "anchors", c.anchors); }},
      {"anchor_radius", [&](const json& v) { read_field(v, "anchor_radius", c.anchor_radius); }},
      {"smoothness", [&](const json& v) { read_field(v, "smoothness", c.smoothness); }},
      {"lipschitz", [&](const json& v) { read_field(v, "lipschitz", c.lipschitz); }},
      {"offset", [&](const json& v) { read_field(v, "offset", c.offset); }},
      {"content_dim", [&](const json& v) { read_field(v, "content_dim", c.content_dim); }},
      {"nuisance_dim", [&](const json& v) { read_field(v, "nuisance_dim", c.nuisance_dim); }},
      {"content_noise", [&](const json& v) { read_field(v, "content_noise", c.content_noise); }},
      {"nuisance_scale", [&](const json& v) { read_field(v, "nuisance_scale", c.nuisance_scale); }},
      {"content_views", [&](const json& v) { read_field(v, "content_views", c.content_views); }},
      {"epochs", [&](const json& v) { read_field(v, "epochs", c.epochs); }},
      {"events_per_epoch",
       [&](const json& v) { read_field(v, "events_per_epoch", c.events_per_epoch); }},
      {"seed", [&](const json& v) { read_field(v, "seed", c.seed); }},
  };
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("world: unknown key '" + key + "'");
    it->second(value);
  }
}

void to_json(json& j, const BayesModel& b) {
  j = json{{"smoothness", b.smoothness},
           {"lipschitz", b.lipschitz},
           {"offset", b.offset},
           {"radii", b.radii},
           {"anchors", tensor_json(b.anchors)},
           {"user_weights", tensor_json(b.user_weights)},
           {"query_weights", tensor_json(b.query_weights)}};
}

std::vector<std::string> export_world(const World& w, const std::filesystem::path& dir,
                                      const HolderCertificate& cert) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;

  write_text(dir / "world_config.json", json(w.cfg).dump(2) + "\n");
  files.push_back("world_config.json");

  {
    std::ofstream out(dir / "events.csv", std::ios::binary);
    write_events(out, w.log);
    if (!out) throw InputError("cannot write events.csv");
    files.push_back("events.csv");
  }
  {
    std::ofstream out(dir / "catalog.csv", std::ios::binary);
    out.precision(17);
    out << "item_id,slot,birth_epoch,retire_epoch,exposures";
    for (std::size_t j = 0; j < w.cfg.latent_dim; ++j) out << ",z" << j;
    out << '\n';
    for (const auto& it : w.catalog.items) {
      out << it.id << ',' << it.slot << ',' << it.birth << ',';
      if (it.retire == kAlive)
        out << -1;
      else
        out << it.retire;
      out << ',' << w.log.exposures[it.id];
      for (double v : it.z) out << ',' << v;
      out << '\n';
    }
    files.push_back("catalog.csv");
  }
  {
    std::ofstream out(dir / "contexts.csv", std::ios::binary);
    out.precision(17);
    out << "kind,id";
    for (std::size_t k = 0; k < w.bayes.anchors.rows(); ++k) out << ",f" << k;
    out << '\n';
    for (std::size_t u = 0; u < w.bayes.users(); ++u) {
      out << "user," << u;
      for (double v : w.bayes.user_weights.row(u)) out << ',' << v;
      out << '\n';
    }
    for (std::size_t q = 0; q < w.bayes.queries(); ++q) {
      out << "query," << q;
      for (double v : w.bayes.query_weights.row(q)) out << ',' << v;
      out << '\n';
    }
    files.push_back("contexts.csv");
  }
  w.content.save(dir / "content_embeddings.tsv");
  files.push_back("content_embeddings.tsv");

  json bayes = w.bayes;
  bayes["certificate"] = {{"pairs", cert.pairs},
                          {"violations", cert.violations},
                          {"max_ratio", cert.max_ratio},
                          {"passed", cert.passed()}};
  write_text(dir / "bayes.json", bayes.dump(2) + "\n");
  files.push_back("bayes.json");

  // Summary statistics, with the closed forms they should track.
  std::size_t ctr = 0, play = 0;
  for (const auto& e : w.log.events) ctr += e.ctr, play += e.real_play;
  const double n_events = static_cast<double>(std::max<std::size_t>(1, w.log.events.size()));
  std::size_t survivors = 0;
  for (const auto& it : w.catalog.items) survivors += it.birth == 0 && it.retire == kAlive;
  const std::size_t top = std::max<std::size_t>(1, w.cfg.items / 100);
  std::size_t top_hits = 0;
  for (const auto& e : w.log.events) top_hits += w.catalog.items[e.item].slot < top;

  json summary;
  summary["events"] = w.log.events.size();
  summary["items_total"] = w.catalog.items.size();
  summary["ctr_rate"] = static_cast<double>(ctr) / n_events;
  summary["real_play_rate"] = static_cast<double>(play) / n_events;
  summary["churn"] = {
      {"mode", to_string(w.cfg.churn_mode)},
      {"rate", w.cfg.churn_rate},
      {"retired_per_epoch", w.catalog.retired_per_epoch},
      {"expected_retired_per_epoch",
       static_cast<std::size_t>(std::llround(w.cfg.churn_rate * static_cast<double>(w.cfg.items)))},
      {"initial_cohort_survivors", survivors},
      {"uniform_churn_expected_survivors",
       expected_survivors(w.cfg.items, w.cfg.churn_rate, w.cfg.epochs - 1)}};
  summary["zipf"] = {{"top_slots", top},
                     {"top_share_measured", static_cast<double>(top_hits) / n_events},
                     {"top_share_expected", zipf_top_share(w.cfg.items, top, w.cfg.zipf_exponent)}};
  summary["holder_certificate_passed"] = cert.passed();
  summary["events_fnv1a"] = file_hash(dir / "events.csv");
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  files.push_back("summary.json");
  return files;
}

World load_world(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("world directory not found: " + dir.string());
  const json cfg_json = read_json(dir / "world_config.json");
  WorldConfig cfg;
  try {
    cfg = cfg_json.get<WorldConfig>();
  } catch (const ConfigError& e) {
    throw InputError(std::string("world_config.json: ") + e.what());
  }
  World w = build_world(cfg);

  const json summary = read_json(dir / "summary.json");
  const auto recorded = summary.value("events_fnv1a", std::uint64_t{0});
  std::ostringstream events;
  write_events(events, w.log);
  const auto regenerated = fnv1a(events.str());
  if (regenerated != recorded || file_hash(dir / "events.csv") != recorded)
    throw InputError("world in " + dir.string() +
                     " does not match its config (event log hash differs)");
  return w;
}

}  // namespace trm::world
