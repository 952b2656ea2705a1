#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "trm/align/align.hpp"
#include "trm/nn/tensor.hpp"
#include "trm/rq/quantizer.hpp"

namespace trm::world {

enum class ChurnMode { oldest, uniform };

struct WorldConfig {
  std::size_t latent_dim = 4;  // d*
  std::size_t items = 600;     // catalog slots; one alive item per slot
  std::size_t mixture_components = 8;
  double mixture_spread = 1.5;  // sd of component centres
  double mixture_sd = 0.45;     // sd within a component
  double zipf_exponent = 1.0;
  double churn_rate = 0.1;  // rho, fraction retired per epoch
  ChurnMode churn_mode = ChurnMode::oldest;
  std::size_t users = 8;
  std::size_t queries = 12;
  std::size_t anchors = 6;
  double anchor_radius = 1.5;
  double smoothness = 1.0;  // s
  double lipschitz = 3.0;   // L_eta
  double offset = -1.0;
  // Content-embedding stub: R [z + noise ; nuisance], pooled over noisy views.
  std::size_t content_dim = 16;
  std::size_t nuisance_dim = 4;
  double content_noise = 0.15;
  double nuisance_scale = 0.5;
  std::size_t content_views = 4;
  std::size_t epochs = 8;
  std::size_t events_per_epoch = 4000;
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;
};

const char* to_string(ChurnMode m);
ChurnMode churn_mode_from_string(const std::string& s);

/// eta*(u, q, z) = offset + sum_k c_k(u, q) L_eta max(0, r_k - |z - z_k|^s),
/// c(u, q) = w / |w|_1 with w = user_weights[u] + query_weights[q] (c = 0
/// when w = 0). Each term is s-Hoelder with constant |c_k| L_eta.
struct BayesModel {
  nn::Tensor2 anchors;  // K x d*
  std::vector<double> radii;
  double smoothness = 1.0;
  double lipschitz = 1.0;
  double offset = 0.0;
  nn::Tensor2 user_weights;   // U x K, also the user features X_U
  nn::Tensor2 query_weights;  // Q x K, also the query features X_Q

  std::size_t users() const { return user_weights.rows(); }
  std::size_t queries() const { return query_weights.rows(); }
  std::size_t dim() const { return anchors.cols(); }

  std::vector<double> mixing(std::size_t u, std::size_t q) const;
  double eta(std::size_t u, std::size_t q, std::span<const double> z) const;
  double eta(std::span<const double> c, std::span<const double> z) const;
  double prob(std::size_t u, std::size_t q, std::span<const double> z) const;
};

/// Throws ConfigError for s outside (0, 1] or L_eta <= 0.
BayesModel build_bayes(const WorldConfig& cfg);

struct HolderCertificate {
  std::size_t pairs = 0;
  std::size_t violations = 0;
  double max_ratio = 0.0;  // max |d eta| / (L_eta |dz|^s)
  bool passed() const { return violations == 0; }
};

/// Samples `pairs` (u, q, z1, z2) with z1 near the anchors and |z2 - z1| spread
/// over several scales, and counts violations of the Hoelder bound.
HolderCertificate holder_certificate(const BayesModel& bayes, std::size_t pairs,
                                     std::uint64_t seed);

inline constexpr std::size_t kAlive = std::numeric_limits<std::size_t>::max();

struct ItemRecord {
  std::uint64_t id = 0;
  std::size_t slot = 0;
  std::vector<double> z;
  std::size_t birth = 0;
  std::size_t retire = kAlive;  // first epoch the item is gone
  bool alive_at(std::size_t epoch) const { return birth <= epoch && epoch < retire; }
};

struct Catalog {
  std::vector<ItemRecord> items;  // id == index
  std::vector<double> slot_weight;  // Zipf weight of each slot, sums to 1
  std::vector<std::vector<std::uint64_t>> slot_item;  // [epoch][slot] -> item id
  std::vector<std::size_t> retired_per_epoch;
  std::size_t epochs() const { return slot_item.size(); }
  /// Alive item ids at `epoch`, in slot order.
  const std::vector<std::uint64_t>& alive(std::size_t epoch) const { return slot_item.at(epoch); }
};

/// Items born with z from a Gaussian mixture; each epoch after the first a
/// fraction rho is retired (oldest-biased or uniform) and the slot refilled.
/// Popularity is Zipf over slots, so a newborn inherits its slot's rank.
Catalog gen_catalog(const WorldConfig& cfg);

/// Expected survivors of the initial cohort after `rounds` churn rounds:
/// n (1 - rho)^rounds. A catalog of E epochs has E - 1 rounds.
double expected_survivors(std::size_t items, double rho, std::size_t rounds);

/// Share of exposures taken by the top `top` slots: H_{top,a} / H_{n,a}.
double zipf_top_share(std::size_t n, std::size_t top, double exponent);

struct Event {
  std::uint32_t epoch = 0;
  std::uint32_t query = 0;
  std::uint32_t user = 0;
  std::uint64_t item = 0;
  std::uint8_t ctr = 0;
  std::uint8_t real_play = 0;
};

struct EventLog {
  std::vector<Event> events;
  std::vector<std::uint64_t> exposures;  // by item id
  std::size_t age(const Event& e, const Catalog& c) const { return e.epoch - c.items[e.item].birth; }
};

/// (u, q) uniform, item by slot weight among alive items. One uniform draw U
/// per event: ctr = U < sigma(eta*), real_play = U < sigma(eta* - 0.5).
EventLog sample_events(const Catalog& catalog, const BayesModel& bayes, std::size_t epochs,
                       std::size_t events_per_epoch, std::uint64_t seed);

/// Items with exposure weights, enumerated against every (u, q) at 1/(U Q).
struct Population {
  nn::Tensor2 z;
  std::vector<double> weight;  // sums to 1
  std::vector<std::uint64_t> ids;
};

/// The event-sampling measure at `epoch`.
Population exposure_population(const Catalog& catalog, std::size_t epoch);

struct BayesRisks {
  double l_inf = 0.0;      // E H(p*)
  double l_inf_tok = 0.0;  // E BCE(p*, p~)
  double delta_quant = 0.0;
  std::size_t cells = 0;
};

inline constexpr std::size_t kDefaultEnumerationCap = 50'000'000;

/// Exact enumeration with p~(u, q, cell) = E[p* | cell] under the population
/// weights. Throws CapacityError when contexts x items exceeds `cap`.
BayesRisks bayes_risks(const BayesModel& bayes, const Population& pop,
                       std::span<const std::size_t> cell_of_item,
                       std::size_t cap = kDefaultEnumerationCap);
/// Cells are the quantizer's gen-token sequences of z.
BayesRisks bayes_risks(const BayesModel& bayes, const Population& pop,
                       const rq::ResidualQuantizer& q, std::size_t cap = kDefaultEnumerationCap);

/// Content vectors for "item:<id>" and "query:<q>".
align::EmbeddingSource content_embeddings(const WorldConfig& cfg, const BayesModel& bayes,
                                          const Catalog& catalog);

/// Positive pairs from clicks in epochs < `end_epoch`: (query, clicked item)
/// once per distinct pair, and (item, item) for items clicked together in at
/// least `min_coclicks` distinct (user, query) contexts. Item pairs are
/// ranked by that count (ties by ids) and cut at `max_item_pairs`.
struct ClickPairs {
  std::vector<align::Pair> query_item;
  std::vector<align::Pair> item_item;
};
ClickPairs click_pairs(const EventLog& log, std::size_t end_epoch, std::size_t min_coclicks,
                       std::size_t max_item_pairs = 4096);

struct World {
  WorldConfig cfg;
  BayesModel bayes;
  Catalog catalog;
  EventLog log;
  align::EmbeddingSource content;
};

World build_world(const WorldConfig& cfg);

/// world_config.json, events.csv, catalog.csv, contexts.csv,
/// content_embeddings.tsv, bayes.json, summary.json. Returns the file names.
std::vector<std::string> export_world(const World& w, const std::filesystem::path& dir,
                                      const HolderCertificate& cert);

/// Regenerates the world from dir/world_config.json and checks that the
/// regenerated event log hashes to the one recorded in summary.json.
/// Throws InputError when the directory is missing or inconsistent.
World load_world(const std::filesystem::path& dir);

/// FNV-1a 64 of a file's bytes.
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace trm::world
