#include "kgmd/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

#include "kgmd/errors.hpp"

namespace kgmd {

namespace {

constexpr std::int64_t kEpochStart = 1'700'000'000;
constexpr std::int64_t kWindowSeconds = 35 * 24 * 3600;

std::string padded(std::size_t i, int width) {
  std::string s = std::to_string(i);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

}  // namespace

void SynthConfig::validate() const {
  const std::size_t D = domain_names.size();
  if (D == 0) throw ConfigError("synth: at least one domain is required");
  if (num_users == 0) throw ConfigError("synth: num_users must be >= 1");
  if (latent_dim == 0) throw ConfigError("synth: latent_dim must be >= 1");
  if (!(temperature > 0)) throw ConfigError("synth: temperature must be > 0");
  if (!(eval_fraction >= 0 && eval_fraction < 1)) throw ConfigError("synth: eval_fraction must be in [0,1)");
  if (!(item_noise >= 0)) throw ConfigError("synth: item_noise must be >= 0");
  if (items_per_domain.size() != D || genres_per_domain.size() != D ||
      interactions_per_user.size() != D || zero_shot_fraction.size() != D) {
    throw ConfigError("synth: per-domain settings must have one entry per domain");
  }
  double zero_shot_total = 0;
  for (std::size_t d = 0; d < D; ++d) {
    const auto& name = domain_names[d];
    if (name.empty() || name.find_first_of("\t\n") != std::string::npos) {
      throw ConfigError("synth: invalid domain name");
    }
    for (std::size_t e = 0; e < d; ++e) {
      if (domain_names[e] == name) throw ConfigError("synth: duplicate domain name '" + name + "'");
    }
    if (items_per_domain[d] == 0) throw ConfigError("synth: items_per_domain must be >= 1");
    if (genres_per_domain[d] == 0) throw ConfigError("synth: genres_per_domain must be >= 1");
    if (!(interactions_per_user[d] >= 1)) throw ConfigError("synth: interactions_per_user must be >= 1");
    if (interactions_per_user[d] > static_cast<double>(items_per_domain[d])) {
      throw ConfigError("synth: requested interactions per user exceed the '" + name + "' catalog");
    }
    if (!(zero_shot_fraction[d] >= 0 && zero_shot_fraction[d] < 1)) {
      throw ConfigError("synth: zero_shot_fraction must be in [0,1)");
    }
    zero_shot_total += zero_shot_fraction[d];
  }
  if (zero_shot_total > 1.0) throw ConfigError("synth: zero_shot_fraction must sum to <= 1");
}

double affinity(const GroundTruth& truth, Index user, Index item, Index domain) {
  const std::size_t k = truth.latent_dim;
  const double* z = truth.user_core.data() + static_cast<std::size_t>(user) * k;
  const double* x = truth.item_latent.data() + static_cast<std::size_t>(item) * k;
  const auto& A = truth.domain_maps.at(domain);
  double total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < k; ++j) row += A[i * k + j] * z[j];
    total += row * x[i];
  }
  return total;
}

std::pair<DatasetBundle, GroundTruth> generate(const SynthConfig& config) {
  config.validate();
  const std::size_t D = config.domain_names.size();
  const std::size_t N = config.num_users;
  const std::size_t k = config.latent_dim;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  DatasetBundle bundle;
  GroundTruth truth;
  truth.latent_dim = k;

  for (std::size_t d = 0; d < D; ++d) {
    bundle.domains.push_back({static_cast<Index>(d), config.domain_names[d]});
  }
  for (std::size_t u = 0; u < N; ++u) bundle.vocab.users.intern("u" + padded(u, 5));

  // Items, genres and item latents.
  std::vector<Index> item_domain;
  std::vector<std::size_t> domain_offset(D);
  for (std::size_t d = 0; d < D; ++d) {
    const std::size_t G = config.genres_per_domain[d];
    std::vector<double> centroids(G * k);
    for (auto& c : centroids) c = normal(rng);
    domain_offset[d] = item_domain.size();
    for (std::size_t j = 0; j < config.items_per_domain[d]; ++j) {
      bundle.vocab.items.intern(config.domain_names[d] + "_" + padded(j, 4));
      item_domain.push_back(static_cast<Index>(d));
      const auto genre = static_cast<Index>(std::uniform_int_distribution<std::size_t>(0, G - 1)(rng));
      truth.item_genre.push_back(genre);
      for (std::size_t i = 0; i < k; ++i) {
        truth.item_latent.push_back(centroids[genre * k + i] + config.item_noise * normal(rng));
      }
    }
    truth.genre_centroids.push_back(std::move(centroids));
  }

  // Users: shared core latent, per-domain linear maps.
  truth.user_core.resize(N * k);
  for (auto& z : truth.user_core) z = normal(rng);
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(k));
  for (std::size_t d = 0; d < D; ++d) {
    std::vector<double> A(k * k);
    for (auto& a : A) a = map_scale * normal(rng);
    truth.domain_maps.push_back(std::move(A));
  }

  // Planted zero-shot sets, disjoint across domains.
  std::vector<Index> order(N);
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> zero_shot_domain(N, -1);
  truth.zero_shot_users.assign(D, {});
  {
    std::size_t cursor = 0;
    for (std::size_t d = 0; d < D; ++d) {
      const auto count = static_cast<std::size_t>(std::llround(config.zero_shot_fraction[d] * N));
      for (std::size_t i = 0; i < count && cursor < N; ++i, ++cursor) {
        zero_shot_domain[order[cursor]] = static_cast<int>(d);
        truth.zero_shot_users[d].push_back(order[cursor]);
      }
      std::sort(truth.zero_shot_users[d].begin(), truth.zero_shot_users[d].end());
    }
  }

  // Interactions: per user and domain, sample without replacement from
  // softmax(affinity / temperature) via Gumbel top-n keys.
  std::vector<Interaction> train_rows;
  std::vector<double> keys;
  std::vector<Index> candidates;
  std::vector<Interaction> picked;
  std::vector<double> domain_latent(k);
  for (std::size_t u = 0; u < N; ++u) {
    const double* z = truth.user_core.data() + u * k;
    for (std::size_t d = 0; d < D; ++d) {
      const auto& A = truth.domain_maps[d];
      for (std::size_t i = 0; i < k; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < k; ++j) row += A[i * k + j] * z[j];
        domain_latent[i] = row;
      }
      const std::size_t n_items = config.items_per_domain[d];
      const double lambda = config.interactions_per_user[d] - 1.0;
      std::size_t count = 1;
      if (lambda > 0) count += static_cast<std::size_t>(std::poisson_distribution<int>(lambda)(rng));
      count = std::min(count, n_items);

      keys.resize(n_items);
      for (std::size_t j = 0; j < n_items; ++j) {
        const double* x = truth.item_latent.data() + (domain_offset[d] + j) * k;
        double a = 0;
        for (std::size_t i = 0; i < k; ++i) a += domain_latent[i] * x[i];
        const double gumbel = -std::log(-std::log(std::max(unit(rng), 1e-300)));
        keys[j] = a / config.temperature + gumbel;
      }
      candidates.resize(n_items);
      std::iota(candidates.begin(), candidates.end(), Index{0});
      std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count),
                        candidates.end(), [&](Index a, Index b) {
                          return keys[a] != keys[b] ? keys[a] > keys[b] : a < b;
                        });

      picked.clear();
      std::uniform_int_distribution<std::int64_t> when(0, kWindowSeconds - 1);
      for (std::size_t i = 0; i < count; ++i) {
        const auto item = static_cast<Index>(domain_offset[d] + candidates[i]);
        picked.push_back({static_cast<Index>(u), {item, static_cast<Index>(d)}, kEpochStart + when(rng)});
      }
      std::stable_sort(picked.begin(), picked.end(), [](const Interaction& a, const Interaction& b) {
        return a.timestamp < b.timestamp;
      });

      std::size_t n_eval = 0;
      if (zero_shot_domain[u] == static_cast<int>(d)) {
        n_eval = count;
      } else if (count > 1) {
        n_eval = std::min(count - 1, static_cast<std::size_t>(std::floor(config.eval_fraction * count)));
      }
      const std::size_t n_train = count - n_eval;
      for (std::size_t i = 0; i < count; ++i) {
        (i < n_train ? train_rows : bundle.eval_interactions).push_back(picked[i]);
      }
    }
  }

  bundle.train = build_graph(train_rows, N, item_domain, D);

  // Knowledge graph: one entity per item, one per (domain, genre).
  const std::size_t V = item_domain.size();
  for (std::size_t v = 0; v < V; ++v) bundle.vocab.entities.intern("ent:" + bundle.vocab.items.name(static_cast<Index>(v)));
  std::vector<std::size_t> genre_offset(D);
  for (std::size_t d = 0; d < D; ++d) {
    genre_offset[d] = bundle.vocab.entities.size();
    for (std::size_t g = 0; g < config.genres_per_domain[d]; ++g) {
      bundle.vocab.entities.intern("genre:" + config.domain_names[d] + ":" + padded(g, 3));
    }
  }
  const Index has_genre = bundle.vocab.relations.intern("has_genre");
  std::vector<Index> extra_relations;
  for (std::size_t r = 0; r < config.kg_extra_relations; ++r) {
    extra_relations.push_back(bundle.vocab.relations.intern("related_" + std::to_string(r)));
  }

  bundle.links.entity_of_item.assign(V, std::nullopt);
  // members[d][g] = item indices with that genre
  std::vector<std::vector<std::vector<Index>>> members(D);
  for (std::size_t d = 0; d < D; ++d) members[d].assign(config.genres_per_domain[d], {});
  for (std::size_t v = 0; v < V; ++v) {
    const Index d = item_domain[v];
    const Index g = truth.item_genre[v];
    members[d][g].push_back(static_cast<Index>(v));
    bundle.links.entity_of_item[v] = static_cast<Index>(v);
    bundle.kg.triples.push_back({static_cast<Index>(v), has_genre, static_cast<Index>(genre_offset[d] + g)});
  }
  for (Index r : extra_relations) {
    for (std::size_t v = 0; v < V; ++v) {
      const auto& same = members[item_domain[v]][truth.item_genre[v]];
      if (same.size() < 2) continue;
      Index other = static_cast<Index>(v);
      while (other == v) other = same[std::uniform_int_distribution<std::size_t>(0, same.size() - 1)(rng)];
      bundle.kg.triples.push_back({static_cast<Index>(v), r, other});
    }
  }
  bundle.kg.num_entities = bundle.vocab.entities.size();
  bundle.kg.num_relations = bundle.vocab.relations.size();
  dedup_triples(bundle.kg);

  return {std::move(bundle), std::move(truth)};
}

void write_ground_truth(const GroundTruth& truth, const std::filesystem::path& dir) {
  nlohmann::json j;
  j["latent_dim"] = truth.latent_dim;
  j["user_core"] = truth.user_core;
  j["domain_maps"] = truth.domain_maps;
  j["item_latent"] = truth.item_latent;
  j["item_genre"] = truth.item_genre;
  j["genre_centroids"] = truth.genre_centroids;
  j["zero_shot_users"] = truth.zero_shot_users;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto path = dir / "ground_truth.json";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace kgmd
