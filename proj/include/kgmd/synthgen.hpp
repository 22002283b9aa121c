#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "kgmd/graph_data.hpp"

namespace kgmd {

/// Knobs of the synthetic multi-domain generator. Per-domain vectors must all
/// have one entry per domain name.
struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t num_users = 2000;
  std::vector<std::string> domain_names{"music", "video", "books"};
  std::vector<std::size_t> items_per_domain{500, 600, 100};
  std::vector<std::size_t> genres_per_domain{10, 10, 10};
  std::size_t latent_dim = 8;
  /// Softmax temperature over user-item affinities.
  double temperature = 1.0;
  /// Mean interactions per user per domain (each user gets at least one).
  std::vector<double> interactions_per_user{5.0, 4.0, 1.6};
  /// Fraction of users whose whole history in a domain is held out. The
  /// planted sets are disjoint across domains, so the fractions must sum to <= 1.
  std::vector<double> zero_shot_fraction{0.1, 0.1, 0.1};
  /// Per (user, domain), the latest fraction of interactions goes to eval.
  double eval_fraction = 0.2;
  std::size_t kg_extra_relations = 2;
  /// Standard deviation of item latents around their genre centroid.
  double item_noise = 0.5;

  /// Throws ConfigError on violated invariants.
  void validate() const;
};

struct GroundTruth {
  std::size_t latent_dim = 0;
  /// num_users x k, row-major.
  std::vector<double> user_core;
  /// One k x k row-major map per domain; domain latent = map * core.
  std::vector<std::vector<double>> domain_maps;
  /// num_items x k, row-major.
  std::vector<double> item_latent;
  std::vector<Index> item_genre;
  /// Per domain, genre centroid matrices (genres x k).
  std::vector<std::vector<double>> genre_centroids;
  /// Per domain, the planted zero-shot users (sorted).
  std::vector<std::vector<Index>> zero_shot_users;
};

/// True affinity <A_d z_u, x_v> used to sample interactions.
double affinity(const GroundTruth& truth, Index user, Index item, Index domain);

std::pair<DatasetBundle, GroundTruth> generate(const SynthConfig& config);

void write_ground_truth(const GroundTruth& truth, const std::filesystem::path& dir);

}  // namespace kgmd
