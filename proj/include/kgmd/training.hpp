#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kgmd/graph_data.hpp"
#include "kgmd/model.hpp"

namespace kgmd {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  std::size_t negatives = 4;
  double rec_margin = 1.0;  // gamma_1
  double kge_margin = 1.0;  // gamma_2
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// KG batches run after every recommendation batch.
  std::size_t kg_batches_per_rec_batch = 1;
  double kge_weight = 1.0;
  bool entity_renorm = true;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Up to 100 rejection rounds per draw against the user's train positives in
/// `domain`; after that the last draw is accepted as is.
std::vector<Index> sample_negatives_rec(std::mt19937_64& rng, const InteractionGraph& graph, Index user,
                                        Index domain, std::size_t count);

/// Replaces the tail with an entity drawn uniformly from E \ {t}.
Triple sample_negatives_kg(std::mt19937_64& rng, const KnowledgeGraph& kg, const Triple& triple);

/// Adam moments (empty for SGD) plus the global step counter.
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  bool operator==(const OptimizerState&) const = default;
};

/// Sparse-aware optimizer: embedding rows are only updated when they carry a
/// gradient in the current batch; dense tensors when any gradient reached them.
class Optimizer {
 public:
  Optimizer(const TrainConfig& config, const Parameters& params);
  Optimizer(const TrainConfig& config, OptimizerState state);

  void step(Parameters& params, const GradBuffer& grads);
  const OptimizerState& state() const { return state_; }

 private:
  TrainConfig config_;
  OptimizerState state_;
};

/// Rescales the entity rows touched by `grads` to unit L2 norm.
void renormalize_entities(Parameters& params, const GradBuffer& grads);

struct EpochStats {
  std::size_t epoch = 0;
  double rec_loss = 0.0;
  std::optional<double> kge_loss;

  bool operator==(const EpochStats&) const = default;
};

/// One trained model. Single-domain variants produce one per domain, each
/// scoped to that domain.
struct TrainedModel {
  ModelConfig config;
  TrainConfig train;
  std::optional<Index> domain_scope;
  std::string vocab_digest;
  Parameters params;
  OptimizerState optimizer;
  std::vector<EpochStats> history;
};

/// Parameters a training run starts from for the model scoped to `scope`
/// (nullopt for multi-domain variants).
Parameters initial_parameters(const DatasetBundle& bundle, const ModelConfig& model_config,
                              const TrainConfig& train_config, std::optional<Index> scope);

using ProgressFn = std::function<void(const TrainedModel&, const EpochStats&)>;

/// Multi-task training: every recommendation batch is followed by
/// `kg_batches_per_rec_batch` TransE batches when KG enhancement is on.
std::vector<TrainedModel> train(const DatasetBundle& bundle, const ModelConfig& model_config,
                                const TrainConfig& train_config, const ProgressFn& progress = {});

/// TransE-only training on a knowledge graph (no recommendation task).
TrainedModel train_transe(const KnowledgeGraph& kg, std::size_t dim, const TrainConfig& train_config);

/// History as TSV: `model<TAB>epoch<TAB>rec_loss<TAB>kge_loss`.
std::string history_tsv(const std::vector<TrainedModel>& models, const std::vector<DomainId>& domains);

}  // namespace kgmd
