#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kgmd/graph_data.hpp"
#include "kgmd/tensor.hpp"

namespace kgmd {

enum class InteractionBlock { mint, cnc, none };

std::string to_string(InteractionBlock block);
InteractionBlock parse_interaction_block(std::string_view text);

/// Selects one of the model variants and its network sizes.
struct ModelConfig {
  std::size_t dim = 16;
  bool multi_domain = false;
  bool kge = false;
  bool gnn = false;
  InteractionBlock block = InteractionBlock::mint;
  std::size_t gnn_layers = 2;
  std::size_t gnn_neighbor_cap = 64;
  /// 0 selects the default (dim).
  std::size_t r_d_hidden = 0;
  /// 0 selects the default (2 * dim).
  std::size_t mint_hidden = 0;
  /// Feed the block's entity output e' into the KG loss instead of E_ent(e).
  bool kge_uses_block_output = false;
  /// Seeds the per-user neighbor subsample when |N(u)| exceeds the cap.
  std::uint64_t neighbor_seed = 0;

  std::size_t combine_hidden() const { return r_d_hidden ? r_d_hidden : dim; }
  std::size_t interaction_hidden() const { return mint_hidden ? mint_hidden : 2 * dim; }
  bool uses_block() const { return kge && block != InteractionBlock::none; }

  /// Throws ConfigError when the flags are inconsistent (gnn without multi-domain...).
  void validate() const;
  /// "base", "kge", "multd", "multd-kge", "multd-gnn" or "multd-kge-gnn".
  std::string variant_name() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Parses one of the names returned by ModelConfig::variant_name().
ModelConfig variant_config(std::string_view name);

struct ModelShape {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;
  std::size_t num_domains = 0;

  static ModelShape of(const DatasetBundle& bundle);
};

/// Two-layer perceptron: out = W2 relu(W1 x + b1) + b2.
struct Mlp {
  Tensor w1, b1, w2, b2;
};

struct CrossCompress {
  Tensor w_vv, w_ev, w_ve, w_ee, b_v, b_e;
};

struct GnnWeights {
  Tensor w_q, w_k, w_v, w_s, w_a;
};

/// Every embedding table and network weight of one model. Tensors a variant
/// does not use are left empty and are skipped by tensors().
class Parameters {
 public:
  static Parameters init(const ModelConfig& config, const ModelShape& shape, std::uint64_t seed);

  Tensor item;
  Tensor user;         // single-domain variants
  Tensor user_shared;  // multi-domain, table encoder
  std::vector<Tensor> user_domain;
  Tensor entity;
  Tensor relation;
  Tensor domain_query;  // GNN initial query per domain
  std::vector<Mlp> combine;  // R_d
  Mlp mint;
  CrossCompress cnc;
  GnnWeights gnn_shared;
  std::vector<GnnWeights> gnn_domain;

  /// Non-empty tensors in declaration order. Checkpoints, optimizer state and
  /// gradient checks all use this order.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  const Tensor* find(std::string_view name) const;

  bool operator==(const Parameters& other) const;
};

/// Gradient accumulator mirroring Parameters: sparse rows for embedding tables,
/// dense buffers for network weights.
class GradBuffer {
 public:
  GradBuffer() = default;
  explicit GradBuffer(const Parameters& params);

  std::span<double> row(const Tensor& t, std::size_t r);
  std::span<double> dense(const Tensor& t);
  void clear();

  struct Slot {
    bool sparse = false;
    bool touched = false;
    std::size_t cols = 0;
    std::map<std::size_t, std::vector<double>> rows;
    std::vector<double> values;
  };
  const std::vector<Slot>& slots() const { return slots_; }
  std::vector<Slot>& slots() { return slots_; }
  /// Value of d(loss)/d(tensor[r][c]); zero for untouched entries.
  double at(const Tensor& t, std::size_t r, std::size_t c) const;
  double squared_norm() const;
  void scale(double factor);

 private:
  std::vector<Slot> slots_;
};

/// Activation pattern (ReLU and hinge signs) seen during a forward pass; the
/// gradient check uses it to skip finite differences that straddle a kink.
using KinkTrace = std::vector<std::uint8_t>;

double score(std::span<const double> user, std::span<const double> item);
double rec_loss(double f_pos, double f_neg, double margin);
double kge_loss(double d_pos, double d_neg, double margin);
double transe_distance(Index head, Index relation, Index tail, const Parameters& params);

struct MlpCache {
  Vec input, hidden_pre, hidden, output;
};

Vec mlp_forward(const Mlp& mlp, std::span<const double> x, MlpCache* cache = nullptr,
                KinkTrace* trace = nullptr);
/// Accumulates weight gradients; adds d(loss)/d(input) into `d_input` when non-empty.
void mlp_backward(const Mlp& mlp, const MlpCache& cache, std::span<const double> d_out,
                  GradBuffer& grads, std::span<double> d_input);

struct BlockOutput {
  Vec item;    // v'
  Vec entity;  // e'
};

BlockOutput mint_forward(std::span<const double> v, std::span<const double> e, const Mlp& weights,
                         MlpCache* cache = nullptr, KinkTrace* trace = nullptr);
BlockOutput cnc_forward(std::span<const double> v, std::span<const double> e,
                        const CrossCompress& weights);

struct ItemCache {
  Index item = 0;
  std::optional<Index> entity;
  bool blocked = false;
  Vec v, e;
  MlpCache mint;
  BlockOutput out;
};

/// v' for `item`: the interaction block applied to (E_item(v), E_ent(link(v)))
/// when KG enhancement is on and the item is linked, E_item(v) otherwise.
Vec encode_item(Index item, const ModelConfig& config, const Parameters& params,
                const ItemEntityLinks& links, ItemCache* cache = nullptr, KinkTrace* trace = nullptr);
void backward_item(const ItemCache& cache, std::span<const double> d_item,
                   std::span<const double> d_entity, const ModelConfig& config,
                   const Parameters& params, GradBuffer& grads);

struct GnnLayerCache {
  Vec q_prev;
  std::vector<Vec> pre_tanh;  // tanh(W_q q + W_k x_i) per neighbor
  Vec attention;
  Vec pooled;  // sum_i alpha_i x_i
  Vec q;
};

struct GnnCache {
  std::vector<Index> neighbors;
  std::vector<Vec> x;     // E_item rows
  std::vector<Vec> keys;  // W_k x_i
  std::vector<GnnLayerCache> layers;
};

/// Additive-attention aggregation over item embeddings with initial query `q0`.
Vec gnn_forward(const GnnWeights& w, std::span<const double> q0, std::span<const Index> neighbors,
                const Tensor& item_table, std::size_t layers, GnnCache* cache = nullptr);
/// Accumulates weight and item-row gradients, returns d(loss)/d(q0).
Vec gnn_backward(const GnnWeights& w, const GnnCache& cache, std::span<const double> d_out,
                 const Tensor& item_table, GradBuffer& grads);

/// N(u), or a deterministic subsample of it when larger than the neighbor cap.
std::vector<Index> gnn_neighbors(const ModelConfig& config, const InteractionGraph& graph, Index user);

struct UserCache {
  Index user = 0;
  Index domain = 0;
  MlpCache combine;
  GnnCache shared, local;
  Vec out;
};

Vec encode_user_base(Index user, const Parameters& params);
Vec encode_user_multidomain(Index user, Index domain, const Parameters& params,
                            UserCache* cache = nullptr, KinkTrace* trace = nullptr);
Vec encode_user_gnn(Index user, Index domain, std::span<const Index> neighbors,
                    const Parameters& params, const ModelConfig& config, UserCache* cache = nullptr,
                    KinkTrace* trace = nullptr);
/// Dispatches on the variant.
Vec encode_user(Index user, Index domain, const ModelConfig& config, const Parameters& params,
                const InteractionGraph& graph, UserCache* cache = nullptr, KinkTrace* trace = nullptr);
void backward_user(const UserCache& cache, std::span<const double> d_user, const ModelConfig& config,
                   const Parameters& params, GradBuffer& grads);

struct ScoreCache {
  UserCache user;
  ItemCache item;
  double value = 0;
};

/// <M_user(u, d), M_item(v)>.
double forward_score(Index user, Index item, Index domain, const ModelConfig& config,
                     const Parameters& params, const DatasetBundle& data, ScoreCache* cache = nullptr);
/// Backpropagates `upstream` = d(loss)/d(score) through a cached score.
void backward(const ScoreCache& cache, double upstream, const ModelConfig& config,
              const Parameters& params, GradBuffer& grads);

struct RecExample {
  Index user = 0;
  Index domain = 0;
  Index positive = 0;
  std::vector<Index> negatives;
};

struct KgExample {
  Triple triple;
  Index corrupted_tail = 0;
};

/// Mean over examples of sum over negatives of rec_loss. Accumulates the
/// gradient of (scale * mean) into `grads` when given.
double rec_objective(std::span<const RecExample> batch, double margin, const ModelConfig& config,
                     const Parameters& params, const DatasetBundle& data, GradBuffer* grads,
                     double scale = 1.0, KinkTrace* trace = nullptr);

/// For each entity, the lowest-index item linked to it (used when e' feeds the KG loss).
std::vector<std::optional<Index>> items_of_entities(const ItemEntityLinks& links, std::size_t num_entities);

/// Mean kge_loss over the batch; gradient of (scale * mean) goes into `grads`.
double kge_objective(std::span<const KgExample> batch, double margin, const ModelConfig& config,
                     const Parameters& params, const DatasetBundle& data,
                     std::span<const std::optional<Index>> entity_items, GradBuffer* grads,
                     double scale = 1.0, KinkTrace* trace = nullptr);

}  // namespace kgmd
