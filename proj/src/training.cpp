#include "kgmd/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "kgmd/bundle_io.hpp"
#include "kgmd/errors.hpp"

namespace kgmd {

namespace {

constexpr int kMaxNegativeRetries = 100;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt * 0x9e3779b97f4a7c15ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Cycles through the triples in seeded shuffled order, reshuffling on wrap.
class KgBatcher {
 public:
  explicit KgBatcher(const KnowledgeGraph& kg) : kg_(kg), order_(kg.triples.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = order_.size();
  }

  std::vector<KgExample> next(std::size_t n, std::mt19937_64& rng) {
    std::vector<KgExample> out;
    if (order_.empty()) return out;
    out.reserve(n);
    while (out.size() < n) {
      if (cursor_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng);
        cursor_ = 0;
      }
      const Triple& t = kg_.triples[order_[cursor_++]];
      out.push_back({t, sample_negatives_kg(rng, kg_, t).tail});
    }
    return out;
  }

 private:
  const KnowledgeGraph& kg_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct Positive {
  Index user;
  Index item;
  Index domain;
};

void clip_gradients(GradBuffer& grads, double clip) {
  if (clip <= 0) return;
  const double norm = std::sqrt(grads.squared_norm());
  if (norm > clip) grads.scale(clip / norm);
}

[[noreturn]] void diverged(const char* what, std::size_t epoch, std::uint64_t step,
                           std::span<const RecExample> rec, std::span<const KgExample> kg) {
  std::ostringstream msg;
  msg << "non-finite " << what << " loss at epoch " << epoch << ", optimizer step " << step;
  if (!rec.empty()) {
    msg << "; batch (user,item,domain):";
    for (std::size_t i = 0; i < std::min<std::size_t>(rec.size(), 8); ++i) {
      msg << " (" << rec[i].user << "," << rec[i].positive << "," << rec[i].domain << ")";
    }
    if (rec.size() > 8) msg << " ...";
  }
  if (!kg.empty()) {
    msg << "; batch (h,r,t):";
    for (std::size_t i = 0; i < std::min<std::size_t>(kg.size(), 8); ++i) {
      msg << " (" << kg[i].triple.head << "," << kg[i].triple.relation << "," << kg[i].triple.tail << ")";
    }
    if (kg.size() > 8) msg << " ...";
  }
  throw TrainingError(msg.str());
}

}  // namespace

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::adam;
  if (text == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + std::string(text) + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (negatives == 0) throw ConfigError("train: negatives must be >= 1");
  if (!(rec_margin >= 0) || !(kge_margin >= 0)) throw ConfigError("train: margins must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("train: learning_rate must be > 0");
  if (!(kge_weight >= 0)) throw ConfigError("train: kge_weight must be >= 0");
  if (!(grad_clip >= 0)) throw ConfigError("train: grad_clip must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(epsilon > 0)) {
    throw ConfigError("train: invalid Adam hyperparameters");
  }
}

std::vector<Index> sample_negatives_rec(std::mt19937_64& rng, const InteractionGraph& graph, Index user,
                                        Index domain, std::size_t count) {
  const auto items = graph.domain_items(domain);
  if (items.size() < 2) {
    throw DataError("negative sampling needs at least two items in domain " + std::to_string(domain));
  }
  std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);
  std::vector<Index> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Index item = items[pick(rng)];
    for (int attempt = 0; attempt < kMaxNegativeRetries && graph.has_edge(user, item); ++attempt) {
      item = items[pick(rng)];
    }
    out.push_back(item);
  }
  return out;
}

Triple sample_negatives_kg(std::mt19937_64& rng, const KnowledgeGraph& kg, const Triple& triple) {
  if (kg.num_entities < 2) throw DataError("KG negative sampling needs at least two entities");
  std::uniform_int_distribution<std::size_t> pick(0, kg.num_entities - 2);
  auto tail = static_cast<Index>(pick(rng));
  if (tail >= triple.tail) ++tail;
  return {triple.head, triple.relation, tail};
}

Optimizer::Optimizer(const TrainConfig& config, const Parameters& params) : config_(config) {
  if (config_.optimizer == OptimizerKind::adam) {
    for (const Tensor* t : params.tensors()) {
      state_.first_moment.emplace_back(t->name, t->rows, t->cols, t->row_sparse);
      state_.second_moment.emplace_back(t->name, t->rows, t->cols, t->row_sparse);
    }
  }
}

Optimizer::Optimizer(const TrainConfig& config, OptimizerState state)
    : config_(config), state_(std::move(state)) {}

void Optimizer::step(Parameters& params, const GradBuffer& grads) {
  ++state_.step;
  const double lr = config_.learning_rate;
  const bool adam = config_.optimizer == OptimizerKind::adam;
  const double t = static_cast<double>(state_.step);
  const double c1 = adam ? 1.0 - std::pow(config_.beta1, t) : 1.0;
  const double c2 = adam ? 1.0 - std::pow(config_.beta2, t) : 1.0;
  const double b1 = config_.beta1, b2 = config_.beta2, eps = config_.epsilon;

  auto update = [&](double* p, const double* g, double* m, double* v, std::size_t n) {
    if (!adam) {
      for (std::size_t i = 0; i < n; ++i) p[i] -= lr * g[i];
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  };

  const auto& slots = grads.slots();
  for (Tensor* tensor : params.tensors()) {
    const auto& slot = slots.at(tensor->id);
    if (!slot.touched) continue;
    double* m = adam ? state_.first_moment.at(tensor->id).values.data() : nullptr;
    double* v = adam ? state_.second_moment.at(tensor->id).values.data() : nullptr;
    if (slot.sparse) {
      for (const auto& [r, g] : slot.rows) {
        const std::size_t off = r * tensor->cols;
        update(tensor->values.data() + off, g.data(), m ? m + off : nullptr, v ? v + off : nullptr,
               tensor->cols);
      }
    } else {
      update(tensor->values.data(), slot.values.data(), m, v, tensor->size());
    }
  }
}

void renormalize_entities(Parameters& params, const GradBuffer& grads) {
  if (params.entity.empty()) return;
  const auto& slot = grads.slots().at(params.entity.id);
  for (const auto& [r, g] : slot.rows) {
    auto row = params.entity.row(r);
    const double norm = std::sqrt(dot(row, row));
    if (norm > 0) {
      for (double& x : row) x /= norm;
    }
  }
}

Parameters initial_parameters(const DatasetBundle& bundle, const ModelConfig& model_config,
                              const TrainConfig& tc, std::optional<Index> scope) {
  const std::uint64_t salt = scope ? *scope + 1 : 0;
  return Parameters::init(model_config, ModelShape::of(bundle), mix_seed(tc.seed, 1000 + salt));
}

std::vector<TrainedModel> train(const DatasetBundle& bundle, const ModelConfig& model_config,
                                const TrainConfig& tc, const ProgressFn& progress) {
  model_config.validate();
  tc.validate();
  if (const auto violations = validate_bundle(bundle); !violations.empty()) {
    throw DataError("bundle failed validation: " + violations.front().rule + ": " +
                    violations.front().detail);
  }
  const std::string digest = vocab_digest(bundle);
  const auto entity_items = items_of_entities(bundle.links, bundle.kg.num_entities);

  std::vector<std::optional<Index>> scopes;
  if (model_config.multi_domain) {
    scopes.push_back(std::nullopt);
  } else {
    for (Index d = 0; d < bundle.domains.size(); ++d) scopes.push_back(d);
  }

  std::vector<TrainedModel> models;
  for (const auto& scope : scopes) {
    const std::uint64_t salt = scope ? *scope + 1 : 0;
    TrainedModel model{model_config,
                       tc,
                       scope,
                       digest,
                       initial_parameters(bundle, model_config, tc, scope),
                       {},
                       {}};
    std::mt19937_64 rng(mix_seed(tc.seed, 2000 + salt));
    Optimizer optimizer(tc, model.params);
    GradBuffer grads(model.params);
    KgBatcher kg_batches(bundle.kg);
    const bool kge = model_config.kge && !bundle.kg.triples.empty();
    const auto& cfg = model.config;

    std::vector<Positive> positives;
    for (const auto& e : bundle.train.edges()) {
      const Index d = bundle.train.item_domain(e.item);
      if (scope && d != *scope) continue;
      positives.push_back({e.user, e.item, d});
    }

    std::vector<RecExample> batch;
    for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
      std::shuffle(positives.begin(), positives.end(), rng);
      double rec_sum = 0, kg_sum = 0;
      std::size_t rec_n = 0, kg_n = 0;
      for (std::size_t start = 0; start < positives.size(); start += tc.batch_size) {
        const std::size_t end = std::min(positives.size(), start + tc.batch_size);
        batch.clear();
        for (std::size_t i = start; i < end; ++i) {
          const auto& p = positives[i];
          batch.push_back({p.user, p.domain, p.item,
                           sample_negatives_rec(rng, bundle.train, p.user, p.domain, tc.negatives)});
        }
        grads.clear();
        const double loss = rec_objective(batch, tc.rec_margin, cfg, model.params, bundle, &grads);
        if (!std::isfinite(loss)) diverged("recommendation", epoch, optimizer.state().step, batch, {});
        clip_gradients(grads, tc.grad_clip);
        optimizer.step(model.params, grads);
        if (tc.entity_renorm && cfg.kge) renormalize_entities(model.params, grads);
        rec_sum += loss * static_cast<double>(batch.size());
        rec_n += batch.size();

        if (!kge) continue;
        for (std::size_t r = 0; r < tc.kg_batches_per_rec_batch; ++r) {
          const auto kg_batch = kg_batches.next(tc.batch_size, rng);
          grads.clear();
          const bool active = tc.kge_weight > 0;
          const double kl = kge_objective(kg_batch, tc.kge_margin, cfg, model.params, bundle, entity_items,
                                          active ? &grads : nullptr, tc.kge_weight);
          if (!std::isfinite(kl)) diverged("KG", epoch, optimizer.state().step, {}, kg_batch);
          if (active) {
            clip_gradients(grads, tc.grad_clip);
            optimizer.step(model.params, grads);
            if (tc.entity_renorm) renormalize_entities(model.params, grads);
          }
          kg_sum += kl * static_cast<double>(kg_batch.size());
          kg_n += kg_batch.size();
        }
      }
      EpochStats stats{epoch, rec_n ? rec_sum / static_cast<double>(rec_n) : 0.0, std::nullopt};
      if (model_config.kge) stats.kge_loss = kg_n ? kg_sum / static_cast<double>(kg_n) : 0.0;
      model.history.push_back(stats);
      model.optimizer = optimizer.state();
      if (progress) progress(model, stats);
    }
    model.optimizer = optimizer.state();
    models.push_back(std::move(model));
  }
  return models;
}

TrainedModel train_transe(const KnowledgeGraph& kg, std::size_t dim, const TrainConfig& tc) {
  tc.validate();
  ModelConfig config;
  config.dim = dim;
  config.kge = true;
  config.block = InteractionBlock::none;
  DatasetBundle data;
  data.domains.push_back({0, "kg"});
  data.kg = kg;
  const ModelShape shape{0, 0, kg.num_entities, kg.num_relations, 1};
  TrainedModel model{config, tc, std::nullopt, {}, Parameters::init(config, shape, mix_seed(tc.seed, 1000)),
                     {}, {}};
  std::mt19937_64 rng(mix_seed(tc.seed, 2000));
  Optimizer optimizer(tc, model.params);
  GradBuffer grads(model.params);
  const std::vector<std::optional<Index>> no_items;

  std::vector<std::size_t> order(kg.triples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<KgExample> batch;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) {
        const Triple& t = kg.triples[order[i]];
        batch.push_back({t, sample_negatives_kg(rng, kg, t).tail});
      }
      grads.clear();
      const double loss = kge_objective(batch, tc.kge_margin, config, model.params, data, no_items, &grads);
      if (!std::isfinite(loss)) diverged("KG", epoch, optimizer.state().step, {}, batch);
      clip_gradients(grads, tc.grad_clip);
      optimizer.step(model.params, grads);
      if (tc.entity_renorm) renormalize_entities(model.params, grads);
      sum += loss * static_cast<double>(batch.size());
    }
    model.history.push_back({epoch, 0.0, order.empty() ? 0.0 : sum / static_cast<double>(order.size())});
  }
  model.optimizer = optimizer.state();
  return model;
}

std::string history_tsv(const std::vector<TrainedModel>& models, const std::vector<DomainId>& domains) {
  const bool kge = !models.empty() && models.front().config.kge;
  std::string out = kge ? "model\tepoch\trec_loss\tkge_loss\n" : "model\tepoch\trec_loss\n";
  char buf[64];
  for (const auto& m : models) {
    const std::string label = m.domain_scope ? domains.at(*m.domain_scope).name : "all";
    for (const auto& h : m.history) {
      out += label + '\t' + std::to_string(h.epoch) + '\t';
      std::snprintf(buf, sizeof(buf), "%.17g", h.rec_loss);
      out += buf;
      if (kge) {
        std::snprintf(buf, sizeof(buf), "%.17g", h.kge_loss.value_or(0.0));
        out += '\t';
        out += buf;
      }
      out += '\n';
    }
  }
  return out;
}

}  // namespace kgmd
