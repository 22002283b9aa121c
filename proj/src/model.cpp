#include "kgmd/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "kgmd/errors.hpp"

namespace kgmd {

namespace {

void require_dims(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
}

Vec concat(std::span<const double> a, std::span<const double> b) {
  Vec out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Mlp make_mlp(const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out) {
  return {Tensor(prefix + ".w1", hidden, in), Tensor(prefix + ".b1", 1, hidden),
          Tensor(prefix + ".w2", out, hidden), Tensor(prefix + ".b2", 1, out)};
}

GnnWeights make_gnn(const std::string& prefix, std::size_t h) {
  return {Tensor(prefix + ".w_q", h, h), Tensor(prefix + ".w_k", h, h), Tensor(prefix + ".w_v", h, h),
          Tensor(prefix + ".w_s", h, h), Tensor(prefix + ".w_a", 1, h)};
}

template <typename TensorPtr, typename Self>
std::vector<TensorPtr> collect(Self& p) {
  std::vector<TensorPtr> out;
  auto add = [&out](auto& t) {
    if (!t.empty()) out.push_back(&t);
  };
  auto add_mlp = [&add](auto& m) {
    add(m.w1);
    add(m.b1);
    add(m.w2);
    add(m.b2);
  };
  auto add_gnn = [&add](auto& g) {
    add(g.w_q);
    add(g.w_k);
    add(g.w_v);
    add(g.w_s);
    add(g.w_a);
  };
  add(p.item);
  add(p.user);
  add(p.user_shared);
  for (auto& t : p.user_domain) add(t);
  add(p.entity);
  add(p.relation);
  add(p.domain_query);
  for (auto& m : p.combine) add_mlp(m);
  add_mlp(p.mint);
  add(p.cnc.w_vv);
  add(p.cnc.w_ev);
  add(p.cnc.w_ve);
  add(p.cnc.w_ee);
  add(p.cnc.b_v);
  add(p.cnc.b_e);
  add_gnn(p.gnn_shared);
  for (auto& g : p.gnn_domain) add_gnn(g);
  return out;
}

bool is_bias(const std::string& name) {
  const auto dot_pos = name.rfind('.');
  const std::string leaf = dot_pos == std::string::npos ? name : name.substr(dot_pos + 1);
  return leaf == "b1" || leaf == "b2" || leaf == "b_v" || leaf == "b_e";
}

}  // namespace

std::string to_string(InteractionBlock block) {
  switch (block) {
    case InteractionBlock::mint: return "mint";
    case InteractionBlock::cnc: return "cnc";
    case InteractionBlock::none: return "none";
  }
  return "?";
}

InteractionBlock parse_interaction_block(std::string_view text) {
  if (text == "mint") return InteractionBlock::mint;
  if (text == "cnc") return InteractionBlock::cnc;
  if (text == "none") return InteractionBlock::none;
  throw ConfigError("unknown interaction block '" + std::string(text) + "' (expected mint, cnc or none)");
}

void ModelConfig::validate() const {
  if (dim == 0) throw ConfigError("model: dim must be >= 1");
  if (gnn && !multi_domain) throw ConfigError("model: the GNN encoder requires multi-domain mode");
  if (gnn && gnn_layers == 0) throw ConfigError("model: gnn_layers must be >= 1");
  if (gnn_neighbor_cap == 0) throw ConfigError("model: gnn_neighbor_cap must be >= 1");
  if (kge_uses_block_output && !uses_block()) {
    throw ConfigError("model: routing e' into the KG loss needs KG enhancement with an interaction block");
  }
}

std::string ModelConfig::variant_name() const {
  std::string name = multi_domain ? "multd" : "";
  auto append = [&name](const char* part) {
    if (!name.empty()) name += '-';
    name += part;
  };
  if (kge) append("kge");
  if (gnn) append("gnn");
  return name.empty() ? "base" : name;
}

ModelConfig variant_config(std::string_view name) {
  ModelConfig c;
  if (name == "base") return c;
  if (name == "kge") {
    c.kge = true;
  } else if (name == "multd") {
    c.multi_domain = true;
  } else if (name == "multd-kge") {
    c.multi_domain = c.kge = true;
  } else if (name == "multd-gnn") {
    c.multi_domain = c.gnn = true;
  } else if (name == "multd-kge-gnn") {
    c.multi_domain = c.kge = c.gnn = true;
  } else {
    throw ConfigError("unknown model variant '" + std::string(name) + "'");
  }
  return c;
}

ModelShape ModelShape::of(const DatasetBundle& b) {
  return {b.vocab.users.size(), b.vocab.items.size(), b.kg.num_entities, b.kg.num_relations,
          b.domains.size()};
}

Parameters Parameters::init(const ModelConfig& config, const ModelShape& shape, std::uint64_t seed) {
  config.validate();
  const std::size_t h = config.dim;
  const std::size_t D = shape.num_domains;
  Parameters p;
  p.item = Tensor("item", shape.num_items, h, true);
  if (!config.multi_domain) {
    p.user = Tensor("user", shape.num_users, h, true);
  } else if (!config.gnn) {
    p.user_shared = Tensor("user_shared", shape.num_users, h, true);
    for (std::size_t d = 0; d < D; ++d) {
      p.user_domain.emplace_back("user_domain." + std::to_string(d), shape.num_users, h, true);
    }
  }
  if (config.kge) {
    p.entity = Tensor("entity", shape.num_entities, h, true);
    p.relation = Tensor("relation", shape.num_relations, h, true);
  }
  if (config.gnn) p.domain_query = Tensor("domain_query", D, h, true);
  if (config.multi_domain) {
    for (std::size_t d = 0; d < D; ++d) {
      p.combine.push_back(make_mlp("combine." + std::to_string(d), 2 * h, config.combine_hidden(), h));
    }
  }
  if (config.kge && config.block == InteractionBlock::mint) {
    p.mint = make_mlp("mint", 2 * h, config.interaction_hidden(), 2 * h);
  }
  if (config.kge && config.block == InteractionBlock::cnc) {
    p.cnc = {Tensor("cnc.w_vv", 1, h), Tensor("cnc.w_ev", 1, h), Tensor("cnc.w_ve", 1, h),
             Tensor("cnc.w_ee", 1, h), Tensor("cnc.b_v", 1, h),  Tensor("cnc.b_e", 1, h)};
  }
  if (config.gnn) {
    p.gnn_shared = make_gnn("gnn.shared", h);
    for (std::size_t d = 0; d < D; ++d) p.gnn_domain.push_back(make_gnn("gnn." + std::to_string(d), h));
  }

  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  std::size_t id = 0;
  for (Tensor* t : p.tensors()) {
    t->id = id++;
    if (is_bias(t->name)) continue;
    for (auto& x : t->values) x = uniform(rng);
  }
  return p;
}

std::vector<Tensor*> Parameters::tensors() { return collect<Tensor*>(*this); }
std::vector<const Tensor*> Parameters::tensors() const { return collect<const Tensor*>(*this); }

const Tensor* Parameters::find(std::string_view name) const {
  for (const Tensor* t : tensors()) {
    if (t->name == name) return t;
  }
  return nullptr;
}

bool Parameters::operator==(const Parameters& other) const {
  const auto a = tensors();
  const auto b = other.tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(*a[i] == *b[i])) return false;
  }
  return true;
}

GradBuffer::GradBuffer(const Parameters& params) {
  for (const Tensor* t : params.tensors()) {
    if (t->id >= slots_.size()) slots_.resize(t->id + 1);
    Slot& s = slots_[t->id];
    s.sparse = t->row_sparse;
    s.cols = t->cols;
    if (!s.sparse) s.values.assign(t->size(), 0.0);
  }
}

std::span<double> GradBuffer::row(const Tensor& t, std::size_t r) {
  Slot& s = slots_.at(t.id);
  s.touched = true;
  if (s.sparse) {
    auto [it, inserted] = s.rows.try_emplace(r);
    if (inserted) it->second.assign(t.cols, 0.0);
    return it->second;
  }
  return {s.values.data() + r * t.cols, t.cols};
}

std::span<double> GradBuffer::dense(const Tensor& t) {
  Slot& s = slots_.at(t.id);
  if (s.sparse) throw std::logic_error("dense gradient requested for sparse tensor " + t.name);
  s.touched = true;
  return s.values;
}

void GradBuffer::clear() {
  for (auto& s : slots_) {
    if (!s.touched) continue;
    s.rows.clear();
    std::fill(s.values.begin(), s.values.end(), 0.0);
    s.touched = false;
  }
}

double GradBuffer::at(const Tensor& t, std::size_t r, std::size_t c) const {
  const Slot& s = slots_.at(t.id);
  if (s.sparse) {
    auto it = s.rows.find(r);
    return it == s.rows.end() ? 0.0 : it->second[c];
  }
  return s.values[r * t.cols + c];
}

double GradBuffer::squared_norm() const {
  double total = 0;
  for (const auto& s : slots_) {
    for (const auto& [r, g] : s.rows) {
      for (double x : g) total += x * x;
    }
    for (double x : s.values) total += x * x;
  }
  return total;
}

void GradBuffer::scale(double factor) {
  for (auto& s : slots_) {
    for (auto& [r, g] : s.rows) {
      for (double& x : g) x *= factor;
    }
    for (double& x : s.values) x *= factor;
  }
}

double score(std::span<const double> user, std::span<const double> item) {
  require_dims(user, item, "score");
  return dot(user, item);
}

double rec_loss(double f_pos, double f_neg, double margin) { return std::max(0.0, f_neg - f_pos + margin); }

double kge_loss(double d_pos, double d_neg, double margin) { return std::max(0.0, d_pos - d_neg + margin); }

double transe_distance(Index head, Index relation, Index tail, const Parameters& params) {
  if (params.entity.empty()) throw std::invalid_argument("transe_distance: model has no KG tables");
  if (head >= params.entity.rows || tail >= params.entity.rows || relation >= params.relation.rows) {
    throw std::out_of_range("transe_distance: index out of range");
  }
  const auto h = params.entity.row(head);
  const auto r = params.relation.row(relation);
  const auto t = params.entity.row(tail);
  double s = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double x = h[i] + r[i] - t[i];
    s += x * x;
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Perceptron and interaction blocks

Vec mlp_forward(const Mlp& mlp, std::span<const double> x, MlpCache* cache, KinkTrace* trace) {
  if (x.size() != mlp.w1.cols) throw std::invalid_argument("mlp_forward: dimension mismatch");
  Vec pre(mlp.w1.rows);
  matvec(mlp.w1, x, mlp.b1.values, pre);
  Vec hidden(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) {
    hidden[i] = pre[i] > 0 ? pre[i] : 0.0;
    if (trace) trace->push_back(pre[i] > 0);
  }
  Vec out(mlp.w2.rows);
  matvec(mlp.w2, hidden, mlp.b2.values, out);
  if (cache) {
    cache->input.assign(x.begin(), x.end());
    cache->hidden_pre = std::move(pre);
    cache->hidden = std::move(hidden);
    cache->output = out;
  }
  return out;
}

void mlp_backward(const Mlp& mlp, const MlpCache& cache, std::span<const double> d_out,
                  GradBuffer& grads, std::span<double> d_input) {
  add_into(grads.dense(mlp.b2), d_out);
  outer_add(grads.dense(mlp.w2), d_out, cache.hidden);
  Vec d_pre(cache.hidden.size(), 0.0);
  matvec_transposed_add(mlp.w2, d_out, d_pre);
  for (std::size_t i = 0; i < d_pre.size(); ++i) {
    if (!(cache.hidden_pre[i] > 0)) d_pre[i] = 0.0;
  }
  add_into(grads.dense(mlp.b1), d_pre);
  outer_add(grads.dense(mlp.w1), d_pre, cache.input);
  if (!d_input.empty()) matvec_transposed_add(mlp.w1, d_pre, d_input);
}

BlockOutput mint_forward(std::span<const double> v, std::span<const double> e, const Mlp& weights,
                         MlpCache* cache, KinkTrace* trace) {
  require_dims(v, e, "mint_forward");
  if (weights.w2.rows != 2 * v.size()) throw std::invalid_argument("mint_forward: dimension mismatch");
  const Vec out = mlp_forward(weights, concat(v, e), cache, trace);
  const auto h = static_cast<std::ptrdiff_t>(v.size());
  return {Vec(out.begin(), out.begin() + h), Vec(out.begin() + h, out.end())};
}

BlockOutput cnc_forward(std::span<const double> v, std::span<const double> e, const CrossCompress& w) {
  require_dims(v, e, "cnc_forward");
  if (w.w_vv.cols != v.size()) throw std::invalid_argument("cnc_forward: dimension mismatch");
  // C = v e^T, so C w = v (e.w) and C^T w = e (v.w).
  const double s_vv = dot(e, w.w_vv.values);
  const double s_ev = dot(v, w.w_ev.values);
  const double s_ve = dot(e, w.w_ve.values);
  const double s_ee = dot(v, w.w_ee.values);
  BlockOutput out{Vec(v.size()), Vec(v.size())};
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.item[i] = v[i] * s_vv + e[i] * s_ev + w.b_v.values[i];
    out.entity[i] = v[i] * s_ve + e[i] * s_ee + w.b_e.values[i];
  }
  return out;
}

Vec encode_item(Index item, const ModelConfig& config, const Parameters& params,
                const ItemEntityLinks& links, ItemCache* cache, KinkTrace* trace) {
  const auto row = params.item.row(item);
  std::optional<Index> entity = config.uses_block() ? links.entity(item) : std::nullopt;
  if (!entity) {
    if (cache) {
      cache->item = item;
      cache->entity.reset();
      cache->blocked = false;
      cache->v.assign(row.begin(), row.end());
      cache->out.item = cache->v;
    }
    return {row.begin(), row.end()};
  }
  const auto erow = params.entity.row(*entity);
  BlockOutput out = config.block == InteractionBlock::mint
                        ? mint_forward(row, erow, params.mint, cache ? &cache->mint : nullptr, trace)
                        : cnc_forward(row, erow, params.cnc);
  if (cache) {
    cache->item = item;
    cache->entity = entity;
    cache->blocked = true;
    cache->v.assign(row.begin(), row.end());
    cache->e.assign(erow.begin(), erow.end());
    cache->out = out;
  }
  return out.item;
}

void backward_item(const ItemCache& cache, std::span<const double> d_item,
                   std::span<const double> d_entity, const ModelConfig& config,
                   const Parameters& params, GradBuffer& grads) {
  if (!cache.blocked) {
    if (!d_item.empty()) add_into(grads.row(params.item, cache.item), d_item);
    return;
  }
  const std::size_t h = cache.v.size();
  Vec dv(h, 0.0), de(h, 0.0);
  if (config.block == InteractionBlock::mint) {
    Vec d_out(2 * h, 0.0);
    if (!d_item.empty()) std::copy(d_item.begin(), d_item.end(), d_out.begin());
    if (!d_entity.empty()) std::copy(d_entity.begin(), d_entity.end(), d_out.begin() + static_cast<std::ptrdiff_t>(h));
    Vec dx(2 * h, 0.0);
    mlp_backward(params.mint, cache.mint, d_out, grads, dx);
    std::copy(dx.begin(), dx.begin() + static_cast<std::ptrdiff_t>(h), dv.begin());
    std::copy(dx.begin() + static_cast<std::ptrdiff_t>(h), dx.end(), de.begin());
  } else {
    const auto& w = params.cnc;
    const auto& v = cache.v;
    const auto& e = cache.e;
    auto side = [&](std::span<const double> g, const Tensor& w_from_e, const Tensor& w_from_v,
                    const Tensor& bias) {
      // out = v (e.w_from_e) + e (v.w_from_v) + bias
      const double s1 = dot(e, w_from_e.values);
      const double s2 = dot(v, w_from_v.values);
      const double gv = dot(g, v);
      const double ge = dot(g, e);
      for (std::size_t i = 0; i < h; ++i) {
        dv[i] += g[i] * s1 + w_from_v.values[i] * ge;
        de[i] += w_from_e.values[i] * gv + g[i] * s2;
      }
      axpy(gv, e, grads.dense(w_from_e));
      axpy(ge, v, grads.dense(w_from_v));
      add_into(grads.dense(bias), g);
    };
    if (!d_item.empty()) side(d_item, w.w_vv, w.w_ev, w.b_v);
    if (!d_entity.empty()) side(d_entity, w.w_ve, w.w_ee, w.b_e);
  }
  add_into(grads.row(params.item, cache.item), dv);
  add_into(grads.row(params.entity, *cache.entity), de);
}

// ---------------------------------------------------------------------------
// GNN user encoder

Vec gnn_forward(const GnnWeights& w, std::span<const double> q0, std::span<const Index> neighbors,
                const Tensor& item_table, std::size_t layers, GnnCache* cache) {
  const std::size_t h = q0.size();
  const std::size_t n = neighbors.size();
  std::vector<Vec> x(n), keys(n, Vec(h));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = item_table.row(neighbors[i]);
    x[i].assign(row.begin(), row.end());
    matvec(w.w_k, x[i], {}, keys[i]);
  }
  Vec q(q0.begin(), q0.end());
  if (cache) {
    cache->neighbors.assign(neighbors.begin(), neighbors.end());
    cache->layers.clear();
  }
  Vec base(h), m(h), s(n), z(h);
  for (std::size_t l = 0; l < layers; ++l) {
    GnnLayerCache lc;
    std::fill(m.begin(), m.end(), 0.0);
    if (n > 0) {
      matvec(w.w_q, q, {}, base);
      lc.pre_tanh.assign(n, Vec(h));
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < h; ++j) lc.pre_tanh[i][j] = std::tanh(base[j] + keys[i][j]);
        s[i] = dot(w.w_a.values, lc.pre_tanh[i]);
      }
      const double top = *std::max_element(s.begin(), s.end());
      lc.attention.resize(n);
      double total = 0;
      for (std::size_t i = 0; i < n; ++i) total += lc.attention[i] = std::exp(s[i] - top);
      for (auto& a : lc.attention) a /= total;
      lc.pooled.assign(h, 0.0);
      for (std::size_t i = 0; i < n; ++i) axpy(lc.attention[i], x[i], lc.pooled);
      matvec(w.w_v, lc.pooled, {}, m);
    }
    matvec(w.w_s, q, {}, z);
    Vec next(h);
    for (std::size_t j = 0; j < h; ++j) next[j] = std::tanh(z[j] + m[j]);
    if (cache) {
      lc.q_prev = q;
      lc.q = next;
      cache->layers.push_back(std::move(lc));
    }
    q = std::move(next);
  }
  if (cache) {
    cache->x = std::move(x);
    cache->keys = std::move(keys);
  }
  return q;
}

Vec gnn_backward(const GnnWeights& w, const GnnCache& cache, std::span<const double> d_out,
                 const Tensor& item_table, GradBuffer& grads) {
  const std::size_t h = d_out.size();
  const std::size_t n = cache.neighbors.size();
  Vec dq(d_out.begin(), d_out.end());
  std::vector<Vec> d_keys(n, Vec(h, 0.0)), dx(n, Vec(h, 0.0));
  auto g_ws = grads.dense(w.w_s);
  for (std::size_t l = cache.layers.size(); l-- > 0;) {
    const GnnLayerCache& lc = cache.layers[l];
    Vec dz(h);
    for (std::size_t j = 0; j < h; ++j) dz[j] = dq[j] * (1.0 - lc.q[j] * lc.q[j]);
    outer_add(g_ws, dz, lc.q_prev);
    Vec dq_prev(h, 0.0);
    matvec_transposed_add(w.w_s, dz, dq_prev);
    if (n > 0) {
      outer_add(grads.dense(w.w_v), dz, lc.pooled);
      Vec d_pooled(h, 0.0);
      matvec_transposed_add(w.w_v, dz, d_pooled);
      Vec d_alpha(n);
      double mean = 0;
      for (std::size_t i = 0; i < n; ++i) {
        d_alpha[i] = dot(d_pooled, cache.x[i]);
        mean += lc.attention[i] * d_alpha[i];
        axpy(lc.attention[i], d_pooled, dx[i]);
      }
      Vec d_base(h, 0.0);
      auto g_wa = grads.dense(w.w_a);
      for (std::size_t i = 0; i < n; ++i) {
        const double ds = lc.attention[i] * (d_alpha[i] - mean);
        if (ds == 0.0) continue;
        const Vec& t = lc.pre_tanh[i];
        axpy(ds, t, g_wa);
        for (std::size_t j = 0; j < h; ++j) {
          const double dpre = ds * w.w_a.values[j] * (1.0 - t[j] * t[j]);
          d_base[j] += dpre;
          d_keys[i][j] += dpre;
        }
      }
      outer_add(grads.dense(w.w_q), d_base, lc.q_prev);
      matvec_transposed_add(w.w_q, d_base, dq_prev);
    }
    dq = std::move(dq_prev);
  }
  if (n > 0) {
    auto g_wk = grads.dense(w.w_k);
    for (std::size_t i = 0; i < n; ++i) {
      outer_add(g_wk, d_keys[i], cache.x[i]);
      matvec_transposed_add(w.w_k, d_keys[i], dx[i]);
      add_into(grads.row(item_table, cache.neighbors[i]), dx[i]);
    }
  }
  return dq;
}

std::vector<Index> gnn_neighbors(const ModelConfig& config, const InteractionGraph& graph, Index user) {
  const auto all = graph.neighbor_items(user);
  std::vector<Index> out(all.begin(), all.end());
  if (out.size() <= config.gnn_neighbor_cap) return out;
  std::mt19937_64 rng(splitmix64(config.neighbor_seed ^ splitmix64(user)));
  for (std::size_t i = 0; i < config.gnn_neighbor_cap; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, out.size() - 1);
    std::swap(out[i], out[pick(rng)]);
  }
  out.resize(config.gnn_neighbor_cap);
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// User encoders

Vec encode_user_base(Index user, const Parameters& params) {
  const auto row = params.user.row(user);
  return {row.begin(), row.end()};
}

Vec encode_user_multidomain(Index user, Index domain, const Parameters& params, UserCache* cache,
                            KinkTrace* trace) {
  const Vec x = concat(params.user_shared.row(user), params.user_domain.at(domain).row(user));
  Vec out = mlp_forward(params.combine.at(domain), x, cache ? &cache->combine : nullptr, trace);
  if (cache) {
    cache->user = user;
    cache->domain = domain;
    cache->out = out;
  }
  return out;
}

Vec encode_user_gnn(Index user, Index domain, std::span<const Index> neighbors, const Parameters& params,
                    const ModelConfig& config, UserCache* cache, KinkTrace* trace) {
  const auto q0 = params.domain_query.row(domain);
  const Vec shared = gnn_forward(params.gnn_shared, q0, neighbors, params.item, config.gnn_layers,
                                 cache ? &cache->shared : nullptr);
  const Vec local = gnn_forward(params.gnn_domain.at(domain), q0, neighbors, params.item,
                                config.gnn_layers, cache ? &cache->local : nullptr);
  Vec out = mlp_forward(params.combine.at(domain), concat(shared, local),
                        cache ? &cache->combine : nullptr, trace);
  if (cache) {
    cache->user = user;
    cache->domain = domain;
    cache->out = out;
  }
  return out;
}

Vec encode_user(Index user, Index domain, const ModelConfig& config, const Parameters& params,
                const InteractionGraph& graph, UserCache* cache, KinkTrace* trace) {
  if (!config.multi_domain) {
    Vec out = encode_user_base(user, params);
    if (cache) {
      cache->user = user;
      cache->domain = domain;
      cache->out = out;
    }
    return out;
  }
  if (!config.gnn) return encode_user_multidomain(user, domain, params, cache, trace);
  const auto nbrs = gnn_neighbors(config, graph, user);
  return encode_user_gnn(user, domain, nbrs, params, config, cache, trace);
}

void backward_user(const UserCache& cache, std::span<const double> d_user, const ModelConfig& config,
                   const Parameters& params, GradBuffer& grads) {
  if (!config.multi_domain) {
    add_into(grads.row(params.user, cache.user), d_user);
    return;
  }
  const std::size_t h = config.dim;
  Vec dx(2 * h, 0.0);
  mlp_backward(params.combine.at(cache.domain), cache.combine, d_user, grads, dx);
  const std::span<const double> d_first(dx.data(), h);
  const std::span<const double> d_second(dx.data() + h, h);
  if (!config.gnn) {
    add_into(grads.row(params.user_shared, cache.user), d_first);
    add_into(grads.row(params.user_domain.at(cache.domain), cache.user), d_second);
    return;
  }
  Vec dq = gnn_backward(params.gnn_shared, cache.shared, d_first, params.item, grads);
  const Vec dq_local = gnn_backward(params.gnn_domain.at(cache.domain), cache.local, d_second, params.item, grads);
  add_into(dq, dq_local);
  add_into(grads.row(params.domain_query, cache.domain), dq);
}

// ---------------------------------------------------------------------------
// Scores and objectives

double forward_score(Index user, Index item, Index domain, const ModelConfig& config,
                     const Parameters& params, const DatasetBundle& data, ScoreCache* cache) {
  const Vec u = encode_user(user, domain, config, params, data.train, cache ? &cache->user : nullptr);
  const Vec v = encode_item(item, config, params, data.links, cache ? &cache->item : nullptr);
  const double value = score(u, v);
  if (cache) cache->value = value;
  return value;
}

void backward(const ScoreCache& cache, double upstream, const ModelConfig& config,
              const Parameters& params, GradBuffer& grads) {
  if (upstream == 0.0) return;
  Vec d_user(cache.item.out.item.size()), d_item(cache.user.out.size());
  for (std::size_t i = 0; i < d_user.size(); ++i) {
    d_user[i] = upstream * cache.item.out.item[i];
    d_item[i] = upstream * cache.user.out[i];
  }
  backward_user(cache.user, d_user, config, params, grads);
  backward_item(cache.item, d_item, {}, config, params, grads);
}

double rec_objective(std::span<const RecExample> batch, double margin, const ModelConfig& config,
                     const Parameters& params, const DatasetBundle& data, GradBuffer* grads,
                     double scale, KinkTrace* trace) {
  if (batch.empty()) return 0.0;
  const double coef = scale / static_cast<double>(batch.size());
  double total = 0;
  UserCache user_cache;
  ItemCache pos_cache, neg_cache;
  for (const auto& ex : batch) {
    const Vec u = encode_user(ex.user, ex.domain, config, params, data.train,
                              grads ? &user_cache : nullptr, trace);
    const Vec vp = encode_item(ex.positive, config, params, data.links, grads ? &pos_cache : nullptr, trace);
    const double f_pos = dot(u, vp);
    Vec du(u.size(), 0.0), dvp(u.size(), 0.0), dvn(u.size());
    bool any_active = false;
    for (Index neg : ex.negatives) {
      const Vec vn = encode_item(neg, config, params, data.links, grads ? &neg_cache : nullptr, trace);
      const double arg = dot(u, vn) - f_pos + margin;
      if (trace) trace->push_back(arg > 0);
      if (!(arg > 0)) continue;
      total += arg;
      if (!grads) continue;
      any_active = true;
      for (std::size_t i = 0; i < u.size(); ++i) {
        du[i] += coef * (vn[i] - vp[i]);
        dvp[i] -= coef * u[i];
        dvn[i] = coef * u[i];
      }
      backward_item(neg_cache, dvn, {}, config, params, *grads);
    }
    if (grads && any_active) {
      backward_item(pos_cache, dvp, {}, config, params, *grads);
      backward_user(user_cache, du, config, params, *grads);
    }
  }
  return total / static_cast<double>(batch.size());
}

std::vector<std::optional<Index>> items_of_entities(const ItemEntityLinks& links, std::size_t num_entities) {
  std::vector<std::optional<Index>> out(num_entities);
  for (Index v = 0; v < links.entity_of_item.size(); ++v) {
    const auto& e = links.entity_of_item[v];
    if (e && *e < num_entities && !out[*e]) out[*e] = v;
  }
  return out;
}

double kge_objective(std::span<const KgExample> batch, double margin, const ModelConfig& config,
                     const Parameters& params, const DatasetBundle& data,
                     std::span<const std::optional<Index>> entity_items, GradBuffer* grads,
                     double scale, KinkTrace* trace) {
  if (batch.empty()) return 0.0;
  const std::size_t h = config.dim;
  const double coef = scale / static_cast<double>(batch.size());
  const bool routed = config.kge_uses_block_output;

  struct EntityView {
    Index entity = 0;
    bool via_block = false;
    ItemCache cache;
    Vec value;
  };
  auto view = [&](Index e, EntityView& out) {
    out.entity = e;
    out.via_block = routed && e < entity_items.size() && entity_items[e].has_value();
    if (out.via_block) {
      encode_item(*entity_items[e], config, params, data.links, &out.cache, trace);
      out.value = out.cache.out.entity;
    } else {
      const auto row = params.entity.row(e);
      out.value.assign(row.begin(), row.end());
    }
  };
  auto push_grad = [&](EntityView& ev, const Vec& g) {
    if (ev.via_block) {
      backward_item(ev.cache, {}, g, config, params, *grads);
    } else {
      add_into(grads->row(params.entity, ev.entity), g);
    }
  };

  double total = 0;
  EntityView head, tail, corrupt;
  Vec pos(h), neg(h);
  for (const auto& ex : batch) {
    view(ex.triple.head, head);
    view(ex.triple.tail, tail);
    view(ex.corrupted_tail, corrupt);
    const auto rel = params.relation.row(ex.triple.relation);
    for (std::size_t i = 0; i < h; ++i) {
      pos[i] = head.value[i] + rel[i] - tail.value[i];
      neg[i] = head.value[i] + rel[i] - corrupt.value[i];
    }
    const double d_pos = std::sqrt(dot(pos, pos));
    const double d_neg = std::sqrt(dot(neg, neg));
    const double arg = d_pos - d_neg + margin;
    if (trace) trace->push_back(arg > 0);
    if (!(arg > 0)) continue;
    total += arg;
    if (!grads) continue;
    Vec g_pos(h, 0.0), g_neg(h, 0.0);
    if (d_pos > 0) {
      for (std::size_t i = 0; i < h; ++i) g_pos[i] = coef * pos[i] / d_pos;
    }
    if (d_neg > 0) {
      for (std::size_t i = 0; i < h; ++i) g_neg[i] = coef * neg[i] / d_neg;
    }
    Vec g_head(h), g_tail(h), g_corrupt(h);
    for (std::size_t i = 0; i < h; ++i) {
      g_head[i] = g_pos[i] - g_neg[i];
      g_tail[i] = -g_pos[i];
      g_corrupt[i] = g_neg[i];
    }
    add_into(grads->row(params.relation, ex.triple.relation), g_head);
    push_grad(head, g_head);
    push_grad(tail, g_tail);
    push_grad(corrupt, g_corrupt);
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace kgmd
