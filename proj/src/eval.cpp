#include "kgmd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "kgmd/bundle_io.hpp"
#include "kgmd/checkpoint.hpp"
#include "kgmd/digest.hpp"
#include "kgmd/errors.hpp"

namespace kgmd {

namespace {

void insert_sorted(std::vector<Index>& v, Index x) {
  auto it = std::lower_bound(v.begin(), v.end(), x);
  if (it == v.end() || *it != x) v.insert(it, x);
}

bool contains(std::span<const Index> sorted, Index x) { return std::binary_search(sorted.begin(), sorted.end(), x); }

std::size_t position_in_domain(const DatasetBundle& bundle, Index domain, Index item) {
  const auto items = bundle.train.domain_items(domain);
  auto it = std::lower_bound(items.begin(), items.end(), item);
  if (it == items.end() || *it != item) {
    throw DataError("item " + std::to_string(item) + " is not in domain " + std::to_string(domain));
  }
  return static_cast<std::size_t>(it - items.begin());
}

// Rank of position `target` when `excluded` (sorted item ids) are removed.
std::pair<std::size_t, std::size_t> rank_in(std::span<const double> scores, std::span<const Index> items,
                                            std::size_t target, std::span<const Index> excluded) {
  const double s = scores[target];
  std::size_t above = 0, candidates = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i != target && contains(excluded, items[i])) continue;
    ++candidates;
    if (i != target && scores[i] >= s) ++above;
  }
  return {1 + above, candidates};
}

SliceMetrics summarize(const std::vector<std::size_t>& ranks, std::span<const std::size_t> ks) {
  SliceMetrics m;
  m.count = ranks.size();
  if (ranks.empty()) return m;
  m.mrr = mrr(ranks);
  for (std::size_t k : ks) m.hits.push_back(hits_at_k(ranks, k));
  return m;
}

SliceReport build_slice(const std::vector<std::vector<std::size_t>>& per_domain, std::span<const std::size_t> ks,
                        bool pooled) {
  SliceReport slice;
  std::vector<std::size_t> all;
  for (const auto& ranks : per_domain) {
    slice.domains.push_back(summarize(ranks, ks));
    all.insert(all.end(), ranks.begin(), ranks.end());
  }
  if (!pooled) return slice;
  slice.all = summarize(all, ks);
  SliceMetrics macro;
  std::size_t non_empty = 0;
  macro.hits.assign(ks.size(), 0.0);
  for (const auto& d : slice.domains) {
    if (d.empty()) continue;
    ++non_empty;
    macro.count += d.count;
    macro.mrr += d.mrr;
    for (std::size_t i = 0; i < ks.size(); ++i) macro.hits[i] += d.hits[i];
  }
  if (non_empty > 0) {
    macro.mrr /= static_cast<double>(non_empty);
    for (double& h : macro.hits) h /= static_cast<double>(non_empty);
  } else {
    macro.hits.clear();
  }
  slice.all_macro = macro;
  return slice;
}

}  // namespace

void EvalConfig::validate() const {
  if (ks.empty()) throw ConfigError("eval: at least one K is required");
  for (std::size_t k : ks) {
    if (k == 0) throw ConfigError("eval: K values must be >= 1");
  }
}

Scorer::Scorer(std::span<const TrainedModel> models, const DatasetBundle& bundle)
    : bundle_(bundle), by_domain_(bundle.domains.size(), nullptr), items_(bundle.domains.size()) {
  const std::string digest = vocab_digest(bundle);
  for (const auto& m : models) {
    if (m.vocab_digest != digest) {
      throw DataError("model vocabulary digest " + m.vocab_digest + " does not match bundle digest " + digest);
    }
    for (Index d = 0; d < bundle.domains.size(); ++d) {
      if (!m.domain_scope || *m.domain_scope == d) by_domain_[d] = &m;
    }
  }
  for (Index d = 0; d < bundle.domains.size(); ++d) {
    const TrainedModel* m = by_domain_[d];
    if (!m) throw DataError("no model covers domain " + bundle.domains[d].name);
    for (Index v : bundle.train.domain_items(d)) {
      items_[d].push_back(encode_item(v, m->config, m->params, bundle.links));
    }
  }
}

const TrainedModel& Scorer::model_for(Index domain) const { return *by_domain_.at(domain); }

Vec Scorer::user_embedding(Index user, Index domain) const {
  const TrainedModel& m = model_for(domain);
  return encode_user(user, domain, m.config, m.params, bundle_.train);
}

std::vector<double> Scorer::scores(Index user, Index domain) const {
  const Vec u = user_embedding(user, domain);
  std::vector<double> out;
  out.reserve(items_.at(domain).size());
  for (const Vec& v : items_[domain]) out.push_back(score(u, v));
  return out;
}

std::vector<Index> filtered_items(const DatasetBundle& bundle, Index user, Index domain, FilterMode mode) {
  std::vector<Index> out;
  if (mode == FilterMode::none) return out;
  const auto train = bundle.train.adjacency(user, domain);
  out.assign(train.begin(), train.end());
  if (mode == FilterMode::train_and_eval) {
    for (const auto& e : bundle.eval_interactions) {
      if (e.user == user && e.item.domain == domain) insert_sorted(out, e.item.index);
    }
  }
  return out;
}

std::size_t filtered_rank(const Scorer& scorer, const DatasetBundle& bundle, Index user, Index target,
                          Index domain) {
  if (bundle.train.has_edge(user, target)) {
    throw DataError("eval target (" + std::to_string(user) + ", " + std::to_string(target) +
                    ") is a train positive and would be filtered out");
  }
  const auto excluded = filtered_items(bundle, user, domain, FilterMode::train_and_eval);
  const auto scores = scorer.scores(user, domain);
  return rank_in(scores, bundle.train.domain_items(domain), position_in_domain(bundle, domain, target), excluded)
      .first;
}

std::vector<std::pair<Index, double>> rank_topk(const Scorer& scorer, const DatasetBundle& bundle, Index user,
                                                Index domain, std::size_t k, FilterMode mode) {
  if (k == 0) throw std::invalid_argument("rank_topk: k must be >= 1");
  const auto excluded = filtered_items(bundle, user, domain, mode);
  const auto scores = scorer.scores(user, domain);
  const auto items = bundle.train.domain_items(domain);
  std::vector<std::pair<Index, double>> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!contains(excluded, items[i])) out.emplace_back(items[i], scores[i]);
  }
  const auto before = [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  };
  const std::size_t n = std::min(k, out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n), out.end(), before);
  out.resize(n);
  return out;
}

double mrr(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw std::invalid_argument("mrr: empty rank list");
  double s = 0;
  for (std::size_t r : ranks) {
    if (r == 0) throw std::invalid_argument("mrr: ranks must be >= 1");
    s += 1.0 / static_cast<double>(r);
  }
  return s / static_cast<double>(ranks.size());
}

double hits_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw std::invalid_argument("hits_at_k: empty rank list");
  if (k == 0) throw std::invalid_argument("hits_at_k: K must be >= 1");
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

EvalReport evaluate(const DatasetBundle& bundle, std::span<const TrainedModel> models, const EvalConfig& config) {
  config.validate();
  if (models.empty()) throw ConfigError("evaluate: no models given");
  const Scorer scorer(models, bundle);
  const std::size_t D = bundle.domains.size();

  EvalReport report;
  report.variant = models.front().config.variant_name();
  report.ks = config.ks;
  report.vocab_digest = vocab_digest(bundle);
  Fnv1a model_digest;
  for (const auto& m : models) model_digest.update_field(serialize_checkpoint(m));
  report.model_digest = model_digest.hex();
  for (const auto& d : bundle.domains) report.domain_names.push_back(d.name);

  std::map<std::pair<Index, Index>, std::vector<Index>> groups;
  for (const auto& e : bundle.eval_interactions) {
    insert_sorted(groups[{e.user, e.item.domain}], e.item.index);
  }
  std::vector<std::vector<Index>> zero_shot(D);
  for (Index d = 0; d < D; ++d) zero_shot[d] = zero_shot_users(bundle, d);

  std::vector<std::vector<std::size_t>> ranks(D), zs_ranks(D);
  for (const auto& [key, targets] : groups) {
    const auto [user, domain] = key;
    const auto train = bundle.train.adjacency(user, domain);
    std::vector<Index> excluded(train.begin(), train.end());
    for (Index t : targets) insert_sorted(excluded, t);
    const auto scores = scorer.scores(user, domain);
    const auto items = bundle.train.domain_items(domain);
    const bool zs = contains(zero_shot[domain], user);
    for (Index target : targets) {
      if (bundle.train.has_edge(user, target)) {
        throw DataError("eval target (" + std::to_string(user) + ", " + std::to_string(target) +
                        ") is a train positive");
      }
      const auto [rank, candidates] =
          rank_in(scores, items, position_in_domain(bundle, domain, target), excluded);
      ranks[domain].push_back(rank);
      if (zs) zs_ranks[domain].push_back(rank);
      report.details.push_back({user, target, domain, rank, candidates, zs});
    }
  }

  const bool pooled = models.front().config.multi_domain;
  report.general = build_slice(ranks, config.ks, pooled);
  if (config.zero_shot) report.zero_shot = build_slice(zs_ranks, config.ks, pooled);
  return report;
}

namespace {

nlohmann::json metrics_json(const SliceMetrics& m, std::span<const std::size_t> ks) {
  nlohmann::json j = {{"count", m.count}, {"empty", m.empty()}};
  if (m.empty()) {
    j["mrr"] = nullptr;
    return j;
  }
  j["mrr"] = m.mrr;
  for (std::size_t i = 0; i < ks.size() && i < m.hits.size(); ++i) {
    j["hits@" + std::to_string(ks[i])] = m.hits[i];
  }
  return j;
}

nlohmann::json slice_json(const SliceReport& s, const EvalReport& r) {
  nlohmann::json j;
  for (std::size_t d = 0; d < s.domains.size(); ++d) j["domains"][r.domain_names[d]] = metrics_json(s.domains[d], r.ks);
  if (s.all) j["all"] = metrics_json(*s.all, r.ks);
  if (s.all_macro) j["all_macro"] = metrics_json(*s.all_macro, r.ks);
  return j;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void slice_tsv(std::string& out, const std::string& slice, const std::string& domain, const SliceMetrics& m,
               std::span<const std::size_t> ks) {
  const std::string prefix = slice + '\t' + domain + '\t';
  const std::string count = std::to_string(m.count);
  if (m.empty()) {
    out += prefix + "empty\t1\t0\n";
    return;
  }
  out += prefix + "mrr\t" + fmt(m.mrr) + '\t' + count + '\n';
  for (std::size_t i = 0; i < ks.size() && i < m.hits.size(); ++i) {
    out += prefix + "hits@" + std::to_string(ks[i]) + '\t' + fmt(m.hits[i]) + '\t' + count + '\n';
  }
}

void slice_tsv(std::string& out, const std::string& name, const SliceReport& s, const EvalReport& r) {
  for (std::size_t d = 0; d < s.domains.size(); ++d) slice_tsv(out, name, r.domain_names[d], s.domains[d], r.ks);
  if (s.all) slice_tsv(out, name, "all", *s.all, r.ks);
  if (s.all_macro) slice_tsv(out, name, "all_macro", *s.all_macro, r.ks);
}

}  // namespace

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j = {{"variant", r.variant},
                      {"ks", r.ks},
                      {"vocab_digest", r.vocab_digest},
                      {"model_digest", r.model_digest},
                      {"general", slice_json(r.general, r)}};
  if (r.zero_shot) j["zero_shot"] = slice_json(*r.zero_shot, r);
  return j;
}

std::string report_tsv(const EvalReport& r) {
  std::string out = "slice\tdomain\tmetric\tvalue\tcount\n";
  slice_tsv(out, "general", r.general, r);
  if (r.zero_shot) slice_tsv(out, "zero_shot", *r.zero_shot, r);
  return out;
}

}  // namespace kgmd
