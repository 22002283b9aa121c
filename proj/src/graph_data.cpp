#include "kgmd/graph_data.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "kgmd/errors.hpp"

namespace kgmd {

Index Vocabulary::intern(std::string_view name) {
  std::string key(name);
  if (auto it = lookup_.find(key); it != lookup_.end()) return it->second;
  const auto index = static_cast<Index>(names_.size());
  names_.push_back(key);
  lookup_.emplace(std::move(key), index);
  return index;
}

std::optional<Index> Vocabulary::find(std::string_view name) const {
  if (auto it = lookup_.find(std::string(name)); it != lookup_.end()) return it->second;
  return std::nullopt;
}

std::size_t InteractionGraph::active_users(Index domain) const {
  const std::size_t d_count = num_domains();
  std::size_t n = 0;
  for (std::size_t u = 0; u < num_users_; ++u) {
    if (!adjacency_[u * d_count + domain].empty()) ++n;
  }
  return n;
}

std::span<const Index> InteractionGraph::adjacency(Index user, Index domain) const {
  return adjacency_.at(static_cast<std::size_t>(user) * num_domains() + domain);
}

std::span<const Index> InteractionGraph::neighbor_items(Index user) const {
  return neighbors_.at(user);
}

bool InteractionGraph::has_edge(Index user, Index item) const {
  if (user >= num_users_ || item >= item_domain_.size()) return false;
  auto adj = adjacency(user, item_domain_[item]);
  return std::binary_search(adj.begin(), adj.end(), item);
}

InteractionGraph build_graph(std::span<const Interaction> interactions, std::size_t num_users,
                             std::span<const Index> item_domain, std::size_t num_domains) {
  if (num_domains == 0) throw DataError("graph needs at least one domain");
  InteractionGraph g;
  g.num_users_ = num_users;
  g.item_domain_.assign(item_domain.begin(), item_domain.end());
  g.domain_items_.assign(num_domains, {});
  for (Index v = 0; v < g.item_domain_.size(); ++v) {
    if (g.item_domain_[v] >= num_domains) {
      throw DataError("item " + std::to_string(v) + " has out-of-range domain");
    }
    g.domain_items_[g.item_domain_[v]].push_back(v);
  }

  std::vector<Edge> edges;
  edges.reserve(interactions.size());
  for (const auto& x : interactions) {
    if (x.user >= num_users) {
      throw DataError("interaction user " + std::to_string(x.user) + " out of range");
    }
    if (x.item.index >= g.item_domain_.size()) {
      throw DataError("interaction item " + std::to_string(x.item.index) + " out of range");
    }
    if (g.item_domain_[x.item.index] != x.item.domain) {
      throw DataError("item " + std::to_string(x.item.index) + " assigned to two domains (" +
                      std::to_string(g.item_domain_[x.item.index]) + " and " +
                      std::to_string(x.item.domain) + ")");
    }
    edges.push_back({x.user, x.item.index, x.timestamp});
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.user != b.user) return a.user < b.user;
    if (a.item != b.item) return a.item < b.item;
    return a.timestamp < b.timestamp;
  });
  edges.erase(std::unique(edges.begin(), edges.end(),
                          [](const Edge& a, const Edge& b) {
                            return a.user == b.user && a.item == b.item;
                          }),
              edges.end());
  g.edges_ = std::move(edges);

  g.domain_edge_counts_.assign(num_domains, 0);
  g.adjacency_.assign(num_users * num_domains, {});
  g.neighbors_.assign(num_users, {});
  for (const auto& e : g.edges_) {
    const Index d = g.item_domain_[e.item];
    ++g.domain_edge_counts_[d];
    g.adjacency_[static_cast<std::size_t>(e.user) * num_domains + d].push_back(e.item);
    g.neighbors_[e.user].push_back(e.item);
  }
  return g;
}

InteractionGraph build_graph(std::span<const Interaction> interactions,
                             std::span<const DomainId> domains) {
  Index max_user = 0;
  Index max_item = 0;
  bool any = false;
  for (const auto& x : interactions) {
    max_user = std::max(max_user, x.user);
    max_item = std::max(max_item, x.item.index);
    any = true;
  }
  constexpr Index kUnset = ~Index{0};
  std::vector<Index> item_domain(any ? max_item + 1 : 0, kUnset);
  for (const auto& x : interactions) {
    if (x.item.domain >= domains.size()) {
      throw DataError("interaction domain " + std::to_string(x.item.domain) + " out of range");
    }
    Index& slot = item_domain[x.item.index];
    if (slot == kUnset) {
      slot = x.item.domain;
    } else if (slot != x.item.domain) {
      throw DataError("item " + std::to_string(x.item.index) + " assigned to two domains (" +
                      std::to_string(slot) + " and " + std::to_string(x.item.domain) + ")");
    }
  }
  // Items never mentioned (gaps in the index range) default to domain 0.
  for (auto& d : item_domain) {
    if (d == kUnset) d = 0;
  }
  return build_graph(interactions, any ? max_user + 1 : 0, item_domain, domains.size());
}

std::vector<ItemRef> neighbors(const InteractionGraph& graph, Index user) {
  std::vector<ItemRef> out;
  for (Index v : graph.neighbor_items(user)) out.push_back({v, graph.item_domain(v)});
  return out;
}

void dedup_triples(KnowledgeGraph& kg) {
  std::set<Triple> seen;
  std::vector<Triple> kept;
  kept.reserve(kg.triples.size());
  for (const auto& t : kg.triples) {
    if (seen.insert(t).second) kept.push_back(t);
  }
  kg.triples = std::move(kept);
}

std::size_t ItemEntityLinks::num_linked() const {
  return static_cast<std::size_t>(
      std::count_if(entity_of_item.begin(), entity_of_item.end(),
                    [](const auto& e) { return e.has_value(); }));
}

std::vector<Index> zero_shot_users(const DatasetBundle& bundle, Index domain) {
  std::set<Index> users;
  for (const auto& x : bundle.eval_interactions) {
    if (x.item.domain != domain) continue;
    if (x.user < bundle.train.num_users() && bundle.train.adjacency(x.user, domain).empty()) {
      users.insert(x.user);
    }
  }
  return {users.begin(), users.end()};
}

double sparsity(double users, double items, double edges) {
  if (users <= 0 || items <= 0) throw DataError("sparsity of an empty domain is undefined");
  return 1.0 - edges / (users * items);
}

double sparsity(const InteractionGraph& graph, Index domain) {
  if (domain >= graph.num_domains()) throw DataError("domain out of range");
  return sparsity(static_cast<double>(graph.active_users(domain)),
                  static_cast<double>(graph.domain_items(domain).size()),
                  static_cast<double>(graph.num_edges(domain)));
}

std::vector<Violation> validate_bundle(const DatasetBundle& bundle) {
  std::vector<Violation> out;
  auto add = [&out](std::string rule, std::string detail) {
    out.push_back({std::move(rule), std::move(detail)});
  };
  const auto& g = bundle.train;
  const std::size_t D = bundle.domains.size();

  if (D == 0) add("domains", "bundle has no domains");
  for (std::size_t d = 0; d < D; ++d) {
    if (bundle.domains[d].index != d) {
      add("domains", "domain '" + bundle.domains[d].name + "' has non-dense index");
    }
  }
  if (g.num_domains() != D) add("domains", "train graph domain count differs from bundle");
  if (g.num_users() != bundle.vocab.users.size()) {
    add("vocabulary", "train graph user count differs from user vocabulary");
  }
  if (g.num_items() != bundle.vocab.items.size()) {
    add("vocabulary", "train graph item count differs from item vocabulary");
  }

  std::size_t partition = 0;
  for (std::size_t d = 0; d < g.num_domains(); ++d) partition += g.num_edges(static_cast<Index>(d));
  if (partition != g.num_edges()) add("partition", "per-domain edge counts do not sum to |I|");

  std::set<std::pair<Index, Index>> eval_seen;
  for (std::size_t i = 0; i < bundle.eval_interactions.size(); ++i) {
    const auto& x = bundle.eval_interactions[i];
    const std::string where = "eval row " + std::to_string(i);
    if (x.user >= g.num_users()) {
      add("eval-range", where + ": user " + std::to_string(x.user) + " out of range");
      continue;
    }
    if (x.item.index >= g.num_items()) {
      add("eval-range", where + ": item " + std::to_string(x.item.index) + " out of range");
      continue;
    }
    if (g.item_domain(x.item.index) != x.item.domain) {
      add("item-domain", where + ": item " + std::to_string(x.item.index) +
                             " domain disagrees with catalog");
      continue;
    }
    if (g.has_edge(x.user, x.item.index)) {
      add("previously unseen", where + ": pair (" + std::to_string(x.user) + ", " +
                                   std::to_string(x.item.index) + ") already in train");
    }
    if (!eval_seen.insert({x.user, x.item.index}).second) {
      add("eval-duplicate", where + ": pair repeated in eval set");
    }
  }

  const auto& kg = bundle.kg;
  std::set<Triple> triples_seen;
  for (std::size_t i = 0; i < kg.triples.size(); ++i) {
    const auto& t = kg.triples[i];
    const std::string where = "triple " + std::to_string(i);
    if (t.head >= kg.num_entities || t.tail >= kg.num_entities) {
      add("triple-range", where + ": entity out of range");
    }
    if (t.relation >= kg.num_relations) {
      add("triple-range", where + ": relation " + std::to_string(t.relation) +
                              " out of range (|R| = " + std::to_string(kg.num_relations) + ")");
    }
    if (!triples_seen.insert(t).second) add("triple-duplicate", where + ": duplicate triple");
  }

  if (bundle.links.entity_of_item.size() > g.num_items()) {
    add("link-range", "link table longer than item vocabulary");
  }
  for (std::size_t v = 0; v < bundle.links.entity_of_item.size(); ++v) {
    const auto& e = bundle.links.entity_of_item[v];
    if (e && *e >= kg.num_entities) {
      add("link-range", "item " + std::to_string(v) + " links to out-of-range entity");
    }
  }
  return out;
}

}  // namespace kgmd
