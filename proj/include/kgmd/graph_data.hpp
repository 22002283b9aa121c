#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kgmd {

using Index = std::uint32_t;

struct DomainId {
  Index index = 0;
  std::string name;

  bool operator==(const DomainId&) const = default;
};

struct ItemRef {
  Index index = 0;
  Index domain = 0;

  auto operator<=>(const ItemRef&) const = default;
};

struct Interaction {
  Index user = 0;
  ItemRef item;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

/// Bidirectional map between opaque string ids and dense indices, assigned in
/// first-seen order.
class Vocabulary {
 public:
  Index intern(std::string_view name);
  std::optional<Index> find(std::string_view name) const;
  const std::string& name(Index index) const { return names_.at(index); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const Vocabulary& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Index> lookup_;
};

struct Vocabularies {
  Vocabulary users;
  Vocabulary items;
  Vocabulary entities;
  Vocabulary relations;

  bool operator==(const Vocabularies&) const = default;
};

struct Edge {
  Index user = 0;
  Index item = 0;
  std::int64_t timestamp = 0;
};

/// Deduplicated user-item interaction graph partitioned by item domain.
/// Immutable after construction.
class InteractionGraph {
 public:
  InteractionGraph() = default;

  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return item_domain_.size(); }
  std::size_t num_domains() const { return domain_items_.size(); }
  std::size_t num_edges() const { return edges_.size(); }
  std::size_t num_edges(Index domain) const { return domain_edge_counts_.at(domain); }
  /// Users with at least one interaction in `domain`.
  std::size_t active_users(Index domain) const;

  Index item_domain(Index item) const { return item_domain_.at(item); }
  std::span<const Index> item_domains() const { return item_domain_; }
  std::span<const Index> domain_items(Index domain) const { return domain_items_.at(domain); }
  /// Items of `domain` that `user` interacted with, ascending.
  std::span<const Index> adjacency(Index user, Index domain) const;
  /// N(u): all items of `user` across domains, ascending.
  std::span<const Index> neighbor_items(Index user) const;
  bool has_edge(Index user, Index item) const;

  /// Edges sorted by (user, item).
  std::span<const Edge> edges() const { return edges_; }

  friend InteractionGraph build_graph(std::span<const Interaction>, std::size_t,
                                      std::span<const Index>, std::size_t);

 private:
  std::size_t num_users_ = 0;
  std::vector<Index> item_domain_;
  std::vector<std::vector<Index>> domain_items_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> domain_edge_counts_;
  // adjacency_[user * D + d]
  std::vector<std::vector<Index>> adjacency_;
  std::vector<std::vector<Index>> neighbors_;
};

/// Builds the graph over a fixed item catalog (`item_domain[v]` is v's domain).
/// Each interaction's domain must agree with the catalog. Duplicate (u, v)
/// pairs collapse to one edge that keeps the earliest timestamp.
InteractionGraph build_graph(std::span<const Interaction> interactions, std::size_t num_users,
                             std::span<const Index> item_domain, std::size_t num_domains);

/// Builds the graph deriving the catalog from the interactions themselves.
InteractionGraph build_graph(std::span<const Interaction> interactions,
                             std::span<const DomainId> domains);

std::vector<ItemRef> neighbors(const InteractionGraph& graph, Index user);

struct Triple {
  Index head = 0;
  Index relation = 0;
  Index tail = 0;

  auto operator<=>(const Triple&) const = default;
};

struct KnowledgeGraph {
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;
  std::vector<Triple> triples;
};

/// Removes duplicate triples, keeping first occurrence order.
void dedup_triples(KnowledgeGraph& kg);

/// Partial item -> entity map.
struct ItemEntityLinks {
  std::vector<std::optional<Index>> entity_of_item;

  std::optional<Index> entity(Index item) const {
    return item < entity_of_item.size() ? entity_of_item[item] : std::nullopt;
  }
  std::size_t num_linked() const;
};

struct DatasetBundle {
  std::vector<DomainId> domains;
  Vocabularies vocab;
  InteractionGraph train;
  std::vector<Interaction> eval_interactions;
  KnowledgeGraph kg;
  ItemEntityLinks links;
};

/// Users evaluated in `domain` that have no training interaction in it.
/// Sorted ascending.
std::vector<Index> zero_shot_users(const DatasetBundle& bundle, Index domain);

/// 1 - |I_d| / (|U_d| * |V_d|) with |U_d| the users active in the domain.
double sparsity(const InteractionGraph& graph, Index domain);
double sparsity(double users, double items, double edges);

struct Violation {
  std::string rule;
  std::string detail;
};

std::vector<Violation> validate_bundle(const DatasetBundle& bundle);

}  // namespace kgmd
